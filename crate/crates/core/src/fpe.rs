//! Explicit finite-volume solver for the Fokker–Planck equation
//! `d rho / dt = div(rho grad H + grad(D rho))` on a periodic cell grid.
//!
//! Face fluxes use exponential fitting on `v = D rho`:
//! `J = (B(z) v_left - B(-z) v_right) / h`, `B(z) = z / (e^z - 1)`.
//! The face Péclet number `z` approximates `h * dH/dx / D` by the jump of
//! `phi = ln D - F / eps` across the face, `z = phi_left - phi_right`. Since
//! the Gibbs density makes `v` proportional to `e^phi`, the tabulated density
//! is an exact discrete equilibrium, also across kinks of a wrapped
//! potential. With no drift this is the central difference of `D rho`.

use std::io::Write;
use std::path::Path;

use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::gibbs::{fmt_float, GridDensity, GridMesh};
use crate::scalar::Scalar;

/// Bernoulli function `z / (e^z - 1)`.
pub fn bernoulli<T: Scalar>(z: T) -> T {
    if z.abs() < T::of(1e-6) {
        T::one() - z / T::of(2.0) + z * z / T::of(12.0)
    } else {
        z / z.exp_m1()
    }
}

/// Precomputed face coefficients of the discrete generator.
#[derive(Clone, Debug)]
pub struct FpeOperator<T: Scalar = f64> {
    mesh: GridMesh<T>,
    /// `neighbour[k][i]`: index of the next cell along axis `k`.
    neighbour: Vec<Vec<usize>>,
    /// Rate out of cell `i` across its upper face on axis `k`, per unit density.
    forward: Vec<Vec<T>>,
    /// Rate out of the neighbour back across the same face.
    backward: Vec<Vec<T>>,
    admissible_dt: T,
    /// Largest stable step without the positivity margin; used for diagnostics.
    stability_limit: T,
}

impl<T: Scalar> FpeOperator<T> {
    pub fn new(dynamics: &Dynamics<T>, mesh: &GridMesh<T>) -> Result<Self> {
        let dim = mesh.dim();
        if dim > 2 {
            return Err(Error::config(
                "dim",
                "the Fokker–Planck solver supports 1 and 2 dimensions",
            ));
        }
        if mesh != &GridMesh::new(dynamics.domain(), mesh.resolution())? {
            return Err(Error::MeshMismatch("grid and dynamics use different domains".into()));
        }
        let h = mesh.spacing();
        let inv_h2 = T::one() / (h * h);
        let n = mesh.cell_count();
        let res = mesh.resolution();

        let centres: Vec<Vec<T>> = (0..n).map(|i| mesh.center(i)).collect();
        let diffusion: Vec<T> = centres.iter().map(|c| dynamics.diffusion_at(c)).collect();
        if let Some(bad) = diffusion.iter().position(|d| !d.is_finite() || *d <= T::zero()) {
            return Err(Error::Numerical {
                particle: bad,
                msg: "diffusion coefficient is not finite and positive on the grid".into(),
            });
        }

        let mut neighbour = vec![vec![0usize; n]; dim];
        let mut forward = vec![vec![T::zero(); n]; dim];
        let mut backward = vec![vec![T::zero(); n]; dim];
        let mut max_drift = T::zero();
        let mut max_out = T::zero();
        let mut out_rate = vec![T::zero(); n];
        let eps = dynamics.eps();
        let phi: Vec<T> = centres
            .iter()
            .map(|c| dynamics.log_diffusion_at(c) - dynamics.potential().eval_wrapped(c) / eps)
            .collect();
        for k in 0..dim {
            let stride = res.pow((dim - 1 - k) as u32);
            for i in 0..n {
                let along = (i / stride) % res;
                let j = if along + 1 == res {
                    i + stride - res * stride
                } else {
                    i + stride
                };
                neighbour[k][i] = j;
                // The derivative-free drift vanishes identically; keep it exact.
                let z = if dynamics.is_derivative_free() {
                    T::zero()
                } else {
                    phi[i] - phi[j]
                };
                max_drift = max_drift.max(z.abs() * diffusion[i].max(diffusion[j]) / h);
                forward[k][i] = bernoulli(z) * diffusion[i] * inv_h2;
                backward[k][i] = bernoulli(-z) * diffusion[j] * inv_h2;
                out_rate[i] = out_rate[i] + forward[k][i];
                out_rate[j] = out_rate[j] + backward[k][i];
            }
        }
        for r in &out_rate {
            max_out = max_out.max(*r);
        }
        let max_d = diffusion.iter().copied().fold(T::zero(), T::max);
        let diffusive = T::of(0.4) * h * h / (T::of(2.0 * dim as f64) * max_d);
        let advective = if max_drift > T::zero() {
            T::of(0.4) * h / max_drift
        } else {
            T::infinity()
        };
        let positive = T::of(0.9) / max_out;
        Ok(Self {
            mesh: mesh.clone(),
            neighbour,
            forward,
            backward,
            admissible_dt: diffusive.min(advective).min(positive),
            stability_limit: T::one() / max_out,
        })
    }

    pub fn mesh(&self) -> &GridMesh<T> {
        &self.mesh
    }

    /// Largest step accepted by [`fpe_step`].
    pub fn admissible_dt(&self) -> T {
        self.admissible_dt
    }

    pub fn stability_limit(&self) -> T {
        self.stability_limit
    }

    /// `d rho / dt` of the discrete scheme.
    pub fn apply(&self, rho: &[T], out: &mut [T]) {
        out.iter_mut().for_each(|o| *o = T::zero());
        for k in 0..self.forward.len() {
            let (nb, fw, bw) = (&self.neighbour[k], &self.forward[k], &self.backward[k]);
            for i in 0..rho.len() {
                let j = nb[i];
                let flux = fw[i] * rho[i] - bw[i] * rho[j];
                out[i] = out[i] - flux;
                out[j] = out[j] + flux;
            }
        }
    }

    /// L1 norm of one explicit step's change, `||rho(dt) - rho(0)||_1`.
    pub fn step_residual(&self, density: &GridDensity<T>, dt: T) -> Result<T> {
        self.check_mesh(density)?;
        let mut rate = vec![T::zero(); density.values.len()];
        self.apply(&density.values, &mut rate);
        let vol = self.mesh.cell_volume();
        Ok(rate.iter().map(|r| (*r * dt).abs() * vol).sum())
    }

    fn check_mesh(&self, density: &GridDensity<T>) -> Result<()> {
        if density.mesh != self.mesh {
            return Err(Error::MeshMismatch("density and operator grids differ".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FpeState<T: Scalar = f64> {
    pub density: GridDensity<T>,
    pub time: T,
    /// Number of negative cell values clipped to zero so far.
    pub clipped: u64,
}

impl<T: Scalar> FpeState<T> {
    pub fn new(density: GridDensity<T>) -> Result<Self> {
        let mass = density.total_mass();
        if !(mass > T::zero()) || density.values.iter().any(|v| !(*v >= T::zero())) {
            return Err(Error::config(
                "rho0",
                "initial density must be non-negative with positive mass",
            ));
        }
        let mut density = density;
        density.values.iter_mut().for_each(|v| *v = *v / mass);
        Ok(Self {
            density,
            time: T::zero(),
            clipped: 0,
        })
    }

    /// Cell averages of `rho0` by `sub`-point midpoint rule per axis.
    pub fn from_fn(mesh: &GridMesh<T>, sub: usize, rho0: impl Fn(&[T]) -> T) -> Result<Self> {
        let sub = sub.max(1);
        let dim = mesh.dim();
        let h = mesh.spacing();
        let offsets: Vec<T> = (0..sub)
            .map(|s| (T::of_usize(s) + T::of(0.5)) / T::of_usize(sub) * h - h / T::of(2.0))
            .collect();
        let points = sub.pow(dim as u32);
        let mut x = vec![T::zero(); dim];
        let values = (0..mesh.cell_count())
            .map(|cell| {
                let c = mesh.center(cell);
                let mut acc = T::zero();
                for p in 0..points {
                    let mut rest = p;
                    for k in 0..dim {
                        x[k] = c[k] + offsets[rest % sub];
                        rest /= sub;
                    }
                    acc = acc + rho0(&x);
                }
                acc / T::of_usize(points)
            })
            .collect();
        Self::new(GridDensity::new(mesh.clone(), values)?)
    }

    /// Writes `t,cell_index,center_x1[,center_x2],value`.
    pub fn write_csv(states: &[Self], path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let dim = states.first().map_or(1, |s| s.density.mesh.dim());
        let header: Vec<String> = (1..=dim).map(|k| format!("center_x{k}")).collect();
        writeln!(w, "t,cell_index,{},value", header.join(","))?;
        let mut c = vec![T::zero(); dim];
        for s in states {
            let t = fmt_float(s.time);
            for (i, v) in s.density.values.iter().enumerate() {
                s.density.mesh.center_into(i, &mut c);
                write!(w, "{t},{i}")?;
                for x in &c {
                    write!(w, ",{}", fmt_float(*x))?;
                }
                writeln!(w, ",{}", fmt_float(*v))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// One explicit Euler step.
pub fn fpe_step<T: Scalar>(op: &FpeOperator<T>, state: &FpeState<T>, dt: T) -> Result<FpeState<T>> {
    op.check_mesh(&state.density)?;
    if !(dt >= T::zero()) {
        return Err(Error::config("dt", "time step must be non-negative"));
    }
    if dt > op.admissible_dt() {
        return Err(Error::config(
            "dt",
            format!("time step {dt} exceeds the admissible {}", op.admissible_dt()),
        ));
    }
    let mut next = state.clone();
    if dt > T::zero() {
        let mut rate = vec![T::zero(); state.density.values.len()];
        advance(op, &mut next, dt, &mut rate);
    }
    Ok(next)
}

fn advance<T: Scalar>(op: &FpeOperator<T>, state: &mut FpeState<T>, dt: T, rate: &mut [T]) {
    op.apply(&state.density.values, rate);
    let mut clipped = 0u64;
    for (v, r) in state.density.values.iter_mut().zip(rate.iter()) {
        *v = *v + dt * *r;
        if *v < T::zero() {
            *v = T::zero();
            clipped += 1;
        }
    }
    if clipped > 0 {
        state.clipped += clipped;
        let mass = state.density.total_mass();
        state.density.values.iter_mut().for_each(|v| *v = *v / mass);
    }
    state.time = state.time + dt;
}

#[derive(Clone, Copy, Debug)]
pub struct FpeOptions {
    /// Refuse solves needing more explicit steps than this.
    pub max_substeps: u64,
}

impl Default for FpeOptions {
    fn default() -> Self {
        Self {
            max_substeps: 50_000_000,
        }
    }
}

/// Marches `rho0` to `t_final` in admissible sub-steps, landing exactly on
/// each requested snapshot time. The final state is always included.
pub fn fpe_solve<T: Scalar>(
    op: &FpeOperator<T>,
    rho0: &FpeState<T>,
    t_final: T,
    snapshot_times: &[T],
    options: FpeOptions,
) -> Result<Vec<FpeState<T>>> {
    op.check_mesh(&rho0.density)?;
    if !(t_final >= T::zero()) || !t_final.is_finite() {
        return Err(Error::config("t_final", "must be finite and non-negative"));
    }
    if let Some(t) = snapshot_times.iter().find(|&&t| !(t >= T::zero() && t <= t_final)) {
        return Err(Error::config("snapshots", format!("time {t} outside [0, t_final]")));
    }
    let dt_max = op.admissible_dt();
    let needed = (t_final / dt_max).ceil().to_f64_lossy();
    if needed > options.max_substeps as f64 {
        return Err(Error::config(
            "t_final",
            format!(
                "needs about {needed:.3e} explicit steps at the admissible dt {dt_max}, \
                 over the limit of {}",
                options.max_substeps
            ),
        ));
    }
    let mut times: Vec<T> = snapshot_times.to_vec();
    times.push(t_final);
    times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    times.dedup();

    let mut state = rho0.clone();
    state.time = T::zero();
    let mut rate = vec![T::zero(); state.density.values.len()];
    let mut out = Vec::with_capacity(times.len());
    for &target in &times {
        let span = target - state.time;
        if span > T::zero() {
            let steps = (span / dt_max).ceil().max(T::one());
            let dt = span / steps;
            let steps = steps.to_u64().unwrap_or(1);
            for _ in 0..steps {
                advance(op, &mut state, dt, &mut rate);
            }
        }
        state.time = target;
        out.push(state.clone());
    }
    Ok(out)
}
