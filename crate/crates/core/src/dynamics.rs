//! The adaptive-diffusion class `dX = -grad H dt + sqrt(2 D) dW` built from a
//! weight generator `g`, and its Euler–Maruyama ensemble integrator.
//!
//! With `f = g(F)` the fields are `D = eps * f` and
//! `grad H = (g(F) - eps * g'(F)) * grad F`; every member keeps the Gibbs
//! density `exp(-F / eps) / Z_G` stationary.

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;

use crate::domain::{Potential, TorusDomain};
use crate::error::{Error, Result};
use crate::rng::PhiloxStream;
use crate::scalar::Scalar;

type ScalarFn<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// Which member of the class a weight generator selects.
#[derive(Clone)]
pub enum WeightKind<T: Scalar = f64> {
    /// `g = 1`: overdamped Langevin.
    Langevin,
    /// `g(y) = Z_G / |T^d| * exp(y / eps)`: zero drift.
    DerivativeFree,
    /// `g(y) = y`.
    Linear,
    /// User-supplied `g` and its derivative.
    Custom { g: ScalarFn<T>, dg: ScalarFn<T> },
}

impl<T: Scalar> WeightKind<T> {
    pub fn name(&self) -> &'static str {
        match self {
            WeightKind::Langevin => "langevin",
            WeightKind::DerivativeFree => "derivative_free",
            WeightKind::Linear => "linear",
            WeightKind::Custom { .. } => "custom",
        }
    }
}

impl<T: Scalar> fmt::Debug for WeightKind<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug)]
pub struct WeightGenerator<T: Scalar = f64> {
    pub kind: WeightKind<T>,
    pub eps: T,
}

impl<T: Scalar> WeightGenerator<T> {
    pub fn new(kind: WeightKind<T>, eps: T) -> Self {
        Self { kind, eps }
    }

    pub fn langevin(eps: T) -> Self {
        Self::new(WeightKind::Langevin, eps)
    }

    pub fn derivative_free(eps: T) -> Self {
        Self::new(WeightKind::DerivativeFree, eps)
    }

    pub fn linear(eps: T) -> Self {
        Self::new(WeightKind::Linear, eps)
    }

    pub fn custom(
        g: impl Fn(T) -> T + Send + Sync + 'static,
        dg: impl Fn(T) -> T + Send + Sync + 'static,
        eps: T,
    ) -> Self {
        Self::new(
            WeightKind::Custom {
                g: Arc::new(g),
                dg: Arc::new(dg),
            },
            eps,
        )
    }
}

/// A fully built member of the dynamics class.
#[derive(Clone, Debug)]
pub struct Dynamics<T: Scalar = f64> {
    weight: WeightGenerator<T>,
    potential: Potential<T>,
    z_g: Option<T>,
    /// `ln(Z_G / |T^d|)` for the derivative-free generator.
    log_mass_ratio: T,
}

impl<T: Scalar> Dynamics<T> {
    /// Builds `D` and `grad H` from `g`. `z_g` is the Gibbs normalization at
    /// the generator's `eps` and is required for the derivative-free kind.
    pub fn build(weight: WeightGenerator<T>, potential: Potential<T>, z_g: Option<T>) -> Result<Self> {
        let eps = weight.eps;
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::config("eps", "diffusion scale must be positive and finite"));
        }
        let log_mass_ratio = match (&weight.kind, z_g) {
            (WeightKind::DerivativeFree, Some(z)) if z > T::zero() && z.is_finite() => {
                z.ln() - potential.domain().volume().ln()
            }
            (WeightKind::DerivativeFree, _) => {
                return Err(Error::config("z_g", "derivative-free dynamics need a positive Z_G"));
            }
            _ => T::zero(),
        };
        let dynamics = Self {
            weight,
            potential,
            z_g,
            log_mass_ratio,
        };
        dynamics.validate()?;
        Ok(dynamics)
    }

    fn validate(&self) -> Result<()> {
        let ext = self.potential.extrema()?;
        let samples = 257;
        for i in 0..samples {
            let y = ext.f_min + (ext.f_max - ext.f_min) * T::of_usize(i) / T::of_usize(samples - 1);
            // Checked in the log domain: g may overflow at small eps while staying positive.
            let log_g = self.log_g(y);
            if log_g.is_nan() || log_g == T::neg_infinity() {
                return Err(Error::Validity(format!(
                    "weight generator {} is not positive at F = {y} (g = {})",
                    self.kind_name(),
                    self.g(y)
                )));
            }
        }
        if matches!(self.weight.kind, WeightKind::Linear | WeightKind::Custom { .. }) {
            if let Some(ratio) = self.inverse_weight_mass_ratio() {
                if (ratio - T::one()).abs() > T::of(1e-3) {
                    log::warn!(
                        "weight generator {} violates the time-scale normalization: \
                         (1/|T|) * integral of 1/f = {ratio}",
                        self.kind_name()
                    );
                }
            }
        }
        Ok(())
    }

    /// `|T|^-1 * integral of 1 / f` by midpoint rule on the scan grid (1 or 2 dims).
    pub fn inverse_weight_mass_ratio(&self) -> Option<T> {
        let dom = self.potential.domain();
        if dom.dim() > 2 {
            return None;
        }
        let res = 256usize;
        let h = dom.period() / T::of_usize(res);
        let c = |i: usize| dom.lo() + (T::of_usize(i) + T::of(0.5)) * h;
        let n = res.pow(dom.dim() as u32);
        let total: T = (0..n)
            .map(|i| {
                let x = if dom.dim() == 1 {
                    vec![c(i)]
                } else {
                    vec![c(i / res), c(i % res)]
                };
                T::one() / self.g(self.potential.eval_wrapped(&x))
            })
            .sum();
        Some(total / T::of_usize(n))
    }

    pub fn kind_name(&self) -> &'static str {
        self.weight.kind.name()
    }

    pub fn weight(&self) -> &WeightGenerator<T> {
        &self.weight
    }

    pub fn potential(&self) -> &Potential<T> {
        &self.potential
    }

    pub fn domain(&self) -> &TorusDomain<T> {
        self.potential.domain()
    }

    pub fn eps(&self) -> T {
        self.weight.eps
    }

    pub fn z_g(&self) -> Option<T> {
        self.z_g
    }

    pub fn is_derivative_free(&self) -> bool {
        matches!(self.weight.kind, WeightKind::DerivativeFree)
    }

    /// The weight generator `g(y)`.
    pub fn g(&self, y: T) -> T {
        self.log_g(y).exp()
    }

    /// `ln g(y)`; NaN where `g(y) <= 0`.
    pub fn log_g(&self, y: T) -> T {
        match &self.weight.kind {
            WeightKind::Langevin => T::zero(),
            WeightKind::DerivativeFree => self.log_mass_ratio + y / self.weight.eps,
            WeightKind::Linear => y.ln(),
            WeightKind::Custom { g, .. } => g(y).ln(),
        }
    }

    pub fn dg(&self, y: T) -> T {
        match &self.weight.kind {
            WeightKind::Langevin => T::zero(),
            WeightKind::DerivativeFree => self.g(y) / self.weight.eps,
            WeightKind::Linear => T::one(),
            WeightKind::Custom { dg, .. } => dg(y),
        }
    }

    /// `D(x) = eps * g(F(x))` at a wrapped point.
    #[inline]
    pub fn diffusion_at(&self, x: &[T]) -> T {
        let eps = self.weight.eps;
        match &self.weight.kind {
            WeightKind::Langevin => eps,
            _ => eps * self.g(self.potential.eval_wrapped(x)),
        }
    }

    /// `ln D(x)` at a wrapped point.
    #[inline]
    pub fn log_diffusion_at(&self, x: &[T]) -> T {
        let eps = self.weight.eps;
        match &self.weight.kind {
            WeightKind::Langevin => eps.ln(),
            _ => eps.ln() + self.log_g(self.potential.eval_wrapped(x)),
        }
    }

    /// `grad H(x)` at a wrapped point. Identically zero for the derivative-free kind.
    #[inline]
    pub fn drift_at(&self, x: &[T], out: &mut [T]) {
        match &self.weight.kind {
            WeightKind::Langevin => self.potential.grad_wrapped(x, out),
            WeightKind::DerivativeFree => out.iter_mut().for_each(|o| *o = T::zero()),
            _ => {
                let f = self.potential.eval_wrapped(x);
                let scale = self.g(f) - self.weight.eps * self.dg(f);
                self.potential.grad_wrapped(x, out);
                out.iter_mut().for_each(|o| *o = *o * scale);
            }
        }
    }

    /// Checked `D(x)` for arbitrary finite points.
    pub fn diffusion(&self, x: &[T]) -> Result<T> {
        self.potential.eval(x)?;
        let mut w = x.to_vec();
        self.domain().wrap_point(&mut w);
        Ok(self.diffusion_at(&w))
    }

    /// Checked `grad H(x)` for arbitrary finite points.
    pub fn drift(&self, x: &[T]) -> Result<Vec<T>> {
        self.potential.eval(x)?;
        let mut w = x.to_vec();
        self.domain().wrap_point(&mut w);
        let mut out = vec![T::zero(); x.len()];
        self.drift_at(&w, &mut out);
        Ok(out)
    }

    /// Largest diffusion over `[F_min, F_max]`.
    pub fn max_diffusion(&self) -> Result<T> {
        let ext = self.potential.extrema()?;
        let samples = 257;
        Ok((0..samples)
            .map(|i| ext.f_min + (ext.f_max - ext.f_min) * T::of_usize(i) / T::of_usize(samples - 1))
            .map(|y| self.weight.eps * self.g(y))
            .fold(T::zero(), T::max))
    }

    /// One Euler–Maruyama update of a single particle without wrapping.
    /// `x` must already lie in the canonical cell for the field evaluation.
    #[inline]
    pub fn increment(&self, x: &[T], dt: T, rng: &mut PhiloxStream, out: &mut [T]) {
        let noise = (T::of(2.0) * dt * self.diffusion_at(x)).sqrt();
        self.drift_at(x, out);
        for (o, &xi) in out.iter_mut().zip(x) {
            let z: T = rng.normal();
            *o = xi - dt * *o + noise * z;
        }
    }
}

/// Initial particle distribution, wrapped to the torus.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialDistribution<T: Scalar = f64> {
    Gaussian { mean: Vec<T>, stddev: T },
    Uniform,
    Point(Vec<T>),
}

impl<T: Scalar> InitialDistribution<T> {
    /// Draws particle `index` from stream `(seed, index, 0)`.
    pub fn draw(&self, domain: &TorusDomain<T>, seed: u64, index: usize, out: &mut [T]) {
        let mut rng = PhiloxStream::new(seed, index as u64, 0);
        match self {
            InitialDistribution::Gaussian { mean, stddev } => {
                for (o, &m) in out.iter_mut().zip(mean) {
                    let z: T = rng.normal();
                    *o = m + *stddev * z;
                }
            }
            InitialDistribution::Uniform => {
                for o in out.iter_mut() {
                    *o = domain.lo() + T::of(rng.uniform()) * domain.period();
                }
            }
            InitialDistribution::Point(p) => out.copy_from_slice(p),
        }
        domain.wrap_point(out);
    }

    fn validate(&self, dim: usize) -> Result<()> {
        match self {
            InitialDistribution::Gaussian { mean, stddev } => {
                if mean.len() != dim {
                    return Err(Error::config("init.mean", format!("expected {dim} coordinates")));
                }
                if !(*stddev >= T::zero()) || mean.iter().any(|m| !m.is_finite()) {
                    return Err(Error::config("init.stddev", "must be finite and non-negative"));
                }
            }
            InitialDistribution::Point(p) => {
                if p.len() != dim || p.iter().any(|v| !v.is_finite()) {
                    return Err(Error::config(
                        "init.point",
                        format!("expected {dim} finite coordinates"),
                    ));
                }
            }
            InitialDistribution::Uniform => {}
        }
        Ok(())
    }
}

/// Particle positions on the torus plus the counter that addresses their
/// random streams.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleState<T: Scalar = f64> {
    /// Row-major `n x dim` positions.
    pub positions: Vec<T>,
    pub dim: usize,
    pub time: T,
    /// Number of Euler–Maruyama steps taken so far.
    pub step: u64,
    pub master_seed: u64,
}

impl<T: Scalar> EnsembleState<T> {
    pub fn sample(
        init: &InitialDistribution<T>,
        domain: &TorusDomain<T>,
        n_particles: usize,
        master_seed: u64,
    ) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::config("n_particles", "need at least one particle"));
        }
        init.validate(domain.dim())?;
        let dim = domain.dim();
        let mut positions = vec![T::zero(); n_particles * dim];
        positions
            .par_chunks_mut(dim)
            .enumerate()
            .for_each(|(i, p)| init.draw(domain, master_seed, i, p));
        Ok(Self {
            positions,
            dim,
            time: T::zero(),
            step: 0,
            master_seed,
        })
    }

    pub fn from_positions(positions: Vec<T>, dim: usize, master_seed: u64) -> Self {
        Self {
            positions,
            dim,
            time: T::zero(),
            step: 0,
            master_seed,
        }
    }

    pub fn n_particles(&self) -> usize {
        self.positions.len() / self.dim
    }

    pub fn particle(&self, i: usize) -> &[T] {
        &self.positions[i * self.dim..(i + 1) * self.dim]
    }

    pub fn particles(&self) -> impl Iterator<Item = &[T]> {
        self.positions.chunks(self.dim)
    }
}

/// Advances the particles `first_index..` held in `positions` by one step.
///
/// Draws come from stream `(seed, particle_index, step + 1)`, so any split of
/// an ensemble into ranges gives the same result as stepping it whole.
pub fn em_step_range<T: Scalar>(
    dynamics: &Dynamics<T>,
    positions: &mut [T],
    first_index: usize,
    seed: u64,
    step: u64,
    dt: T,
) -> Result<()> {
    let dim = dynamics.domain().dim();
    let domain = dynamics.domain();
    let bad = positions
        .par_chunks_mut(dim)
        .enumerate()
        .filter_map(|(i, x)| {
            let index = first_index + i;
            let mut rng = PhiloxStream::new(seed, index as u64, step + 1);
            let mut next = [T::zero(); 4];
            let next = &mut next[..dim.min(4)];
            if dim > 4 {
                let mut v = vec![T::zero(); dim];
                dynamics.increment(x, dt, &mut rng, &mut v);
                x.copy_from_slice(&v);
            } else {
                dynamics.increment(x, dt, &mut rng, next);
                x.copy_from_slice(next);
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Some(index);
            }
            domain.wrap_point(x);
            None
        })
        .min();
    match bad {
        Some(particle) => Err(Error::Numerical {
            particle,
            msg: "position became non-finite".into(),
        }),
        None => Ok(()),
    }
}

/// One Euler–Maruyama step of the whole ensemble.
pub fn em_step<T: Scalar>(dynamics: &Dynamics<T>, state: &EnsembleState<T>, dt: T) -> Result<EnsembleState<T>> {
    if !(dt >= T::zero()) {
        return Err(Error::config("dt", "time step must be non-negative"));
    }
    if dt == T::zero() {
        return Ok(state.clone());
    }
    let mut next = state.clone();
    em_step_range(dynamics, &mut next.positions, 0, state.master_seed, state.step, dt)?;
    next.step += 1;
    next.time = state.time + dt;
    Ok(next)
}

/// Steps an ensemble to `t_final`, returning snapshots at the last step not
/// after each requested time. The final state is always included.
pub fn simulate<T: Scalar>(
    dynamics: &Dynamics<T>,
    init: &InitialDistribution<T>,
    n_particles: usize,
    t_final: T,
    dt: T,
    snapshot_times: &[T],
    master_seed: u64,
) -> Result<Vec<EnsembleState<T>>> {
    if !(t_final >= T::zero()) || !t_final.is_finite() {
        return Err(Error::config("t_final", "must be finite and non-negative"));
    }
    if !(dt > T::zero()) {
        return Err(Error::config("dt", "time step must be positive"));
    }
    if t_final > T::zero() && dt > t_final {
        return Err(Error::config("dt", "time step exceeds t_final"));
    }
    if let Some(t) = snapshot_times.iter().find(|&&t| !(t >= T::zero() && t <= t_final)) {
        return Err(Error::config("snapshots", format!("time {t} outside [0, t_final]")));
    }
    let mut state = EnsembleState::sample(init, dynamics.domain(), n_particles, master_seed)?;
    let step_of = |t: T| -> u64 {
        let k = (t / dt * (T::one() + T::of(1e-12))).floor();
        k.to_u64().unwrap_or(0)
    };
    let total = if t_final == T::zero() { 0 } else { step_of(t_final) };
    let mut wanted: Vec<u64> = snapshot_times.iter().map(|&t| step_of(t).min(total)).collect();
    wanted.push(total);
    wanted.sort_unstable();
    wanted.dedup();

    warn_on_stiff_step(dynamics, dt);

    let mut snapshots = Vec::with_capacity(wanted.len());
    let mut next = wanted.iter().peekable();
    for k in 0..=total {
        if k > 0 {
            em_step_range(dynamics, &mut state.positions, 0, master_seed, state.step, dt)?;
            state.step += 1;
            state.time = T::of(k as f64) * dt;
        }
        if next.peek() == Some(&&k) {
            snapshots.push(state.clone());
            next.next();
        }
    }
    Ok(snapshots)
}

fn warn_on_stiff_step<T: Scalar>(dynamics: &Dynamics<T>, dt: T) {
    let Ok(d_max) = dynamics.max_diffusion() else {
        return;
    };
    let grid = dynamics.domain().period() / T::of(256.0);
    let ratio = dt * d_max / dynamics.eps();
    if ratio > T::of(0.1) * grid * grid {
        log::warn!(
            "dt * max(D) / eps = {ratio} exceeds 0.1 * (grid scale)^2 = {}; \
             large diffusion steps are taken without adaptivity",
            T::of(0.1) * grid * grid
        );
    }
}
