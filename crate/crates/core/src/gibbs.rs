//! Tabulated Gibbs density `exp(-F / eps) / Z_G`, particle histograms on the
//! same cell grid, and the divergences between them.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::{Potential, TorusDomain};
use crate::dynamics::EnsembleState;
use crate::error::{Error, Result};
use crate::rng::PhiloxStream;
use crate::scalar::{log_sum_exp, Scalar};

/// Uniform cell grid on the torus, `resolution` cells per axis, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMesh<T: Scalar = f64> {
    dim: usize,
    resolution: usize,
    period: T,
    lo: T,
}

impl<T: Scalar> GridMesh<T> {
    pub fn new(domain: &TorusDomain<T>, resolution: usize) -> Result<Self> {
        if resolution < 16 {
            return Err(Error::config("resolution", "need at least 16 cells per axis"));
        }
        let cells = (resolution as u128).checked_pow(domain.dim() as u32);
        if cells.is_none_or(|c| c > 1 << 28) {
            return Err(Error::config("resolution", "grid too large"));
        }
        Ok(Self {
            dim: domain.dim(),
            resolution,
            period: domain.period(),
            lo: domain.lo(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn spacing(&self) -> T {
        self.period / T::of_usize(self.resolution)
    }

    pub fn cell_count(&self) -> usize {
        self.resolution.pow(self.dim as u32)
    }

    /// Volume of the whole torus.
    pub fn period_volume(&self) -> T {
        self.period.powi(self.dim as i32)
    }

    pub fn cell_volume(&self) -> T {
        self.spacing().powi(self.dim as i32)
    }

    /// Centre of a cell, axis 1 first.
    pub fn center(&self, cell: usize) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.center_into(cell, &mut out);
        out
    }

    pub fn center_into(&self, cell: usize, out: &mut [T]) {
        let h = self.spacing();
        let mut rest = cell;
        for k in (0..self.dim).rev() {
            let i = rest % self.resolution;
            rest /= self.resolution;
            out[k] = self.lo + (T::of_usize(i) + T::of(0.5)) * h;
        }
    }

    /// Cell holding a point of the canonical cell.
    pub fn cell_of(&self, x: &[T]) -> usize {
        let h = self.spacing();
        x.iter().fold(0usize, |acc, &xi| {
            let i = ((xi - self.lo) / h).floor().to_isize().unwrap_or(0);
            acc * self.resolution + i.clamp(0, self.resolution as isize - 1) as usize
        })
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self != other {
            return Err(Error::MeshMismatch(format!(
                "{}-d grid of {} cells vs {}-d grid of {} cells",
                self.dim, self.resolution, other.dim, other.resolution
            )));
        }
        Ok(())
    }
}

/// Cell-averaged density; `values` integrate to one against the cell volume.
#[derive(Clone, Debug, PartialEq)]
pub struct GridDensity<T: Scalar = f64> {
    pub mesh: GridMesh<T>,
    pub values: Vec<T>,
}

impl<T: Scalar> GridDensity<T> {
    pub fn new(mesh: GridMesh<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.cell_count() {
            return Err(Error::MeshMismatch(format!(
                "{} values for {} cells",
                values.len(),
                mesh.cell_count()
            )));
        }
        Ok(Self { mesh, values })
    }

    /// Normalized histogram of particle positions.
    pub fn from_particles(state: &EnsembleState<T>, mesh: &GridMesh<T>) -> Result<Self> {
        if state.n_particles() == 0 {
            return Err(Error::config(
                "n_particles",
                "cannot estimate a density from an empty ensemble",
            ));
        }
        if state.dim != mesh.dim() {
            return Err(Error::MeshMismatch("ensemble and grid dimensions differ".into()));
        }
        let mut counts = vec![0usize; mesh.cell_count()];
        for x in state.particles() {
            counts[mesh.cell_of(x)] += 1;
        }
        let scale = T::one() / (T::of_usize(state.n_particles()) * mesh.cell_volume());
        let values = counts.into_iter().map(|c| T::of_usize(c) * scale).collect();
        Ok(Self {
            mesh: mesh.clone(),
            values,
        })
    }

    /// Probability of each cell.
    pub fn masses(&self) -> impl Iterator<Item = T> + '_ {
        let v = self.mesh.cell_volume();
        self.values.iter().map(move |&d| d * v)
    }

    pub fn total_mass(&self) -> T {
        self.masses().sum()
    }

    /// Writes `cell_index,center_x1[,center_x2],value`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        let header: Vec<String> = (1..=self.mesh.dim()).map(|k| format!("center_x{k}")).collect();
        writeln!(w, "cell_index,{},value", header.join(","))?;
        let mut c = vec![T::zero(); self.mesh.dim()];
        for (i, v) in self.values.iter().enumerate() {
            self.mesh.center_into(i, &mut c);
            write!(w, "{i}")?;
            for x in &c {
                write!(w, ",{}", fmt_float(*x))?;
            }
            writeln!(w, ",{}", fmt_float(*v))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Round-trip float formatting used by every CSV writer.
pub fn fmt_float<T: Scalar>(x: T) -> String {
    format!("{:.16e}", x.to_f64_lossy())
}

/// Gibbs density on a cell grid together with its normalization.
#[derive(Clone, Debug)]
pub struct GibbsTable<T: Scalar = f64> {
    pub eps: T,
    /// `ln Z_G` with `Z_G` the integral of `exp(-F / eps)` over the torus.
    pub log_z: T,
    pub density: GridDensity<T>,
}

impl<T: Scalar> GibbsTable<T> {
    /// Midpoint-rule tabulation, spectrally accurate for smooth periodic `F`.
    pub fn new(potential: &Potential<T>, eps: T, resolution: usize) -> Result<Self> {
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::config("eps", "diffusion scale must be positive and finite"));
        }
        let mesh = GridMesh::new(potential.domain(), resolution)?;
        let exponents: Vec<T> = (0..mesh.cell_count())
            .into_par_iter()
            .map(|i| -potential.eval_wrapped(&mesh.center(i)) / eps)
            .collect();
        let log_mass = log_sum_exp(exponents.iter().copied());
        let log_z = log_mass + mesh.cell_volume().ln();
        let values = exponents.iter().map(|&e| (e - log_z).exp()).collect();
        Ok(Self {
            eps,
            log_z,
            density: GridDensity::new(mesh, values)?,
        })
    }

    pub fn z_g(&self) -> T {
        self.log_z.exp()
    }

    pub fn mesh(&self) -> &GridMesh<T> {
        &self.density.mesh
    }
}

/// `KL(p || q)` over cell masses; zero-mass cells of `p` contribute nothing.
pub fn kl_divergence<T: Scalar>(p: &GridDensity<T>, q: &GridDensity<T>) -> Result<T> {
    p.mesh.check_same(&q.mesh)?;
    Ok(p.masses()
        .zip(q.masses())
        .map(|(a, b)| if a > T::zero() { a * (a / b).ln() } else { T::zero() })
        .sum())
}

/// Chi-squared divergence `sum (p - q)^2 / q` over cell masses.
pub fn chi2_divergence<T: Scalar>(p: &GridDensity<T>, q: &GridDensity<T>) -> Result<T> {
    p.mesh.check_same(&q.mesh)?;
    Ok(p.masses()
        .zip(q.masses())
        .map(|(a, b)| {
            let d = a - b;
            if d == T::zero() {
                T::zero()
            } else {
                d * d / b
            }
        })
        .sum())
}

/// Total variation distance, half the L1 distance of cell masses.
pub fn tv_distance<T: Scalar>(p: &GridDensity<T>, q: &GridDensity<T>) -> Result<T> {
    Ok(l1_distance(p, q)? / T::of(2.0))
}

/// L1 distance between densities.
pub fn l1_distance<T: Scalar>(p: &GridDensity<T>, q: &GridDensity<T>) -> Result<T> {
    p.mesh.check_same(&q.mesh)?;
    Ok(p.masses().zip(q.masses()).map(|(a, b)| (a - b).abs()).sum())
}

/// Exact draws from the Gibbs density by rejection against the uniform law.
/// Sample `i` uses stream `(seed, i, 0)`.
pub fn sample_gibbs<T: Scalar>(potential: &Potential<T>, eps: T, n: usize, seed: u64) -> Result<EnsembleState<T>> {
    if !(eps > T::zero()) {
        return Err(Error::config("eps", "diffusion scale must be positive"));
    }
    let domain = potential.domain();
    let dim = domain.dim();
    // The scan minimum may sit slightly above the true minimum.
    let ext = potential.extrema()?;
    let spacing = domain.period() / T::of_usize(ext.resolution);
    let floor = ext.f_min - T::of(0.01) * eps - spacing * spacing;
    let mut positions = vec![T::zero(); n * dim];
    positions.par_chunks_mut(dim).enumerate().for_each(|(i, x)| {
        let mut rng = PhiloxStream::new(seed, i as u64, 0);
        loop {
            for xi in x.iter_mut() {
                *xi = domain.lo() + T::of(rng.uniform()) * domain.period();
            }
            domain.wrap_point(x);
            let accept = (-(potential.eval_wrapped(x) - floor) / eps).exp();
            if T::of(rng.uniform()) < accept {
                break;
            }
        }
    });
    Ok(EnsembleState::from_positions(positions, dim, seed))
}
