//! Mean first-passage times out of an interval of the line: nested
//! quadrature of the closed-form solutions, saddle-point asymptotics, and
//! Monte Carlo over independent trajectories.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::domain::Potential;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::gibbs::{fmt_float, GibbsTable};
use crate::rates::{linear_fit, LinearFit};
use crate::rng::PhiloxStream;
use crate::scalar::Scalar;

/// Quadrature accuracy threshold on grid doubling.
pub const REFINEMENT_TOLERANCE: f64 = 1e-4;
/// Grid used for the Gibbs normalization in the derivative-free formula.
const NORMALIZATION_RESOLUTION: usize = 4096;

#[derive(Clone, Debug)]
pub struct ExitProblem<T: Scalar = f64> {
    pub potential: Potential<T>,
    pub a: T,
    pub b: T,
    pub x0: T,
    pub eps: T,
    /// Distance from an endpoint that counts as arrival in Monte Carlo.
    pub hit_tolerance: T,
}

impl<T: Scalar> ExitProblem<T> {
    pub fn new(potential: Potential<T>, a: T, b: T, x0: T, eps: T, hit_tolerance: T) -> Result<Self> {
        if potential.domain().dim() != 1 {
            return Err(Error::config("potential.dim", "exit problems are one-dimensional"));
        }
        if !(a < x0 && x0 < b) || !b.is_finite() || !a.is_finite() {
            return Err(Error::config("exit.x0", "need a < x0 < b"));
        }
        if !(eps > T::zero()) || !eps.is_finite() {
            return Err(Error::config("eps", "diffusion scale must be positive and finite"));
        }
        if !(hit_tolerance > T::zero()) || hit_tolerance * T::of(10.0) > b - a {
            return Err(Error::config(
                "exit.hit_tolerance",
                "must be positive and well below b - a",
            ));
        }
        Ok(Self {
            potential,
            a,
            b,
            x0,
            eps,
            hit_tolerance,
        })
    }

    fn check_quad_points(n: usize) -> Result<()> {
        if n < 1000 {
            return Err(Error::config(
                "exit.quad_points",
                "need at least 1000 quadrature points",
            ));
        }
        Ok(())
    }

    fn f(&self, x: T) -> T {
        self.potential.eval_wrapped(&[self.potential.domain().wrap(x)])
    }
}

/// A quadrature result with its grid-doubling check.
#[derive(Clone, Debug, PartialEq)]
pub struct MfptEstimate<T: Scalar = f64> {
    pub value: T,
    /// Relative change when the grid is doubled.
    pub refinement_change: T,
    pub warning: Option<String>,
}

impl<T: Scalar> MfptEstimate<T> {
    fn checked(coarse: T, fine: T) -> Self {
        let change = ((fine - coarse) / fine).abs();
        let warning = (!(change <= T::of(REFINEMENT_TOLERANCE)))
            .then(|| format!("quadrature changed by {change} on grid doubling; increase quad_points"));
        if let Some(w) = &warning {
            log::warn!("{w}");
        }
        Self {
            value: coarse,
            refinement_change: change,
            warning,
        }
    }
}

/// Node layout on `[a, b]` with `x0` a node: two uniform segments.
struct Grid<T> {
    x: Vec<T>,
    /// Index of `x0`.
    split: usize,
    h_left: T,
    h_right: T,
}

impl<T: Scalar> Grid<T> {
    fn new(a: T, b: T, x0: T, intervals: usize) -> Self {
        let frac = ((x0 - a) / (b - a)).to_f64_lossy();
        let left = ((intervals as f64 * frac).round() as usize).clamp(2, intervals.saturating_sub(2).max(2));
        let right = intervals.saturating_sub(left).max(2);
        let h_left = (x0 - a) / T::of_usize(left);
        let h_right = (b - x0) / T::of_usize(right);
        let mut x: Vec<T> = (0..left).map(|k| a + T::of_usize(k) * h_left).collect();
        x.extend((0..right).map(|k| x0 + T::of_usize(k) * h_right));
        x.push(b);
        Self {
            x,
            split: left,
            h_left,
            h_right,
        }
    }

    /// Running integral from `a` at every node.
    fn cumulative(&self, f: &[T]) -> Vec<T> {
        let mut out = cumulative_simpson(&f[..=self.split], self.h_left);
        let offset = *out.last().expect("non-empty segment");
        let right = cumulative_simpson(&f[self.split..], self.h_right);
        out.extend(right.into_iter().skip(1).map(|v| v + offset));
        out
    }
}

/// Cumulative composite Simpson rule on uniform nodes; odd nodes use the
/// third-order half-panel formula.
pub fn cumulative_simpson<T: Scalar>(f: &[T], h: T) -> Vec<T> {
    let n = f.len();
    let mut c = vec![T::zero(); n];
    let third = h / T::of(3.0);
    let twelfth = h / T::of(12.0);
    for k in 1..n {
        c[k] = if k % 2 == 0 {
            c[k - 2] + third * (f[k - 2] + T::of(4.0) * f[k - 1] + f[k])
        } else if k + 1 < n {
            c[k - 1] + twelfth * (T::of(5.0) * f[k - 1] + T::of(8.0) * f[k] - f[k + 1])
        } else if k >= 2 {
            c[k - 1] + twelfth * (-f[k - 2] + T::of(8.0) * f[k - 1] + T::of(5.0) * f[k])
        } else {
            (f[0] + f[1]) * h / T::of(2.0)
        };
    }
    c
}

/// Langevin mean exit time from `x0`.
pub fn mfpt_langevin<T: Scalar>(prob: &ExitProblem<T>, quad_points: usize) -> Result<MfptEstimate<T>> {
    ExitProblem::<T>::check_quad_points(quad_points)?;
    let coarse = langevin_quadrature(prob, quad_points);
    let fine = langevin_quadrature(prob, 2 * quad_points);
    Ok(MfptEstimate::checked(coarse, fine))
}

fn langevin_quadrature<T: Scalar>(prob: &ExitProblem<T>, intervals: usize) -> T {
    let grid = Grid::new(prob.a, prob.b, prob.x0, intervals);
    let f: Vec<T> = grid.x.iter().map(|&x| prob.f(x)).collect();
    let (f_min, f_max) = min_max(&f);
    let eps = prob.eps;
    // Exponentials relative to the extremes on [a, b].
    let up: Vec<T> = f.iter().map(|&v| ((v - f_max) / eps).exp()).collect();
    let down: Vec<T> = f.iter().map(|&v| (-(v - f_min) / eps).exp()).collect();
    let inner = grid.cumulative(&down);
    let outer_integrand: Vec<T> = up.iter().zip(&inner).map(|(u, j)| *u * *j).collect();
    let outer = grid.cumulative(&outer_integrand);
    let rise = grid.cumulative(&up);
    let last = grid.x.len() - 1;
    let s = grid.split;
    let bracket = outer[last] * rise[s] / rise[last] - outer[s];
    (bracket.ln() + (f_max - f_min) / eps - eps.ln()).exp()
}

/// Derivative-free mean exit time from `x0`, with the Gibbs normalization
/// taken over the whole torus at the problem's `eps`.
pub fn mfpt_derivfree<T: Scalar>(prob: &ExitProblem<T>, quad_points: usize) -> Result<MfptEstimate<T>> {
    ExitProblem::<T>::check_quad_points(quad_points)?;
    let table = GibbsTable::new(&prob.potential, prob.eps, NORMALIZATION_RESOLUTION)?;
    let coarse = derivfree_quadrature(prob, quad_points, table.log_z);
    let fine = derivfree_quadrature(prob, 2 * quad_points, table.log_z);
    Ok(MfptEstimate::checked(coarse, fine))
}

fn derivfree_quadrature<T: Scalar>(prob: &ExitProblem<T>, intervals: usize, log_z: T) -> T {
    let grid = Grid::new(prob.a, prob.b, prob.x0, intervals);
    let f: Vec<T> = grid.x.iter().map(|&x| prob.f(x)).collect();
    let (f_min, _) = min_max(&f);
    let eps = prob.eps;
    let down: Vec<T> = f.iter().map(|&v| (-(v - f_min) / eps).exp()).collect();
    let inner = grid.cumulative(&down);
    let outer = grid.cumulative(&inner);
    let last = grid.x.len() - 1;
    let s = grid.split;
    let share = (prob.x0 - prob.a) / (prob.b - prob.a);
    let bracket = share * outer[last] - outer[s];
    let volume = prob.potential.domain().volume();
    (bracket.ln() + volume.ln() - eps.ln() - log_z - f_min / eps).exp()
}

fn min_max<T: Scalar>(v: &[T]) -> (T, T) {
    v.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    })
}

/// Asymptotic exit time up to its unknown constant: `prefactor * exp(exponent / eps)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AsymptoticEstimate<T: Scalar = f64> {
    pub exponent: T,
    pub prefactor: T,
    pub value: T,
    /// Interior minimum the estimate starts from.
    pub minimum: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExitDynamics {
    Langevin,
    DerivativeFree,
}

impl ExitDynamics {
    pub fn name(self) -> &'static str {
        match self {
            ExitDynamics::Langevin => "langevin",
            ExitDynamics::DerivativeFree => "derivative_free",
        }
    }
}

pub fn mfpt_asymptotic<T: Scalar>(prob: &ExitProblem<T>, kind: ExitDynamics) -> Result<AsymptoticEstimate<T>> {
    let ext = prob.potential.extrema()?;
    let period = prob.potential.domain().period();
    let inside = |loc: T| -> Vec<T> {
        [-T::one(), T::zero(), T::one()]
            .iter()
            .map(|&k| loc + k * period)
            .filter(|&x| x > prob.a && x < prob.b)
            .collect()
    };
    let m = ext
        .minima
        .iter()
        .flat_map(|c| inside(c.location).into_iter().map(move |x| (x, c)))
        .min_by(|(x, _), (y, _)| (*x - prob.x0).abs().partial_cmp(&(*y - prob.x0).abs()).expect("finite"))
        .ok_or_else(|| Error::Structural("no interior local minimum in (a, b)".into()))?;
    let (m_loc, m_cp) = m;
    let eps = prob.eps;
    match kind {
        ExitDynamics::Langevin => {
            let highest = |lo: T, hi: T| {
                ext.saddles
                    .iter()
                    .flat_map(|c| inside(c.location).into_iter().map(move |x| (x, c)))
                    .filter(|(x, _)| *x > lo && *x < hi)
                    .max_by(|(_, c), (_, d)| c.value.partial_cmp(&d.value).expect("finite"))
                    .map(|(_, c)| c)
            };
            let left = highest(prob.a, m_loc);
            let right = highest(m_loc, prob.b);
            let saddle = match (left, right) {
                (Some(l), Some(r)) => {
                    if l.value <= r.value {
                        l
                    } else {
                        r
                    }
                }
                _ => {
                    return Err(Error::Structural(
                        "the interior minimum needs a saddle on each side".into(),
                    ))
                }
            };
            let exponent = saddle.value - m_cp.value;
            let prefactor = saddle.alpha * m_cp.alpha;
            Ok(AsymptoticEstimate {
                exponent,
                prefactor,
                value: prefactor * (exponent / eps).exp(),
                minimum: m_loc,
            })
        }
        ExitDynamics::DerivativeFree => {
            let exponent = (prob.f(prob.a) - m_cp.value).min(T::zero());
            let prefactor = (prob.b - m_loc) * (m_loc - prob.a) / eps;
            Ok(AsymptoticEstimate {
                exponent,
                prefactor,
                value: prefactor * (exponent / eps).exp(),
                minimum: m_loc,
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloExit<T: Scalar = f64> {
    /// Mean over runs that exited before the cap.
    pub mean: T,
    pub stderr: T,
    pub censored: usize,
    pub completed: usize,
    pub t_cap: T,
}

/// Default censoring horizon `1e6 / eps`.
pub fn default_t_cap<T: Scalar>(eps: T) -> T {
    T::of(1e6) / eps
}

/// Independent trajectories from `x0` on the unwrapped line; run `r` step
/// `k` draws from stream `(seed, r, k)`.
pub fn mfpt_monte_carlo<T: Scalar>(
    prob: &ExitProblem<T>,
    dynamics: &Dynamics<T>,
    n_runs: usize,
    dt: T,
    t_cap: T,
    seed: u64,
) -> Result<MonteCarloExit<T>> {
    if n_runs < 100 {
        return Err(Error::config("exit.n_runs", "need at least 100 runs"));
    }
    if !(dt > T::zero()) {
        return Err(Error::config("dt", "time step must be positive"));
    }
    if !(t_cap > T::zero()) || !t_cap.is_finite() {
        return Err(Error::config(
            "exit.t_cap",
            "censoring horizon must be positive and finite",
        ));
    }
    if dynamics.domain().dim() != 1 {
        return Err(Error::config("potential.dim", "exit problems are one-dimensional"));
    }
    if dynamics.eps() != prob.eps {
        return Err(Error::config("eps", "dynamics and exit problem use different eps"));
    }
    let max_steps = (t_cap / dt).ceil().to_u64().unwrap_or(u64::MAX);
    let lower = prob.a + prob.hit_tolerance;
    let upper = prob.b - prob.hit_tolerance;
    let domain = dynamics.domain();
    let times: Vec<Option<T>> = (0..n_runs)
        .into_par_iter()
        .map(|run| {
            let mut x = prob.x0;
            let mut next = [T::zero()];
            for step in 0..=max_steps {
                if x <= lower || x >= upper {
                    return Some(T::of(step as f64) * dt);
                }
                if step == max_steps {
                    break;
                }
                let wrapped = domain.wrap(x);
                let mut rng = PhiloxStream::new(seed, run as u64, step + 1);
                dynamics.increment(&[wrapped], dt, &mut rng, &mut next);
                x = x + (next[0] - wrapped);
                if !x.is_finite() {
                    break;
                }
            }
            None
        })
        .collect();
    let done: Vec<T> = times.iter().flatten().copied().collect();
    let censored = n_runs - done.len();
    if done.is_empty() {
        return Err(Error::Estimation(format!(
            "all {n_runs} runs were censored at t_cap = {t_cap}; increase exit.t_cap"
        )));
    }
    let n = T::of_usize(done.len());
    let mean = done.iter().copied().sum::<T>() / n;
    let stderr = if done.len() > 1 {
        let var = done.iter().map(|&t| (t - mean) * (t - mean)).sum::<T>() / (n - T::one());
        (var / n).sqrt()
    } else {
        T::infinity()
    };
    Ok(MonteCarloExit {
        mean,
        stderr,
        censored,
        completed: done.len(),
        t_cap,
    })
}

/// Monte Carlo that retries once with a tenfold horizon when more than 10%
/// of runs are censored.
pub fn mfpt_monte_carlo_extending<T: Scalar>(
    prob: &ExitProblem<T>,
    dynamics: &Dynamics<T>,
    n_runs: usize,
    dt: T,
    t_cap: T,
    seed: u64,
) -> Result<MonteCarloExit<T>> {
    let first = mfpt_monte_carlo(prob, dynamics, n_runs, dt, t_cap, seed);
    let too_many = |r: &MonteCarloExit<T>| r.censored * 10 > n_runs;
    match first {
        Ok(r) if !too_many(&r) => Ok(r),
        Ok(_) | Err(Error::Estimation(_)) => {
            log::warn!(
                "more than 10% of exit runs censored; retrying with t_cap = {}",
                t_cap * T::of(10.0)
            );
            mfpt_monte_carlo(prob, dynamics, n_runs, dt, t_cap * T::of(10.0), seed)
        }
        Err(e) => Err(e),
    }
}

/// One line of an exit-time sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitRow {
    pub eps: f64,
    pub dynamics: String,
    pub method: String,
    /// Empty for Monte Carlo rows when no runs were requested.
    pub mean_exit_time: Option<f64>,
    pub stderr: Option<f64>,
    pub censored: Option<usize>,
}

pub fn write_exit_csv(rows: &[ExitRow], path: &Path) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "eps,dynamics,method,mean_exit_time,stderr,censored")?;
    let opt = |v: Option<f64>| v.map(fmt_float).unwrap_or_default();
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            fmt_float(r.eps),
            r.dynamics,
            r.method,
            opt(r.mean_exit_time),
            opt(r.stderr),
            r.censored.map(|c| c.to_string()).unwrap_or_default()
        )?;
    }
    w.flush()?;
    Ok(())
}

/// Fit of `log T` against `log(1/eps)`.
pub fn power_law_fit(eps: &[f64], times: &[f64]) -> Result<LinearFit> {
    let xs: Vec<f64> = eps.iter().map(|e| -e.ln()).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    linear_fit(&xs, &ys)
}

/// Fit of `log T` against `1/eps`.
pub fn arrhenius_fit(eps: &[f64], times: &[f64]) -> Result<LinearFit> {
    let xs: Vec<f64> = eps.iter().map(|e| 1.0 / e).collect();
    let ys: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    linear_fit(&xs, &ys)
}
