//! Theoretical convergence-rate bounds for the dynamics class and empirical
//! decay-rate fits of divergence time series.

use serde::Serialize;

use crate::domain::Potential;
use crate::dynamics::Dynamics;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sharp Poincaré constant of the flat torus with the given period.
pub fn default_poincare_constant(period: f64) -> f64 {
    (period / (2.0 * std::f64::consts::PI)).powi(2)
}

/// Placeholder log-Sobolev constant, twice the Poincaré constant.
pub fn default_log_sobolev_constant(period: f64) -> f64 {
    2.0 * default_poincare_constant(period)
}

/// Rate bounds for one dynamics at one `eps`. Logarithms are authoritative;
/// the plain values over- or underflow for very small `eps`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateReport {
    pub dynamics: String,
    pub eps: f64,
    pub f_min: f64,
    pub f_max: f64,
    pub lambda_eps: f64,
    pub log_lambda_eps: f64,
    /// Chi-squared decay rate bound `lambda_eps / C_PI`.
    pub lambda1: f64,
    /// KL decay rate bound `lambda_eps / C_LSI`.
    pub lambda2: f64,
    /// Extremes of `exp(F / eps)`.
    pub d_min: f64,
    pub d_max: f64,
    pub log_d_min: f64,
    pub log_d_max: f64,
    pub c_pi: f64,
    pub c_lsi: f64,
    /// `D_max / D_min`.
    pub a2_bound: f64,
    /// `eps * exp(2 (F_min - F_max) / eps)`.
    pub simplified_rate: f64,
    /// `eps^(1 + d/2) * exp((F_min - F_max) / eps)`, up to a constant.
    pub laplace_rate: f64,
    pub langevin_lambda: f64,
    pub kappa: f64,
    pub diameter: f64,
}

/// Both rate bounds for the dynamics, with `C_PI` and `C_LSI` supplied.
pub fn general_rate_bound<T: Scalar>(dynamics: &Dynamics<T>, c_pi: f64, c_lsi: f64) -> Result<RateReport> {
    if !(c_pi > 0.0) || !(c_lsi > 0.0) {
        return Err(Error::config(
            "rates.c_pi",
            "functional-inequality constants must be positive",
        ));
    }
    let potential = dynamics.potential();
    let ext = potential.extrema()?;
    let eps = dynamics.eps().to_f64_lossy();
    let f_min = ext.f_min.to_f64_lossy();
    let f_max = ext.f_max.to_f64_lossy();

    // F is continuous on a connected torus, so its range is [F_min, F_max]
    // and min over x of f e^{-F/eps} is a minimum over that interval.
    let samples = 4097;
    let mut log_min_weight = f64::INFINITY;
    for i in 0..samples {
        let y = f_min + (f_max - f_min) * i as f64 / (samples - 1) as f64;
        let lg = dynamics.log_g(T::of(y)).to_f64_lossy();
        if lg.is_nan() {
            return Err(Error::Validity(format!(
                "weight generator {} is not positive at F = {y}",
                dynamics.kind_name()
            )));
        }
        log_min_weight = log_min_weight.min(lg - y / eps);
    }
    let log_d_min = f_min / eps;
    let log_d_max = f_max / eps;
    let log_lambda_eps = eps.ln() + 2.0 * log_d_min - log_d_max + log_min_weight;
    let lambda_eps = log_lambda_eps.exp();
    let dim = potential.domain().dim() as f64;
    let diameter = potential.domain().diam().to_f64_lossy();
    let kappa = ext.kappa.to_f64_lossy();
    Ok(RateReport {
        dynamics: dynamics.kind_name().to_string(),
        eps,
        f_min,
        f_max,
        lambda_eps,
        log_lambda_eps,
        lambda1: (log_lambda_eps - c_pi.ln()).exp(),
        lambda2: (log_lambda_eps - c_lsi.ln()).exp(),
        d_min: log_d_min.exp(),
        d_max: log_d_max.exp(),
        log_d_min,
        log_d_max,
        c_pi,
        c_lsi,
        a2_bound: ((f_max - f_min) / eps).exp(),
        simplified_rate: eps * (2.0 * (f_min - f_max) / eps).exp(),
        laplace_rate: eps.powf(1.0 + dim / 2.0) * ((f_min - f_max) / eps).exp(),
        langevin_lambda: langevin_rate(kappa, diameter, eps),
        kappa,
        diameter,
    })
}

/// Langevin rate from the potential's curvature and the domain diameter.
pub fn langevin_rate_bound<T: Scalar>(potential: &Potential<T>, eps: T) -> Result<f64> {
    if !(eps > T::zero()) {
        return Err(Error::config("eps", "diffusion scale must be positive"));
    }
    let ext = potential.extrema()?;
    Ok(langevin_rate(
        ext.kappa.to_f64_lossy(),
        potential.domain().diam().to_f64_lossy(),
        eps.to_f64_lossy(),
    ))
}

/// `kappa` when `kappa L^2 >= eps`, else `2 eps / (L^2 (1 + e^{1 - kappa L^2 / eps}))`.
pub fn langevin_rate(kappa: f64, diameter: f64, eps: f64) -> f64 {
    let (first, second) = langevin_rate_branches(kappa, diameter, eps);
    if kappa * diameter * diameter >= eps {
        first
    } else {
        second
    }
}

/// Both branches of the Langevin rate, for continuity checks at the switch.
pub fn langevin_rate_branches(kappa: f64, diameter: f64, eps: f64) -> (f64, f64) {
    let l2 = diameter * diameter;
    let t = 1.0 - kappa * l2 / eps;
    // ln(1 + e^t) without overflow
    let softplus = if t > 30.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    };
    (kappa, ((2.0 * eps / l2).ln() - softplus).exp())
}

/// Straight-line least-squares fit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return Err(Error::Fit("need at least two paired points".into()));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DecayFit {
    /// Positive decay constant, `-d log(divergence) / dt`.
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Fits `divergence ~ exp(intercept - rate t)` over points above `floor`.
pub fn fit_decay_rate(series: &[(f64, f64)], floor: f64) -> Result<DecayFit> {
    let (ts, logs): (Vec<f64>, Vec<f64>) = series
        .iter()
        .filter(|(t, d)| t.is_finite() && d.is_finite() && *d > floor && *d > 0.0)
        .map(|(t, d)| (*t, d.ln()))
        .unzip();
    if ts.len() < 5 {
        return Err(Error::Fit(format!(
            "only {} points above the noise floor {floor}, need at least 5",
            ts.len()
        )));
    }
    let fit = linear_fit(&ts, &logs)?;
    Ok(DecayFit {
        rate: -fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        points: ts.len(),
    })
}

/// Default fit floor for histogram chi-squared: three times `(m - 1) / n`.
pub fn chi2_noise_floor(cells: usize, particles: usize) -> f64 {
    3.0 * (cells as f64 - 1.0) / particles as f64
}
