//! Adaptive-diffusion samplers for Gibbs densities on periodic domains, with
//! Fokker–Planck and exit-time reference computations.

// Checks of the form `!(x > 0)` are deliberate: they reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod domain;
pub mod dynamics;
pub mod error;
pub mod exit_time;
pub mod experiment;
pub mod fpe;
pub mod gibbs;
pub mod rates;
pub mod rng;
pub mod scalar;

pub use config::{ConfigMap, ExperimentConfig};
pub use domain::{CriticalPoint, Extrema, Potential, PotentialKind, TorusDomain};
pub use dynamics::{
    em_step, em_step_range, simulate, Dynamics, EnsembleState, InitialDistribution, WeightGenerator, WeightKind,
};
pub use error::{Error, Result};
pub use exit_time::{mfpt_asymptotic, mfpt_derivfree, mfpt_langevin, mfpt_monte_carlo, ExitDynamics, ExitProblem};
pub use fpe::{fpe_solve, fpe_step, FpeOperator, FpeOptions, FpeState};
pub use gibbs::{
    chi2_divergence, kl_divergence, l1_distance, sample_gibbs, tv_distance, GibbsTable, GridDensity, GridMesh,
};
pub use rates::{fit_decay_rate, general_rate_bound, langevin_rate_bound, DecayFit, LinearFit, RateReport};
pub use rng::PhiloxStream;
pub use scalar::Scalar;

pub type Potential64 = Potential<f64>;
pub type Potential32 = Potential<f32>;
pub type Dynamics64 = Dynamics<f64>;
pub type Dynamics32 = Dynamics<f32>;
pub type Ensemble64 = EnsembleState<f64>;
pub type Ensemble32 = EnsembleState<f32>;
