//! Runners behind the `sample`, `exit`, `rates` and `fpe` subcommands. Each
//! writes its CSV/JSON outputs plus the resolved `config.json` to an output
//! directory and returns a typed summary.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::json;

use crate::config::ExperimentConfig;
use crate::domain::Potential;
use crate::dynamics::{simulate, Dynamics, EnsembleState, InitialDistribution, WeightGenerator, WeightKind};
use crate::error::{Error, Result};
use crate::exit_time::{
    arrhenius_fit, default_t_cap, mfpt_asymptotic, mfpt_derivfree, mfpt_langevin, mfpt_monte_carlo_extending,
    power_law_fit, write_exit_csv, ExitDynamics, ExitProblem, ExitRow,
};
use crate::fpe::{fpe_solve, FpeOperator, FpeOptions, FpeState};
use crate::gibbs::{chi2_divergence, fmt_float, kl_divergence, tv_distance, GibbsTable, GridDensity, GridMesh};
use crate::rates::{
    chi2_noise_floor, fit_decay_rate, general_rate_bound, langevin_rate_bound, DecayFit, LinearFit, RateReport,
};

/// Resolution of the table that supplies `Z_G` to derivative-free dynamics.
fn normalization_resolution(dim: usize) -> usize {
    if dim == 1 {
        4096
    } else {
        512
    }
}

/// Builds a dynamics kind by name, computing `Z_G` when it is needed.
pub fn build_dynamics(kind: &str, potential: &Potential<f64>, eps: f64) -> Result<Dynamics<f64>> {
    let weight = match kind {
        "langevin" => WeightKind::Langevin,
        "derivative_free" => WeightKind::DerivativeFree,
        "linear" => WeightKind::Linear,
        other => return Err(Error::config("dynamics.kind", format!("unknown dynamics `{other}`"))),
    };
    let z_g = match weight {
        WeightKind::DerivativeFree => {
            Some(GibbsTable::new(potential, eps, normalization_resolution(potential.domain().dim()))?.z_g())
        }
        _ => None,
    };
    Dynamics::build(WeightGenerator::new(weight, eps), potential.clone(), z_g)
}

fn run_tag(kind: &str, c: Option<f64>) -> String {
    match c {
        Some(c) => format!("{kind}_c{c}"),
        None => kind.to_string(),
    }
}

fn prepare_out(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.json"), cfg.to_map().to_json_pretty() + "\n")?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(std::io::Error::other(e)))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// `t, kl, chi2, tv` rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DivergencePoint {
    pub t: f64,
    pub kl: f64,
    pub chi2: f64,
    pub tv: f64,
}

fn write_divergence_csv(path: &Path, series: &[DivergencePoint]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(w, "t,kl,chi2,tv")?;
    for p in series {
        writeln!(
            w,
            "{},{},{},{}",
            fmt_float(p.t),
            fmt_float(p.kl),
            fmt_float(p.chi2),
            fmt_float(p.tv)
        )?;
    }
    w.flush()?;
    Ok(())
}

fn divergence_point(t: f64, density: &GridDensity<f64>, target: &GibbsTable<f64>) -> Result<DivergencePoint> {
    Ok(DivergencePoint {
        t,
        kl: kl_divergence(density, &target.density)?,
        chi2: chi2_divergence(density, &target.density)?,
        tv: tv_distance(density, &target.density)?,
    })
}

fn write_particles_csv(path: &Path, states: &[&EnsembleState<f64>]) -> Result<()> {
    let mut w = std::io::BufWriter::new(fs::File::create(path)?);
    let dim = states.first().map_or(1, |s| s.dim);
    let cols: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    writeln!(w, "t,particle_id,{}", cols.join(","))?;
    for s in states {
        let t = fmt_float(s.time);
        for (i, p) in s.particles().enumerate() {
            write!(w, "{t},{i}")?;
            for x in p {
                write!(w, ",{}", fmt_float(*x))?;
            }
            writeln!(w)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn fit_or_none(series: &[(f64, f64)], floor: f64, what: &str, tag: &str) -> Option<DecayFit> {
    match fit_decay_rate(series, floor) {
        Ok(f) => Some(f),
        Err(e) => {
            log::warn!("{tag}: no {what} decay fit: {e}");
            None
        }
    }
}

/// Evenly spaced times `0, every, 2 every, ...` up to `t_final`, plus extras.
fn schedule(every: f64, t_final: f64, extra: &[f64]) -> Vec<f64> {
    let count = (t_final / every * (1.0 + 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=count).map(|k| (k as f64 * every).min(t_final)).collect();
    times.extend_from_slice(extra);
    times.push(t_final);
    times.sort_by(f64::total_cmp);
    times.dedup();
    times
}

/// Voronoi assignment of mesh cells to the nearest local minimizer.
pub fn mode_masses(density: &GridDensity<f64>, potential: &Potential<f64>) -> Result<Vec<f64>> {
    let ext = potential.extrema()?;
    let domain = potential.domain();
    let minimizers = &ext.minimizers;
    let mut masses = vec![0.0; minimizers.len()];
    if minimizers.is_empty() {
        return Ok(masses);
    }
    let mut c = vec![0.0; density.mesh.dim()];
    for (cell, mass) in density.masses().enumerate() {
        density.mesh.center_into(cell, &mut c);
        let nearest = minimizers
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let d2: f64 = c
                    .iter()
                    .zip(m)
                    .map(|(a, b)| domain.periodic_delta(*a, *b).powi(2))
                    .sum();
                (d2, k)
            })
            .min_by(|a, b| a.partial_cmp(b).expect("finite distances"))
            .expect("non-empty")
            .1;
        masses[nearest] += mass;
    }
    Ok(masses)
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleRun {
    pub tag: String,
    pub dynamics: String,
    pub c: Option<f64>,
    pub divergence: Vec<DivergencePoint>,
    pub chi2_fit: Option<DecayFit>,
    pub kl_fit: Option<DecayFit>,
    /// Histogram mass in the Voronoi cell of each local minimizer at the final time.
    pub mode_masses: Vec<f64>,
    pub noise_floor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SampleSummary {
    pub runs: Vec<SampleRun>,
}

/// Simulates each configured dynamics and potential, histograms every snapshot
/// and scores it against the Gibbs table.
pub fn run_sample(cfg: &ExperimentConfig, out: &Path) -> Result<SampleSummary> {
    prepare_out(cfg, out)?;
    let times = schedule(cfg.snapshot_every, cfg.t_final, &cfg.snapshot_times);
    let mut all_times = times.clone();
    all_times.extend_from_slice(&cfg.particle_snapshot_times);
    let mut runs = Vec::new();
    for (c, potential) in cfg.potentials()? {
        let mesh = GridMesh::new(potential.domain(), cfg.resolution)?;
        let target = GibbsTable::new(&potential, cfg.eps, cfg.resolution)?;
        for kind in &cfg.dynamics {
            let tag = run_tag(kind, c);
            let dir = out.join(&tag);
            fs::create_dir_all(&dir)?;
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let snaps = simulate(
                &dynamics,
                &cfg.init,
                cfg.n_particles,
                cfg.t_final,
                cfg.dt,
                &all_times,
                cfg.seed,
            )?;
            let step_of = |t: f64| {
                if t >= cfg.t_final {
                    snaps.last().expect("final snapshot").step
                } else {
                    (t / cfg.dt * (1.0 + 1e-12)).floor() as u64
                }
            };
            let pick = |t: f64| snaps.iter().find(|s| s.step == step_of(t)).expect("scheduled snapshot");

            let mut divergence = Vec::with_capacity(times.len());
            let mut last_step = None;
            for &t in &times {
                let s = pick(t);
                if last_step == Some(s.step) {
                    continue;
                }
                last_step = Some(s.step);
                let h = GridDensity::from_particles(s, &mesh)?;
                divergence.push(divergence_point(s.time, &h, &target)?);
            }
            write_divergence_csv(&dir.join("divergence.csv"), &divergence)?;

            let mut particle_states: Vec<&EnsembleState<f64>> =
                cfg.particle_snapshot_times.iter().map(|&t| pick(t)).collect();
            particle_states.dedup_by_key(|s| s.step);
            write_particles_csv(&dir.join("snapshots.csv"), &particle_states)?;

            let last = snaps.last().expect("final snapshot");
            let final_density = GridDensity::from_particles(last, &mesh)?;
            final_density.write_csv(&dir.join("density_final.csv"))?;

            let noise_floor = chi2_noise_floor(mesh.cell_count(), cfg.n_particles);
            let floor = cfg.fit_floor.unwrap_or(noise_floor);
            let chi2: Vec<(f64, f64)> = divergence.iter().map(|p| (p.t, p.chi2)).collect();
            let kl: Vec<(f64, f64)> = divergence.iter().map(|p| (p.t, p.kl)).collect();
            let mode_masses = if potential.domain().dim() == 2 {
                mode_masses(&final_density, &potential)?
            } else {
                Vec::new()
            };
            runs.push(SampleRun {
                chi2_fit: fit_or_none(&chi2, floor, "chi2", &tag),
                kl_fit: fit_or_none(&kl, floor / 2.0, "KL", &tag),
                tag,
                dynamics: kind.clone(),
                c,
                divergence,
                mode_masses,
                noise_floor,
            });
        }
    }
    let summary = SampleSummary { runs };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitFits {
    pub dynamics: String,
    pub method: String,
    /// `log T` against `log(1/eps)`.
    pub power_law: Option<LinearFit>,
    /// `log T` against `1/eps`.
    pub arrhenius: Option<LinearFit>,
    /// Exponent of the asymptotic estimate at the smallest `eps`.
    pub asymptotic_exponent: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExitSummary {
    #[serde(skip)]
    pub rows: Vec<ExitRow>,
    pub fits: Vec<ExitFits>,
}

/// Quadrature, asymptotic and Monte Carlo exit times over the `eps` grid.
pub fn run_exit(cfg: &ExperimentConfig, out: &Path) -> Result<ExitSummary> {
    prepare_out(cfg, out)?;
    let potentials = cfg.potentials()?;
    if potentials.len() != 1 || cfg.dim != 1 {
        return Err(Error::config(
            "potential",
            "exit runs need a single one-dimensional potential",
        ));
    }
    let potential = &potentials[0].1;
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for kind in &cfg.dynamics {
        let which = match kind.as_str() {
            "langevin" => ExitDynamics::Langevin,
            "derivative_free" => ExitDynamics::DerivativeFree,
            _ => {
                return Err(Error::config(
                    "dynamics.kind",
                    "exit times support langevin and derivative_free",
                ))
            }
        };
        let dt = match which {
            ExitDynamics::Langevin => cfg.exit.dt_langevin,
            ExitDynamics::DerivativeFree => cfg.exit.dt_derivative_free,
        };
        let mut quad = Vec::new();
        let mut mc = Vec::new();
        let mut exponent = None;
        for &eps in &cfg.exit.eps {
            let e = &cfg.exit;
            let prob = ExitProblem::new(potential.clone(), e.a, e.b, e.x0, eps, e.hit_tolerance)?;
            let q = match which {
                ExitDynamics::Langevin => mfpt_langevin(&prob, e.quad_points)?,
                ExitDynamics::DerivativeFree => mfpt_derivfree(&prob, e.quad_points)?,
            };
            quad.push(q.value);
            rows.push(ExitRow {
                eps,
                dynamics: kind.clone(),
                method: "quadrature".into(),
                mean_exit_time: Some(q.value),
                stderr: None,
                censored: None,
            });
            match mfpt_asymptotic(&prob, which) {
                Ok(a) => {
                    exponent.get_or_insert(a.exponent);
                    rows.push(ExitRow {
                        eps,
                        dynamics: kind.clone(),
                        method: "asymptotic".into(),
                        mean_exit_time: Some(a.value),
                        stderr: None,
                        censored: None,
                    });
                }
                Err(err) => log::warn!("{kind} at eps = {eps}: no asymptotic estimate: {err}"),
            }
            if e.n_runs > 0 {
                let dynamics = build_dynamics(kind, potential, eps)?;
                let t_cap = e.t_cap.unwrap_or_else(|| default_t_cap(eps));
                let r = mfpt_monte_carlo_extending(&prob, &dynamics, e.n_runs, dt, t_cap, cfg.seed)?;
                mc.push(r.mean);
                rows.push(ExitRow {
                    eps,
                    dynamics: kind.clone(),
                    method: "monte_carlo".into(),
                    mean_exit_time: Some(r.mean),
                    stderr: Some(r.stderr),
                    censored: Some(r.censored),
                });
            } else {
                rows.push(ExitRow {
                    eps,
                    dynamics: kind.clone(),
                    method: "monte_carlo".into(),
                    mean_exit_time: None,
                    stderr: None,
                    censored: None,
                });
            }
        }
        for (method, values) in [("quadrature", &quad), ("monte_carlo", &mc)] {
            if values.len() >= 2 {
                fits.push(ExitFits {
                    dynamics: kind.clone(),
                    method: method.into(),
                    power_law: power_law_fit(&cfg.exit.eps, values).ok(),
                    arrhenius: arrhenius_fit(&cfg.exit.eps, values).ok(),
                    asymptotic_exponent: exponent,
                });
            }
        }
    }
    write_exit_csv(&rows, &out.join("exit_times.csv"))?;
    let summary = ExitSummary { rows, fits };
    write_json(&out.join("slopes.json"), &json!({ "fits": summary.fits }))?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct EmpiricalRates {
    pub chi2: Option<DecayFit>,
    pub kl: Option<DecayFit>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RateRun {
    pub tag: String,
    pub c: Option<f64>,
    pub report: RateReport,
    pub langevin_rate_bound: f64,
    pub empirical: Option<EmpiricalRates>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatesSummary {
    pub runs: Vec<RateRun>,
    /// Langevin bound at the largest `c` below the bound at the smallest `c`.
    pub langevin_rate_decreases_with_c: Option<bool>,
    /// Derivative-free `lambda_eps` across `c` within 20% of the largest.
    pub derivative_free_lambda_eps_within_20pct: Option<bool>,
}

/// Rate bounds, optionally with rates fitted to Fokker–Planck solves.
pub fn run_rates(cfg: &ExperimentConfig, out: &Path) -> Result<RatesSummary> {
    prepare_out(cfg, out)?;
    let mut runs = Vec::new();
    for (c, potential) in cfg.potentials()? {
        for kind in &cfg.dynamics {
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let report = general_rate_bound(&dynamics, cfg.c_pi, cfg.c_lsi)?;
            let empirical = if cfg.rates_fpe {
                let (series, _) = fpe_series(cfg, &dynamics)?;
                Some(fit_fpe_series(cfg, &series, &run_tag(kind, c)))
            } else {
                None
            };
            runs.push(RateRun {
                tag: run_tag(kind, c),
                c,
                langevin_rate_bound: langevin_rate_bound(&potential, cfg.eps)?,
                report,
                empirical,
            });
        }
    }
    let by_c = |kind: &str| -> Vec<&RateRun> {
        let mut v: Vec<&RateRun> = runs
            .iter()
            .filter(|r| r.report.dynamics == kind && r.c.is_some())
            .collect();
        v.sort_by(|a, b| a.c.partial_cmp(&b.c).expect("finite c"));
        v
    };
    let sweep = cfg.sweeps_c();
    let langevin_rate_decreases_with_c = sweep.then(|| {
        let v = by_c("langevin");
        let l: Vec<f64> = if v.is_empty() {
            // Fall back to the curvature bound carried by every run.
            let mut all: Vec<&RateRun> = runs.iter().filter(|r| r.c.is_some()).collect();
            all.sort_by(|a, b| a.c.partial_cmp(&b.c).expect("finite c"));
            all.iter().map(|r| r.langevin_rate_bound).collect()
        } else {
            v.iter().map(|r| r.langevin_rate_bound).collect()
        };
        l.len() >= 2 && l.last() < l.first()
    });
    let derivative_free_lambda_eps_within_20pct = {
        let v = by_c("derivative_free");
        (sweep && v.len() >= 2).then(|| {
            let lam: Vec<f64> = v.iter().map(|r| r.report.lambda_eps).collect();
            let hi = lam.iter().copied().fold(f64::MIN, f64::max);
            let lo = lam.iter().copied().fold(f64::MAX, f64::min);
            hi - lo <= 0.2 * hi
        })
    };
    let summary = RatesSummary {
        runs,
        langevin_rate_decreases_with_c,
        derivative_free_lambda_eps_within_20pct,
    };
    write_json(&out.join("rates.json"), &summary)?;
    Ok(summary)
}

/// Initial density on the Fokker–Planck grid matching the particle initializer.
pub fn initial_density(init: &InitialDistribution<f64>, mesh: &GridMesh<f64>, period: f64) -> Result<FpeState<f64>> {
    match init {
        InitialDistribution::Uniform => FpeState::from_fn(mesh, 1, |_| 1.0),
        InitialDistribution::Point(p) => {
            let mut values = vec![0.0; mesh.cell_count()];
            let mut w = p.clone();
            for x in &mut w {
                *x -= period * ((*x + period / 2.0) / period).floor();
            }
            values[mesh.cell_of(&w)] = 1.0;
            FpeState::new(GridDensity::new(mesh.clone(), values)?)
        }
        InitialDistribution::Gaussian { mean, stddev } => {
            let sub = if mesh.dim() == 1 { 8 } else { 4 };
            let s2 = 2.0 * stddev * stddev;
            // Wrapped normal, product over axes.
            FpeState::from_fn(mesh, sub, |x| {
                x.iter()
                    .zip(mean)
                    .map(|(xi, mi)| {
                        (-2..=2)
                            .map(|k| (-(xi - mi - k as f64 * period).powi(2) / s2).exp())
                            .sum::<f64>()
                    })
                    .product()
            })
        }
    }
}

fn fpe_series(cfg: &ExperimentConfig, dynamics: &Dynamics<f64>) -> Result<(Vec<DivergencePoint>, Vec<FpeState<f64>>)> {
    let potential = dynamics.potential();
    let mesh = GridMesh::new(potential.domain(), cfg.fpe.resolution)?;
    let target = GibbsTable::new(potential, cfg.eps, cfg.fpe.resolution)?;
    let op = FpeOperator::new(dynamics, &mesh)?;
    let rho0 = initial_density(&cfg.init, &mesh, potential.domain().period())?;
    let times = schedule(cfg.fpe.snapshot_every, cfg.fpe.t_final, &[]);
    let options = FpeOptions {
        max_substeps: cfg.fpe.max_substeps,
    };
    let snaps = fpe_solve(&op, &rho0, cfg.fpe.t_final, &times, options)?;
    let series = snaps
        .iter()
        .map(|s| divergence_point(s.time, &s.density, &target))
        .collect::<Result<Vec<_>>>()?;
    Ok((series, snaps))
}

fn fit_fpe_series(cfg: &ExperimentConfig, series: &[DivergencePoint], tag: &str) -> EmpiricalRates {
    let floor = cfg.fpe.fit_floor;
    let chi2: Vec<(f64, f64)> = series.iter().map(|p| (p.t, p.chi2)).collect();
    let kl: Vec<(f64, f64)> = series
        .iter()
        .filter(|p| p.t >= cfg.kl_fit_t_min)
        .map(|p| (p.t, p.kl))
        .collect();
    EmpiricalRates {
        chi2: fit_or_none(&chi2, floor, "chi2", tag),
        kl: fit_or_none(&kl, floor, "KL", tag),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FpeRun {
    pub tag: String,
    pub dynamics: String,
    pub c: Option<f64>,
    pub divergence: Vec<DivergencePoint>,
    pub empirical: EmpiricalRates,
    pub clipped: u64,
    #[serde(skip)]
    pub snapshots: Vec<FpeState<f64>>,
}

#[derive(Clone, Debug, Serialize)]
pub struct FpeSummary {
    pub runs: Vec<FpeRun>,
}

/// Deterministic Fokker–Planck solves with divergence series.
pub fn run_fpe(cfg: &ExperimentConfig, out: &Path) -> Result<FpeSummary> {
    prepare_out(cfg, out)?;
    let mut runs = Vec::new();
    for (c, potential) in cfg.potentials()? {
        for kind in &cfg.dynamics {
            let tag = run_tag(kind, c);
            let dir = out.join(&tag);
            fs::create_dir_all(&dir)?;
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let (divergence, snapshots) = fpe_series(cfg, &dynamics)?;
            FpeState::write_csv(&snapshots, &dir.join("fpe_snapshots.csv"))?;
            write_divergence_csv(&dir.join("fpe_divergence.csv"), &divergence)?;
            runs.push(FpeRun {
                empirical: fit_fpe_series(cfg, &divergence, &tag),
                clipped: snapshots.last().map_or(0, |s| s.clipped),
                tag,
                dynamics: kind.clone(),
                c,
                divergence,
                snapshots,
            });
        }
    }
    let summary = FpeSummary { runs };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs `f` on a pool of `threads` workers, or on the global pool when `None`.
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(Error::config("threads", "need at least one thread")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::config("threads", e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}
