//! Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned below.
//! Runs as a plain binary (`harness = false`) so the report is always printed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use advar_core::config::ConfigMap;
use advar_core::exit_time::{mfpt_monte_carlo, ExitDynamics};
use advar_core::experiment::{build_dynamics, initial_density, run_exit, run_fpe, run_sample, with_threads};
use advar_core::{
    chi2_divergence, fpe_solve, fpe_step, general_rate_bound, kl_divergence, l1_distance, mfpt_derivfree,
    mfpt_langevin, sample_gibbs, simulate, ExitProblem, ExperimentConfig, FpeOperator, FpeOptions, GibbsTable,
    GridDensity, GridMesh, Potential, Result, TorusDomain,
};

// Tolerances and budgets, fixed by the acceptance criteria.
const AC1_DF_SPREAD: f64 = 0.20;
const AC1_LANGEVIN_RATIO: f64 = 0.6;
const AC1_BUDGET: Duration = Duration::from_secs(5 * 60);
const AC2_COVERED_MASS: f64 = 0.01;
const AC2_EMPTY_MASS: f64 = 1e-3;
const AC2_MIN_EMPTY_MODES: usize = 8;
const AC2_BUDGET: Duration = Duration::from_secs(10 * 60);
const AC3_DF_SLOPE: (f64, f64) = (0.8, 1.2);
const AC3_LANGEVIN_R2: f64 = 0.95;
const AC3_BARRIER_REL: f64 = 0.25;
const AC3_BUDGET: Duration = Duration::from_secs(15 * 60);
const AC4_STDERRS: f64 = 3.0;
const AC4_FLAT_REL: f64 = 1e-6;
const AC5_MASS_REL: f64 = 1e-12;
const AC5_RESIDUAL_RATIO: f64 = 3.5;
const AC5_ROUNDING_ULPS: f64 = 64.0;
const AC5_L1: f64 = 0.05;
const AC6_SLACK: f64 = 0.95;
const AC8_FLOOR_MULTIPLE: f64 = 3.0;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { pass, detail })
}

fn preset_with(name: &str, overrides: &[&str]) -> Result<ExperimentConfig> {
    let mut m = ConfigMap::default();
    for o in overrides {
        m.set_assignment(o)?;
    }
    ExperimentConfig::resolve(Some(name), false, None, &m)
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().copied().fold(f64::MIN, f64::max);
    let lo = values.iter().copied().fold(f64::MAX, f64::min);
    (hi - lo) / hi
}

fn rate_by_c(summary: &advar_core::experiment::SampleSummary, kind: &str) -> Vec<(f64, Option<f64>)> {
    summary
        .runs
        .iter()
        .filter(|r| r.dynamics == kind)
        .map(|r| (r.c.unwrap_or(f64::NAN), r.chi2_fit.as_ref().map(|f| f.rate)))
        .collect()
}

/// Derivative-free rates agree across c while Langevin slows as c grows.
fn ac1(out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_preset("dw1d", false)?;
    let summary = run_sample(&cfg, out)?;
    let elapsed = start.elapsed();
    let df = rate_by_c(&summary, "derivative_free");
    let lv = rate_by_c(&summary, "langevin");
    let df_rates: Option<Vec<f64>> = df.iter().map(|(_, r)| *r).collect();
    let df_spread = df_rates.as_deref().map(spread);
    let lv_at = |c: f64| lv.iter().find(|(cc, _)| *cc == c).and_then(|(_, r)| *r);
    let ratio = lv_at(9.0).zip(lv_at(1.0)).map(|(a, b)| a / b);
    let pass = df_spread.is_some_and(|s| s <= AC1_DF_SPREAD)
        && ratio.is_some_and(|r| r <= AC1_LANGEVIN_RATIO)
        && elapsed <= AC1_BUDGET;
    outcome(
        pass,
        format!(
            "derivative-free chi2 rates by c {df:?}, spread {df_spread:?} (need <= {AC1_DF_SPREAD}); \
             langevin rates {lv:?}, c=9/c=1 ratio {ratio:?} (need <= {AC1_LANGEVIN_RATIO}); {elapsed:.1?}"
        ),
    )
}

/// Derivative-free covers all sixteen modes; Langevin stays trapped.
fn ac2(out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_preset("multimodal2d", false)?;
    let summary = run_sample(&cfg, out)?;
    let elapsed = start.elapsed();
    let masses = |kind: &str| {
        summary
            .runs
            .iter()
            .find(|r| r.dynamics == kind)
            .map(|r| r.mode_masses.clone())
            .unwrap_or_default()
    };
    let df = masses("derivative_free");
    let lv = masses("langevin");
    let df_min = df.iter().copied().fold(f64::INFINITY, f64::min);
    let empty = lv.iter().filter(|&&m| m < AC2_EMPTY_MASS).count();
    let pass = df.len() == 16
        && lv.len() == 16
        && df_min >= AC2_COVERED_MASS
        && empty >= AC2_MIN_EMPTY_MODES
        && elapsed <= AC2_BUDGET;
    outcome(
        pass,
        format!(
            "{} modes; derivative-free smallest mode mass {df_min:.4} (need >= {AC2_COVERED_MASS}); \
             langevin modes below {AC2_EMPTY_MASS}: {empty} (need >= {AC2_MIN_EMPTY_MODES}); {elapsed:.1?}",
            df.len()
        ),
    )
}

/// Exit-time scaling from Monte Carlo over the preset eps grid.
fn ac3(out: &Path) -> Result<Outcome> {
    let start = Instant::now();
    let cfg = ExperimentConfig::from_preset("exit_fig6", false)?;
    let summary = run_exit(&cfg, out)?;
    let elapsed = start.elapsed();
    // The preset well (A/2)(1 - cos 2x) with A = 1 has its saddle one unit above the minimum.
    let barrier = 1.0;
    let fit = |kind: &str, method: &str| summary.fits.iter().find(|f| f.dynamics == kind && f.method == method);
    let df_slope = fit("derivative_free", "monte_carlo")
        .and_then(|f| f.power_law.as_ref())
        .map(|p| p.slope);
    let lv = fit("langevin", "monte_carlo").and_then(|f| f.arrhenius.as_ref());
    let lv_quad = fit("langevin", "quadrature")
        .and_then(|f| f.arrhenius.as_ref())
        .map(|a| a.slope);
    let df_quad = fit("derivative_free", "quadrature")
        .and_then(|f| f.power_law.as_ref())
        .map(|p| p.slope);
    let pass = df_slope.is_some_and(|s| s >= AC3_DF_SLOPE.0 && s <= AC3_DF_SLOPE.1)
        && lv.is_some_and(|a| a.r_squared >= AC3_LANGEVIN_R2 && (a.slope - barrier).abs() <= AC3_BARRIER_REL * barrier)
        && elapsed <= AC3_BUDGET;
    outcome(
        pass,
        format!(
            "derivative-free log-log slope {df_slope:?} (need {AC3_DF_SLOPE:?}, quadrature {df_quad:?}); \
             langevin Arrhenius slope {:?} r2 {:?} (need within {AC3_BARRIER_REL} of {barrier}, r2 >= {AC3_LANGEVIN_R2}, \
             quadrature {lv_quad:?}); {elapsed:.1?}",
            lv.map(|a| a.slope),
            lv.map(|a| a.r_squared)
        ),
    )
}

/// Quadrature and Monte Carlo mean exit times agree.
fn ac4() -> Result<Outcome> {
    let eps = 0.5;
    let (a, b, x0, tol) = (-PI, PI, 0.0, 1e-2);
    let circle = TorusDomain::new(1, 2.0 * PI)?;
    let flat = Potential::constant_zero(circle)?;
    let well = Potential::cosine_well(1.0)?;
    let mut pass = true;
    let mut notes = Vec::new();

    let flat_prob = ExitProblem::new(flat.clone(), a, b, x0, eps, tol)?;
    let exact = (x0 - a) * (b - x0) / (2.0 * eps);
    for (which, q) in [
        ("langevin", mfpt_langevin(&flat_prob, 4000)?.value),
        ("derivative_free", mfpt_derivfree(&flat_prob, 4000)?.value),
    ] {
        let rel = ((q - exact) / exact).abs();
        pass &= rel <= AC4_FLAT_REL;
        notes.push(format!("flat {which} quadrature rel err {rel:.1e}"));
    }

    for (name, potential) in [("flat", &flat), ("cosine", &well)] {
        let prob = ExitProblem::new(potential.clone(), a, b, x0, eps, tol)?;
        for which in [ExitDynamics::Langevin, ExitDynamics::DerivativeFree] {
            let q = match which {
                ExitDynamics::Langevin => mfpt_langevin(&prob, 4000)?.value,
                ExitDynamics::DerivativeFree => mfpt_derivfree(&prob, 4000)?.value,
            };
            let dynamics = build_dynamics(which.name(), potential, eps)?;
            let mc = mfpt_monte_carlo(&prob, &dynamics, 1000, 1e-4, 1e6 / eps, 7)?;
            let z = (q - mc.mean).abs() / mc.stderr;
            pass &= z <= AC4_STDERRS && mc.censored == 0;
            notes.push(format!(
                "{name} {}: quadrature {q:.4}, MC {:.4} +- {:.4} ({z:.2} SE)",
                which.name(),
                mc.mean,
                mc.stderr
            ));
        }
    }
    outcome(pass, notes.join("; "))
}

/// Fokker-Planck oracle: conservation, stationarity and agreement with particles.
fn ac5() -> Result<Outcome> {
    let cfg = ExperimentConfig::from_preset("dw1d", false)?;
    let mut pass = true;
    let mut notes = Vec::new();

    // Mass conservation per explicit step.
    let mut worst_mass = 0.0f64;
    for (_, potential) in cfg.potentials()? {
        for kind in &cfg.dynamics {
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let mesh = GridMesh::new(potential.domain(), 256)?;
            let op = FpeOperator::new(&dynamics, &mesh)?;
            let mut state = initial_density(&cfg.init, &mesh, potential.domain().period())?;
            for _ in 0..2000 {
                let before = state.density.total_mass();
                state = fpe_step(&op, &state, op.admissible_dt())?;
                worst_mass = worst_mass.max(((state.density.total_mass() - before) / before).abs());
            }
        }
    }
    pass &= worst_mass <= AC5_MASS_REL;
    notes.push(format!("worst per-step mass change {worst_mass:.1e}"));

    // Stationarity of the tabulated Gibbs density, 128 against 256 cells.
    for (c, potential) in cfg.potentials()? {
        // Residual together with the rounding level of one application of the
        // operator, which scales with its fastest outflow rate.
        let residual = |kind: &str, res: usize| -> Result<(f64, f64)> {
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let table = GibbsTable::new(&potential, cfg.eps, res)?;
            let op = FpeOperator::new(&dynamics, table.mesh())?;
            Ok((
                op.step_residual(&table.density, 1.0)?,
                AC5_ROUNDING_ULPS * f64::EPSILON / op.admissible_dt(),
            ))
        };
        let ((coarse, coarse_noise), (fine, fine_noise)) =
            (residual("derivative_free", 128)?, residual("derivative_free", 256)?);
        let ratio = coarse / fine;
        // The derivative-free scheme preserves the tabulated density exactly, so
        // both residuals are rounding noise and their ratio carries no information.
        let ok = ratio >= AC5_RESIDUAL_RATIO || (coarse <= coarse_noise && fine <= fine_noise);
        pass &= ok;
        let (lv_coarse, lv_fine) = (residual("langevin", 128)?.0, residual("langevin", 256)?.0);
        notes.push(format!(
            "c={c:?} derivative-free residuals {coarse:.1e}/{fine:.1e} (ratio {ratio:.2}, rounding level \
             {coarse_noise:.1e}/{fine_noise:.1e}), langevin residuals {lv_coarse:.1e}/{lv_fine:.1e}"
        ));
    }

    // Particle histograms against the Fokker-Planck solution.
    let (res, n, times) = (128, 100_000, [1.0, 5.0]);
    let mut worst_l1 = 0.0f64;
    for (_, potential) in cfg.potentials()? {
        let mesh = GridMesh::new(potential.domain(), res)?;
        for kind in &cfg.dynamics {
            let dynamics = build_dynamics(kind, &potential, cfg.eps)?;
            let snaps = simulate(&dynamics, &cfg.init, n, times[1], cfg.dt, &times, cfg.seed)?;
            let op = FpeOperator::new(&dynamics, &mesh)?;
            let rho0 = initial_density(&cfg.init, &mesh, potential.domain().period())?;
            let fpe = fpe_solve(&op, &rho0, times[1], &times, FpeOptions::default())?;
            for (s, f) in snaps.iter().zip(&fpe) {
                let h = GridDensity::from_particles(s, &mesh)?;
                worst_l1 = worst_l1.max(l1_distance(&h, &f.density)?);
            }
        }
    }
    pass &= worst_l1 <= AC5_L1;
    notes.push(format!(
        "worst particle/FPE L1 at t in {times:?}: {worst_l1:.4} (need <= {AC5_L1})"
    ));
    outcome(pass, notes.join("; "))
}

/// Fokker-Planck decay is at least as fast as the general rate bounds.
fn ac6(out: &Path) -> Result<Outcome> {
    let mut pass = true;
    let mut notes = Vec::new();
    for name in ["dw1d", "exit_fig6"] {
        let cfg = ExperimentConfig::from_preset(name, false)?;
        let summary = run_fpe(&cfg, &out.join(name))?;
        let potentials = cfg.potentials()?;
        for run in &summary.runs {
            let potential = &potentials.iter().find(|(c, _)| *c == run.c).expect("run potential").1;
            let dynamics = build_dynamics(&run.dynamics, potential, cfg.eps)?;
            let bound = general_rate_bound(&dynamics, cfg.c_pi, cfg.c_lsi)?;
            let chi2 = run.empirical.chi2.as_ref().map(|f| f.rate);
            let kl = run.empirical.kl.as_ref().map(|f| f.rate);
            let ok = chi2.is_some_and(|r| r >= AC6_SLACK * 2.0 * bound.lambda1)
                && kl.is_some_and(|r| r >= AC6_SLACK * 2.0 * bound.lambda2);
            pass &= ok;
            notes.push(format!(
                "{name}/{}: chi2 {chi2:.3?} vs 2*lambda1 {:.3e}, KL {kl:.3?} vs 2*lambda2 {:.3e}",
                run.tag,
                2.0 * bound.lambda1,
                2.0 * bound.lambda2
            ));
        }
    }
    outcome(pass, notes.join("; "))
}

fn read_tree(root: &Path) -> Result<BTreeMap<String, Vec<u8>>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let key = path
                    .strip_prefix(root)
                    .expect("under root")
                    .to_string_lossy()
                    .into_owned();
                files.insert(key, std::fs::read(&path)?);
            }
        }
    }
    Ok(files)
}

/// Reruns produce identical files for any thread count.
fn ac7(out: &Path) -> Result<Outcome> {
    let jobs: [(&str, &str, &[&str]); 4] = [
        ("dw1d", "sample", &["n_particles=500", "t_final=1"]),
        ("dw1d", "fpe", &["t_final=1", "fpe.resolution=128"]),
        (
            "multimodal2d",
            "sample",
            &["n_particles=1000", "t_final=1", "snapshots.every=0.5"],
        ),
        ("exit_fig6", "exit", &["exit.n_runs=100", "exit.eps=[0.3,0.5]"]),
    ];
    let mut pass = true;
    let mut notes = Vec::new();
    for (preset, command, overrides) in jobs {
        let cfg = preset_with(preset, overrides)?;
        let mut reference: Option<BTreeMap<String, Vec<u8>>> = None;
        let mut identical = true;
        for threads in [1, 4, 8] {
            let dir = out.join(format!("{preset}_{command}_{threads}"));
            with_threads(Some(threads), || -> Result<()> {
                match command {
                    "sample" => run_sample(&cfg, &dir).map(drop),
                    "fpe" => run_fpe(&cfg, &dir).map(drop),
                    _ => run_exit(&cfg, &dir).map(drop),
                }
            })??;
            let files = read_tree(&dir)?;
            match &reference {
                None => reference = Some(files),
                Some(r) => identical &= *r == files,
            }
        }
        let count = reference
            .as_ref()
            .map_or(0, |r| r.keys().filter(|k| k.ends_with(".csv")).count());
        pass &= identical && count > 0;
        notes.push(format!("{preset} {command}: {count} CSVs identical = {identical}"));
    }
    outcome(pass, notes.join("; "))
}

/// Exact Gibbs draws score below the histogram noise floor.
fn ac8() -> Result<Outcome> {
    let (n, m, eps) = (100_000, 256, 0.25);
    let limit = AC8_FLOOR_MULTIPLE * (m as f64 - 1.0) / n as f64;
    let mut potentials: Vec<(String, Potential<f64>)> = [1.0, 5.0, 9.0]
        .iter()
        .map(|&c| Ok((format!("double well c={c}"), Potential::double_well(c)?)))
        .collect::<Result<_>>()?;
    potentials.push(("cosine well".into(), Potential::cosine_well(1.0)?));
    let mut pass = true;
    let mut notes = Vec::new();
    for (name, p) in &potentials {
        let table = GibbsTable::new(p, eps, m)?;
        let draws = sample_gibbs(p, eps, n, 11)?;
        let h = GridDensity::from_particles(&draws, &GridMesh::new(p.domain(), m)?)?;
        let kl = kl_divergence(&h, &table.density)?;
        let chi2 = chi2_divergence(&h, &table.density)?;
        pass &= kl < limit && chi2 < limit;
        notes.push(format!("{name}: KL {kl:.2e}, chi2 {chi2:.2e}"));
    }
    outcome(pass, format!("{} (need < {limit:.2e})", notes.join("; ")))
}

fn main() -> ExitCode {
    let scratch = tempfile::tempdir().expect("scratch directory");
    let root = scratch.path();
    type Check<'a> = Box<dyn Fn() -> Result<Outcome> + 'a>;
    let checks: Vec<(&str, &str, Check)> = vec![
        (
            "AC1",
            "rate uniformity vs curvature sensitivity",
            Box::new(|| ac1(&root.join("ac1"))),
        ),
        ("AC2", "mode coverage", Box::new(|| ac2(&root.join("ac2")))),
        ("AC3", "exit-time scaling", Box::new(|| ac3(&root.join("ac3")))),
        ("AC4", "quadrature vs Monte Carlo exit times", Box::new(ac4)),
        ("AC5", "Fokker-Planck oracle correctness", Box::new(ac5)),
        (
            "AC6",
            "decay rates respect the general bounds",
            Box::new(|| ac6(&root.join("ac6"))),
        ),
        (
            "AC7",
            "determinism across thread counts",
            Box::new(|| ac7(&root.join("ac7"))),
        ),
        ("AC8", "divergence estimator sanity", Box::new(ac8)),
    ];
    let only: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC")).collect();
    let mut failed = Vec::new();
    for (id, title, check) in &checks {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let (verdict, detail) = match check() {
            Ok(o) => (if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => ("FAIL", format!("error: {e}")),
        };
        if verdict == "FAIL" {
            failed.push(*id);
        }
        println!("{id} {verdict} {title} [{:.1?}]: {detail}", start.elapsed());
    }
    if failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
