//! Cross-module invariants checked on random inputs.

use std::f64::consts::PI;
use std::sync::LazyLock;

use advar_core::experiment::build_dynamics;
use advar_core::{
    chi2_divergence, em_step_range, fpe_step, general_rate_bound, kl_divergence, mfpt_derivfree, mfpt_langevin,
    sample_gibbs, simulate, tv_distance, Dynamics, EnsembleState, ExitProblem, FpeOperator, FpeState, GibbsTable,
    GridDensity, GridMesh, InitialDistribution, Potential, TorusDomain, WeightGenerator,
};
use proptest::prelude::*;

fn circle() -> TorusDomain<f64> {
    TorusDomain::new(1, 2.0 * PI).unwrap()
}

/// Built once: the first `extrema()` call on each potential runs a dense scan.
static BUILTIN: LazyLock<Vec<Potential<f64>>> = LazyLock::new(|| {
    let all = vec![
        Potential::double_well(1.0).unwrap(),
        Potential::double_well(5.0).unwrap(),
        Potential::double_well(9.0).unwrap(),
        Potential::cosine_well(1.0).unwrap(),
        Potential::sine_modes().unwrap(),
    ];
    for p in &all {
        p.extrema().unwrap();
    }
    all
});

fn builtin_potentials() -> &'static [Potential<f64>] {
    &BUILTIN
}

fn density(mesh: &GridMesh<f64>, weights: &[f64]) -> GridDensity<f64> {
    let total: f64 = weights.iter().sum::<f64>() * mesh.cell_volume();
    GridDensity::new(mesh.clone(), weights.iter().map(|w| w / total).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn scanned_bounds_enclose_fresh_points(u in prop::collection::vec(-1.0f64..1.0, 2)) {
        for p in builtin_potentials() {
            let d = p.domain();
            let ext = p.extrema().unwrap();
            let h = d.period() / ext.resolution as f64;
            let x: Vec<f64> = u[..p.dim()].iter().map(|v| v * d.period() / 2.0).collect();
            let f = p.eval_wrapped(&x);
            // Curvatures of the built-in kinds stay below 200, so h^2 slack is generous.
            let slack = 200.0 * h * h;
            prop_assert!(f >= ext.f_min - slack && f <= ext.f_max + slack, "{:?}: {f}", p.kind());
        }
    }

    #[test]
    fn wrap_is_idempotent(x in -100.0f64..100.0) {
        let d = circle();
        let w = d.wrap(x);
        prop_assert_eq!(d.wrap(w), w);
        prop_assert!(w >= d.lo() && w < d.lo() + d.period());
    }

    #[test]
    fn stepping_is_independent_of_the_partition(split in 1usize..63, seed in any::<u64>(), step in 0u64..1000) {
        let p = Potential::double_well(5.0).unwrap();
        for kind in ["langevin", "derivative_free"] {
            let dynamics = build_dynamics(kind, &p, 0.25).unwrap();
            let init = InitialDistribution::Uniform;
            let whole = EnsembleState::sample(&init, p.domain(), 64, seed).unwrap();
            let mut a = whole.positions.clone();
            em_step_range(&dynamics, &mut a, 0, seed, step, 1e-3).unwrap();
            let mut b = whole.positions.clone();
            let (head, tail) = b.split_at_mut(split);
            em_step_range(&dynamics, head, 0, seed, step, 1e-3).unwrap();
            em_step_range(&dynamics, tail, split, seed, step, 1e-3).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn derivative_free_drift_vanishes(u in prop::collection::vec(-1.0f64..1.0, 2), eps in 0.05f64..1.0) {
        for p in builtin_potentials() {
            let z = GibbsTable::new(p, eps, 256).unwrap().z_g();
            let dynamics = Dynamics::build(WeightGenerator::derivative_free(eps), p.clone(), Some(z)).unwrap();
            let x: Vec<f64> = u[..p.dim()].iter().map(|v| v * p.domain().period() / 2.0).collect();
            let drift = dynamics.drift(&x).unwrap();
            let scale = p.grad(&x).unwrap().iter().fold(0.0f64, |m, g| m.max(g.abs()));
            prop_assert!(drift.iter().all(|v| v.abs() <= 1e-12 * scale));
        }
    }

    #[test]
    fn divergences_are_nonnegative_and_vanish_on_the_target(
        weights in prop::collection::vec(0.0f64..1.0, 32),
        eps in 0.1f64..2.0,
    ) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let p = Potential::double_well(1.0).unwrap();
        let target = GibbsTable::new(&p, eps, 32).unwrap();
        let q = density(target.mesh(), &weights);
        prop_assert!(kl_divergence(&q, &target.density).unwrap() >= 0.0);
        prop_assert!(chi2_divergence(&q, &target.density).unwrap() >= 0.0);
        prop_assert!(tv_distance(&q, &target.density).unwrap() >= 0.0);
        prop_assert!(kl_divergence(&target.density, &target.density).unwrap().abs() <= 1e-12);
        prop_assert!(chi2_divergence(&target.density, &target.density).unwrap().abs() <= 1e-12);
        prop_assert!(tv_distance(&target.density, &target.density).unwrap().abs() <= 1e-12);
    }

    #[test]
    fn divergences_ignore_cell_labels(
        p_weights in prop::collection::vec(0.01f64..1.0, 32),
        q_weights in prop::collection::vec(0.01f64..1.0, 32),
        perm in Just((0..32usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let mesh = GridMesh::new(&circle(), 32).unwrap();
        let (p, q) = (density(&mesh, &p_weights), density(&mesh, &q_weights));
        let shuffle = |d: &GridDensity<f64>| {
            GridDensity::new(mesh.clone(), perm.iter().map(|&i| d.values[i]).collect()).unwrap()
        };
        let (ps, qs) = (shuffle(&p), shuffle(&q));
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * a.abs().max(1.0);
        prop_assert!(close(kl_divergence(&p, &q).unwrap(), kl_divergence(&ps, &qs).unwrap()));
        prop_assert!(close(chi2_divergence(&p, &q).unwrap(), chi2_divergence(&ps, &qs).unwrap()));
    }

    #[test]
    fn fpe_steps_conserve_mass(weights in prop::collection::vec(0.0f64..1.0, 64), c in 1.0f64..9.0) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let p = Potential::double_well(c).unwrap();
        let mesh = GridMesh::new(p.domain(), 64).unwrap();
        for kind in ["langevin", "derivative_free"] {
            let op = FpeOperator::new(&build_dynamics(kind, &p, 0.25).unwrap(), &mesh).unwrap();
            let mut state = FpeState::new(density(&mesh, &weights)).unwrap();
            for _ in 0..50 {
                let before = state.density.total_mass();
                state = fpe_step(&op, &state, op.admissible_dt()).unwrap();
                prop_assert!(((state.density.total_mass() - before) / before).abs() <= 1e-12);
                prop_assert!(state.density.values.iter().all(|&v| v >= 0.0));
            }
        }
    }

    #[test]
    fn exit_times_are_positive_inside_the_interval(frac in 0.001f64..0.999, eps in 0.2f64..1.0) {
        let p = Potential::cosine_well(1.0).unwrap();
        let x0 = -PI + frac * 2.0 * PI;
        let prob = ExitProblem::new(p, -PI, PI, x0, eps, 1e-2).unwrap();
        prop_assert!(mfpt_langevin(&prob, 1000).unwrap().value > 0.0);
        prop_assert!(mfpt_derivfree(&prob, 1000).unwrap().value > 0.0);
    }

    #[test]
    fn rate_bound_grows_with_eps(lo in 0.01f64..1.0, step in 0.01f64..1.0) {
        let p = Potential::double_well(5.0).unwrap();
        for kind in ["langevin", "derivative_free"] {
            let rate = |eps: f64| {
                let d = build_dynamics(kind, &p, eps).unwrap();
                general_rate_bound(&d, 1.0, 2.0).unwrap().log_lambda_eps
            };
            prop_assert!(rate(lo + step) > rate(lo));
        }
    }
}

#[test]
fn exit_times_vanish_at_the_endpoints() {
    let p = Potential::cosine_well(1.0).unwrap();
    let at = |x0: f64| {
        let prob = ExitProblem::new(p.clone(), -PI, PI, x0, 0.3, 1e-2).unwrap();
        (
            mfpt_langevin(&prob, 4000).unwrap().value,
            mfpt_derivfree(&prob, 4000).unwrap().value,
        )
    };
    let (mid_l, mid_d) = at(0.0);
    for x0 in [-PI + 1e-6, PI - 1e-6] {
        let (l, d) = at(x0);
        assert!(l < 1e-4 * mid_l, "langevin {l} vs {mid_l}");
        assert!(d < 1e-4 * mid_d, "derivative-free {d} vs {mid_d}");
    }
}

#[test]
fn rate_bounds_stay_finite_at_small_eps() {
    for p in builtin_potentials() {
        for kind in ["langevin", "derivative_free"] {
            let d = build_dynamics(kind, p, 1e-3).unwrap();
            let r = general_rate_bound(&d, 1.0, 2.0).unwrap();
            assert!(
                r.log_lambda_eps.is_finite() && r.log_d_max.is_finite(),
                "{kind} {:?}",
                p.kind()
            );
        }
    }
}

#[test]
fn gibbs_table_normalization_converges_at_second_order() {
    let p = Potential::cosine_well(1.0).unwrap();
    // The Bessel-series value of the partition function is the oracle.
    let eps: f64 = 0.3;
    let x = 1.0 / (2.0 * eps);
    let i0: f64 = (0..40)
        .map(|k| {
            let fact: f64 = (1..=k).map(|j| j as f64).product();
            (x / 2.0).powi(2 * k) / (fact * fact)
        })
        .sum();
    let exact = 2.0 * PI * (-x).exp() * i0;
    // The midpoint rule is spectrally accurate for smooth periodic integrands,
    // so the error can only shrink by at least the second-order factor.
    let err = |res: usize| (GibbsTable::new(&p, eps, res).unwrap().z_g() - exact).abs();
    let (e16, e32) = (err(16), err(32));
    assert!(e32 <= e16 / 4.0 || e32 <= 1e-13 * exact, "{e16} -> {e32}");
}

/// Initialized at the Gibbs density, the ensemble stays there.
#[test]
fn gibbs_density_is_stationary_for_both_dynamics() {
    let (n, eps, res) = (20_000, 0.25, 64);
    let p = Potential::double_well(5.0).unwrap();
    let mesh = GridMesh::new(p.domain(), res).unwrap();
    let target = GibbsTable::new(&p, eps, res).unwrap();
    let start = sample_gibbs(&p, eps, n, 3).unwrap();
    let tv0 = tv_distance(&GridDensity::from_particles(&start, &mesh).unwrap(), &target.density).unwrap();
    for kind in ["langevin", "derivative_free"] {
        let dynamics = build_dynamics(kind, &p, eps).unwrap();
        let mut state = start.clone();
        for step in 0..1000 {
            em_step_range(&dynamics, &mut state.positions, 0, 3, step, 1e-3).unwrap();
        }
        let tv1 = tv_distance(&GridDensity::from_particles(&state, &mesh).unwrap(), &target.density).unwrap();
        assert!(tv1 <= 2.0 * tv0, "{kind}: TV {tv0} at t = 0, {tv1} at t = 1");
    }
}

#[test]
fn simulation_reproduces_for_a_fixed_seed() {
    let p = Potential::sine_modes().unwrap();
    let dynamics = build_dynamics("derivative_free", &p, 0.1).unwrap();
    let init = InitialDistribution::Gaussian {
        mean: vec![0.1, 0.1],
        stddev: 0.05,
    };
    let run = || simulate(&dynamics, &init, 300, 0.2, 1e-3, &[0.1], 21).unwrap();
    assert_eq!(run(), run());
}
