use std::sync::Arc;

use crackgrowth::conformance::{check_energy_continuity, check_minimizer_convergence, ConvergenceScenario};
use crackgrowth::energy::EnergyCache;
use crackgrowth::evolution::{
    audit_monotone_loading, energy_balance, run_evolution, CandidatePolicy, LoadSample, LoadingProgram, Profile,
    RunSetup, Stepper, TimeGrid,
};
use crackgrowth::geometry::contains;
use crackgrowth::mesh::{triangulate, MeshParams};
use crackgrowth::oracle::{growth_benchmark, slit_disk, slit_mode_iii, subcritical_benchmark};
use crackgrowth::sif::{fit_sif, griffith_audit, release_rate_richardson, GriffithTolerances};
use crackgrowth::solver::{solve, BoundaryDatum};
use crackgrowth::{CrackSet, DomainSpec, Error, Point2, Polyline};
use proptest::prelude::*;

const H: f64 = 1.0 / 64.0;

fn assert_irreversible(setup: &RunSetup) {
    let state = run_evolution(setup).unwrap();
    assert!(contains(&state.steps[0].crack, &setup.initial_crack, 0.0));
    for j in 0..state.steps.len() {
        for i in 0..=j {
            assert!(contains(&state.steps[j].crack, &state.steps[i].crack, 0.0), "K_{i} not in K_{j}");
        }
    }
    for w in state.steps.windows(2) {
        assert!(w[1].energy.surface >= w[0].energy.surface);
    }
}

/// Interior slit of the unit square with two tips.
fn two_tip_setup(loading: LoadingProgram, policy: CandidatePolicy) -> RunSetup {
    RunSetup {
        domain: DomainSpec::unit_square(),
        initial_crack: CrackSet::tight(vec![
            Polyline::segment(Point2::new(0.3, 0.5), Point2::new(0.55, 0.5)).unwrap(),
        ]),
        max_components: 1,
        loading,
        grid: TimeGrid::new(0.25).unwrap(),
        mesh: MeshParams::new(0.1, 1.0 / 48.0),
        policy,
    }
}

#[test]
fn irreversible_on_every_scenario() {
    assert_irreversible(&growth_benchmark(1.0 / 16.0, H).unwrap());
    let shear = LoadingProgram::proportional(
        BoundaryDatum::mode_iii(1.0, Point2::new(0.55, 0.5), Point2::new(1.0, 0.0)),
        Profile::Power { scale: 2.0, exponent: 2.0 },
    );
    assert_irreversible(&two_tip_setup(shear, CandidatePolicy::new(5, 40.0, 2.0 / 48.0, 8.0 / 48.0, 2, 1000).unwrap()));
    let sampled = LoadingProgram::Sampled {
        samples: vec![
            LoadSample { t: 0.0, datum: BoundaryDatum::Zero },
            LoadSample { t: 0.5, datum: slit_mode_iii(1.4) },
            LoadSample { t: 1.0, datum: slit_mode_iii(0.5) },
        ],
    };
    let mut s = growth_benchmark(1.0 / 8.0, H).unwrap();
    s.loading = sampled;
    assert_irreversible(&s);
}

#[test]
fn zero_initial_load_keeps_initial_crack() {
    let s = growth_benchmark(0.25, H).unwrap();
    let state = run_evolution(&s).unwrap();
    assert_eq!(state.steps[0].crack, s.initial_crack);
}

#[test]
fn balance_residual_decays_with_delta() {
    let r: Vec<f64> = [8.0, 16.0, 32.0]
        .iter()
        .map(|n| energy_balance(&run_evolution(&growth_benchmark(1.0 / n, H).unwrap()).unwrap()).max_abs_residual)
        .collect();
    assert!(r[0] > r[1] && r[1] > r[2], "{r:?}");
}

#[test]
fn continuity_statistic_shrinks() {
    let coarse = run_evolution(&growth_benchmark(1.0 / 8.0, H).unwrap()).unwrap();
    let fine = run_evolution(&growth_benchmark(1.0 / 16.0, H).unwrap()).unwrap();
    let r = check_energy_continuity(&coarse, &fine);
    assert!(r.pass, "{r:?}");
    assert!(r.coarse.max_surface_jump > 0.0);
    let mut zero = growth_benchmark(0.25, H).unwrap();
    zero.loading = LoadingProgram::zero();
    let z = run_evolution(&zero).unwrap();
    let r = check_energy_continuity(&z, &z);
    assert!(r.pass && r.coarse.max_total_jump == 0.0 && r.coarse.max_surface_jump == 0.0);
}

#[test]
fn greedy_matches_exhaustive_with_one_active_tip() {
    let policy = CandidatePolicy::new(5, 40.0, 2.0 / 48.0, 8.0 / 48.0, 1, 1000).unwrap();
    let base = two_tip_setup(LoadingProgram::zero(), policy.clone());
    let g = BoundaryDatum::mode_iii(3.0, Point2::new(0.55, 0.5), Point2::new(1.0, 0.0));
    let mut greedy = policy.clone();
    greedy.allow_all_tips = false;
    let pick = |p: &CandidatePolicy| {
        let stepper = Stepper { domain: &base.domain, mesh: base.mesh, policy: p, cache: Arc::new(EnergyCache::new()) };
        stepper.step_minimize(&base.initial_crack, &g).unwrap()
    };
    let (full, part) = (pick(&policy), pick(&greedy));
    assert!(full.candidates <= 1000 && full.candidates > part.candidates);
    assert!(!full.moves.is_empty());
    assert_eq!(full.crack, part.crack);
}

#[test]
fn runs_are_deterministic() {
    let s = growth_benchmark(1.0 / 16.0, H).unwrap();
    let a = run_evolution(&s).unwrap();
    let b = run_evolution(&s).unwrap();
    assert_eq!(a.to_jsonl(), b.to_jsonl());
    assert_eq!(serde_json::to_string(&a.to_state_file()).unwrap(), serde_json::to_string(&b.to_state_file()).unwrap());
}

#[test]
fn subcritical_run_has_no_growth_and_subcritical_sif() {
    let state = run_evolution(&subcritical_benchmark(1.0 / 8.0, H).unwrap()).unwrap();
    let r = griffith_audit(&state, GriffithTolerances::default());
    assert!(r.pass && r.growth_checks == 0 && r.max_rest_kappa2 < 1.0, "{r:?}");
    assert!(state.steps.iter().all(|s| s.tips.iter().all(|t| t.delta_sigma == 0.0)));
}

#[test]
fn monotone_audit_needs_proportional_loading() {
    let mut s = growth_benchmark(0.25, H).unwrap();
    s.loading = LoadingProgram::Sampled {
        samples: vec![
            LoadSample { t: 0.0, datum: BoundaryDatum::Zero },
            LoadSample { t: 1.0, datum: slit_mode_iii(1.0) },
        ],
    };
    let state = run_evolution(&s).unwrap();
    assert!(matches!(audit_monotone_loading(&state, 3, 0), Err(Error::NotProportional)));
}

#[test]
fn minimizers_converge_on_scenario_families() {
    let (d, k) = slit_disk();
    let p = MeshParams::new(1.0 / 8.0, 1.0 / 64.0);
    for s in [
        ConvergenceScenario::constant(d, k, slit_mode_iii(1.0), 3),
        ConvergenceScenario::slit_lengthening(0.5, 1024),
        ConvergenceScenario::rotating_slit(0.3, 1024),
    ] {
        let r = check_minimizer_convergence(&s, p, 2.0).unwrap();
        assert!(r.pass, "{r:?}");
        let gaps: Vec<f64> = r.rows.iter().map(|x| x.bulk_gap).collect();
        assert!(gaps.last() <= gaps.first());
    }
}

#[test]
fn sif_windows_agree() {
    let (d, k) = slit_disk();
    let h = 1.0 / 256.0;
    let m = Arc::new(triangulate(&d, &k, MeshParams::new(1.0 / 16.0, h)).unwrap());
    let u = solve(m, &slit_mode_iii(1.0)).unwrap();
    let tip = k.tips(Some(&d))[0];
    let a = fit_sif(&u, &k, &tip, 2.0 * h, 8.0 * h).unwrap().kappa;
    let b = fit_sif(&u, &k, &tip, 4.0 * h, 16.0 * h).unwrap().kappa;
    assert!((a - b).abs() <= 0.05 * b.abs(), "{a} vs {b}");
}

#[test]
fn release_estimators_converge_together() {
    // fixed physical window so the fit converges under refinement
    let (d, k) = slit_disk();
    let tip = k.tips(Some(&d))[0];
    let g = slit_mode_iii(0.5);
    let gap: Vec<f64> = [64.0, 128.0, 256.0]
        .iter()
        .map(|n| {
            let p = MeshParams::new(1.0 / 16.0, 1.0 / n);
            let u = solve(Arc::new(triangulate(&d, &k, p).unwrap()), &g).unwrap();
            let kappa = fit_sif(&u, &k, &tip, 1.0 / 16.0, 0.25).unwrap().kappa;
            (release_rate_richardson(&d, &k, &g, &tip, p).unwrap() - (1.0 - kappa * kappa)).abs()
        })
        .collect();
    assert!(gap[0] > gap[1] && gap[1] > gap[2], "{gap:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn sif_fit_scales_with_field(alpha in -5.0f64..5.0) {
        let (d, k) = slit_disk();
        let m = Arc::new(triangulate(&d, &k, MeshParams::new(0.125, 1.0 / 64.0)).unwrap());
        let u = solve(m, &slit_mode_iii(0.7)).unwrap();
        let tip = k.tips(Some(&d))[0];
        let base = fit_sif(&u, &k, &tip, 4.0 / 64.0, 16.0 / 64.0).unwrap().kappa;
        let scaled = fit_sif(&u.scaled(alpha), &k, &tip, 4.0 / 64.0, 16.0 / 64.0).unwrap().kappa;
        prop_assert!((scaled - alpha * base).abs() <= 1e-10);
    }
}
