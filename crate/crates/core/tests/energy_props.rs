use std::sync::Arc;

use crackgrowth::energy::{energy_power, local_energy_with_trace, total_energy, Ball};
use crackgrowth::evolution::run_evolution;
use crackgrowth::mesh::{triangulate, MeshParams};
use crackgrowth::oracle::growth_benchmark;
use crackgrowth::solver::{solve, BoundaryDatum, ScalarField, TrigTerm};
use crackgrowth::{CrackSet, DomainSpec, Point2, Polyline};
use proptest::prelude::*;

fn trig(a: f64, kx: f64, ky: f64, phase: f64) -> BoundaryDatum {
    BoundaryDatum::Trig { terms: vec![TrigTerm { amplitude: a, kx, ky, phase }] }
}

fn slit(len: f64, y: f64) -> CrackSet {
    CrackSet::tight(vec![Polyline::segment(Point2::new(-0.9, y), Point2::new(-0.9 + len, y)).unwrap()])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn directional_derivative_is_first_order(
        a in 0.3f64..1.0, kx in -2.0f64..2.0, ky in -2.0f64..2.0,
        b in 0.3f64..1.0, lx in -2.0f64..2.0, ly in -2.0f64..2.0,
    ) {
        let d = DomainSpec::unit_square();
        let k = CrackSet::tight(vec![Polyline::segment(Point2::new(0.0, 0.5), Point2::new(0.5, 0.5)).unwrap()]);
        let p = MeshParams::new(0.1, 0.02);
        let (g, h) = (trig(a, kx, ky, 0.3), trig(b, lx, ly, 1.1));
        let mesh = Arc::new(triangulate(&d, &k, p).unwrap());
        let u = solve(mesh.clone(), &g).unwrap();
        let exact = energy_power(&u, &ScalarField::interpolate(mesh, &h)).unwrap();
        let e0 = total_energy(&d, &k, &g, p).unwrap().0.total;
        let err: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&tau| {
                let gt = BoundaryDatum::Sum { terms: vec![g.clone(), h.clone().scaled(tau)] };
                let e = total_energy(&d, &k, &gt, p).unwrap().0.total;
                ((e - e0) / tau - exact).abs()
            })
            .collect();
        // the remainder is exactly tau |grad u_h|^2
        for w in err.windows(2) {
            let ratio = w[0] / w[1];
            prop_assert!((8.0..12.5).contains(&ratio), "errors {:?}", err);
        }
    }

    #[test]
    fn longer_crack_releases_bulk(l1 in 0.2f64..0.9, extra in 0.05f64..0.5, y in -0.3f64..0.3, kx in 0.5f64..2.0) {
        let d = DomainSpec::unit_disk();
        let p = MeshParams::new(0.125, 0.03);
        let g = trig(1.0, kx, 1.0, 0.2);
        let short = total_energy(&d, &slit(l1, y), &g, p).unwrap().0.bulk;
        let long = total_energy(&d, &slit(l1 + extra, y), &g, p).unwrap().0.bulk;
        prop_assert!(long <= short * (1.0 + 1e-9), "{} > {}", long, short);
    }
}

/// Global minimality at an evolution step implies local minimality in a
/// ball around the tip against extensions, with the trace of the step field
/// held on the ball boundary.
#[test]
fn localization_at_evolution_steps() {
    let setup = growth_benchmark(1.0 / 16.0, 1.0 / 64.0).unwrap();
    let state = run_evolution(&setup).unwrap();
    let growth = state.onset_step().expect("benchmark grows");
    for i in [growth / 2, growth, growth + 2] {
        let k = &state.steps[i].crack;
        let tip = k.tips(Some(&setup.domain))[0];
        let ball = Ball::new(tip.position, 0.3);
        let base = local_energy_with_trace(&ball, k, &state.fields[i], setup.mesh).unwrap().total;
        for &a in &setup.policy.angles_deg {
            for &l in &setup.policy.step_lengths {
                let Ok(h) = k.extend_tip(Some(&setup.domain), &tip, a.to_radians(), l) else { continue };
                let e = local_energy_with_trace(&ball, &h, &state.fields[i], setup.mesh).unwrap().total;
                assert!(e >= base * (1.0 - 1e-6), "step {i}: extension ({a}, {l}) gives {e} < {base}");
            }
        }
    }
}
