use crackgrowth::conformance::{check_golab, hausdorff_sampled, random_crack, GolabFamily};
use crackgrowth::geometry::{contains, hausdorff_distance};
use crackgrowth::{CrackSet, DomainSpec, Point2, Polyline};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn crack(seed: u64, m: usize) -> CrackSet {
    random_crack(&mut ChaCha8Rng::seed_from_u64(seed), m)
}

fn moved(k: &CrackSet, angle: f64, shift: Point2) -> CrackSet {
    CrackSet::tight(
        k.components()
            .iter()
            .map(|c| Polyline::new(c.vertices().iter().map(|p| p.rotated(angle) + shift).collect()).unwrap())
            .collect(),
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn length_invariant_under_rigid_motion(seed in any::<u64>(), angle in -3.2f64..3.2, dx in -5.0f64..5.0, dy in -5.0f64..5.0) {
        let k = crack(seed, 3);
        let l = k.length();
        prop_assert!((moved(&k, angle, Point2::new(dx, dy)).length() - l).abs() <= 1e-12 * (1.0 + l));
    }

    #[test]
    fn length_additive_over_disjoint_components(a in any::<u64>(), b in any::<u64>()) {
        let k1 = crack(a, 1);
        let k2 = moved(&crack(b, 1), 0.0, Point2::new(10.0, 0.0));
        let mut comps = k1.components().to_vec();
        comps.extend(k2.components().iter().cloned());
        let joint = CrackSet::tight(comps);
        prop_assert!((joint.length() - k1.length() - k2.length()).abs() <= 1e-12);
    }

    #[test]
    fn hausdorff_triangle_inequality(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let (ka, kb, kc) = (crack(a, 2), crack(b, 2), crack(c, 2));
        let d = |x: &CrackSet, y: &CrackSet| hausdorff_distance(x, y, 4.0);
        prop_assert!(d(&ka, &kc) <= d(&ka, &kb) + d(&kb, &kc) + 1e-10);
        prop_assert_eq!(d(&ka, &kb), d(&kb, &ka));
        prop_assert!(d(&ka, &ka) <= 1e-12);
    }

    #[test]
    fn hausdorff_matches_sampling(a in any::<u64>(), b in any::<u64>()) {
        let (ka, kb) = (crack(a, 2), crack(b, 2));
        let exact = hausdorff_distance(&ka, &kb, 4.0);
        let sampled = hausdorff_sampled(&ka, &kb, 1e-4, 4.0);
        prop_assert!((exact - sampled).abs() <= 1e-3, "exact {} sampled {}", exact, sampled);
        prop_assert!(sampled <= exact + 1e-12);
    }

    #[test]
    fn extension_contains_input(seed in any::<u64>(), angle in -80.0f64..80.0, step in 0.01f64..0.2) {
        let d = DomainSpec::rectangle(-2.0, -2.0, 2.0, 2.0);
        let k = crack(seed, 2);
        for tip in k.tips(Some(&d)) {
            if let Ok(out) = k.extend_tip(Some(&d), &tip, angle.to_radians(), step) {
                prop_assert!(contains(&out, &k, 0.0));
                prop_assert!((out.length() - k.length() - step).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn golab_lower_semicontinuity(seed in any::<u64>(), zig in any::<bool>()) {
        let f = GolabFamily::generate(&mut ChaCha8Rng::seed_from_u64(seed), 3, 40, zig);
        let r = check_golab(&f, 4.0);
        prop_assert!(r.pass, "{:?}", r);
    }
}
