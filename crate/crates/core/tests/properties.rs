//! Property-based tests over seeded random measures and plans.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hierot::coupling::{add, generic_coupling, inner_mu, optimal_coupling, random_coupling, w_mu};
use hierot::geodesic::{interpolate, optimal_velocity_plan};
use hierot::json::{measure_to_string, parse_measure, parse_plan, plan_to_json, pretty};
use hierot::random::{random_fd_plan, random_measure, random_plan};
use hierot::{HierMeasure, Manifold, VelocityPlan, W2Solver};

fn manifold(sphere: bool) -> Manifold {
    if sphere {
        Manifold::sphere(3).unwrap()
    } else {
        Manifold::euclidean(2).unwrap()
    }
}

fn measure(seed: u64, sphere: bool, level: usize) -> HierMeasure {
    random_measure(&manifold(sphere), level, 3, &mut ChaCha8Rng::seed_from_u64(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn measure_json_round_trip(seed in any::<u64>(), sphere in any::<bool>(), level in 0usize..4) {
        let mu = measure(seed, sphere, level);
        let back = parse_measure(&measure_to_string(&mu)).unwrap();
        prop_assert!(back.warnings.is_empty());
        prop_assert!(W2Solver::default().w2(&mu, &back.value).unwrap() <= 1e-12);
        prop_assert_eq!(back.value, mu);
    }

    #[test]
    fn plan_json_round_trip(seed in any::<u64>(), sphere in any::<bool>(), level in 0usize..4) {
        let mu = measure(seed, sphere, level);
        let g = random_plan(&mu, 3, 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        let back = parse_plan(&pretty(&plan_to_json(&g))).unwrap().value;
        prop_assert!(w_mu(&g, &back).unwrap() <= 1e-12);
        prop_assert_eq!(back, g);
    }

    #[test]
    fn w2_is_symmetric_and_vanishes_on_the_diagonal(seed in any::<u64>(), sphere in any::<bool>(), level in 0usize..4) {
        let solver = W2Solver::default();
        let (a, b) = (measure(seed, sphere, level), measure(seed.wrapping_add(1), sphere, level));
        prop_assert_eq!(solver.w2(&a, &b).unwrap(), solver.w2(&b, &a).unwrap());
        prop_assert_eq!(solver.w2(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn geodesic_endpoints(seed in any::<u64>(), sphere in any::<bool>(), level in 1usize..4) {
        let solver = W2Solver::default();
        let (a, b) = (measure(seed, sphere, level), measure(seed.wrapping_add(7), sphere, level));
        let g = optimal_velocity_plan(&solver, &a, &b).unwrap();
        prop_assert!(solver.w2(&interpolate(&g, 0.0), &a).unwrap() <= 1e-12);
        prop_assert!(solver.w2(&interpolate(&g, 1.0), &b).unwrap() <= 1e-9);
    }

    #[test]
    fn couplings_have_the_right_marginals(seed in any::<u64>(), sphere in any::<bool>(), level in 0usize..4) {
        let mu = measure(seed, sphere, level);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 2);
        let (g1, g2) = (random_plan(&mu, 3, 1.0, &mut rng), random_plan(&mu, 3, 1.0, &mut rng));
        for alpha in [
            generic_coupling(&g1, &g2).unwrap(),
            optimal_coupling(&g1, &g2).unwrap().0,
            random_coupling(&g1, &g2, &mut rng).unwrap(),
        ] {
            alpha.check_marginals(&g1, &g2).unwrap();
            let sum = add(&g1, &g2, &alpha).unwrap();
            prop_assert!(sum.base().approx_eq_structural(&mu, 1e-12) || sum.base().canonicalize().approx_eq_structural(&mu.canonicalize(), 1e-12));
            prop_assert!(sum.norm() <= g1.norm() + g2.norm() + 1e-12);
        }
    }

    #[test]
    fn inner_product_is_positively_homogeneous(seed in any::<u64>(), s in 0.0f64..3.0, t in 0.0f64..3.0) {
        let mu = measure(seed, seed % 2 == 0, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 3);
        let (g1, g2) = (random_plan(&mu, 3, 1.0, &mut rng), random_plan(&mu, 3, 1.0, &mut rng));
        let lhs = inner_mu(&g1.scale(s), &g2.scale(t)).unwrap();
        let rhs = s * t * inner_mu(&g1, &g2).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + rhs.abs()));
    }

    #[test]
    fn fully_deterministic_plans_form_a_vector_space(seed in any::<u64>(), s in -3.0f64..3.0) {
        let mu = measure(seed, seed % 2 == 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 4);
        let (a, b) = (random_fd_plan(&mu, 1.0, &mut rng), random_fd_plan(&mu, 1.0, &mut rng));
        prop_assert_eq!(a.fd_add(&b).unwrap(), b.fd_add(&a).unwrap());
        prop_assert!(a.fd_add(&VelocityPlan::zero(&mu)).unwrap().approx_eq(&a, 0.0));
        let lhs = a.fd_add(&b).unwrap().fd_scale(s);
        let rhs = a.fd_scale(s).fd_add(&b.fd_scale(s)).unwrap();
        prop_assert!(lhs.approx_eq(&rhs, 1e-14));
        let w = w_mu(&a, &b).unwrap();
        let l2 = a.fd_combine(&b, -1.0).unwrap().norm();
        prop_assert!((w - l2).abs() <= 1e-12);
    }
}
