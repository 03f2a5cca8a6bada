//! Seeded property tests for the geometric, coordinate and hierarchy layers.

use frobkit_core::coords::{euler_weight, flat_coordinate, verify_princon2, verify_princon3, DensityIndex};
use frobkit_core::geometry::{
    directional, eta_lower, eta_raise, flat_field, flat_metric_entry, metric, nabla_vec, random_covector, random_tangent, star, tangent_distance, unity_covector, CoordIndex, RawCombo,
};
use frobkit_core::hierarchy::{antisymmetry_residual, random_covector_field, LoopField, Tensor};
use frobkit_core::manifold::{random_point, ModelParams, Point};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CONFIGS: [(usize, usize, usize); 3] = [(2, 1, 1), (1, 1, 1), (3, 2, 3)];

fn point(cfg: usize, seed: u64) -> Point {
    let (m, n, s) = CONFIGS[cfg];
    random_point(&ModelParams::new(m, n, s), seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn eta_round_trips(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let w = random_covector(&p, &mut r, 5);
        let back = eta_raise(&p, &eta_lower(&p, &w)).unwrap();
        prop_assert!(back.kernel_distance(&w, &p) < 1e-8);
        let t = random_tangent(&p, &mut r, 5);
        prop_assert!(tangent_distance(&eta_lower(&p, &eta_raise(&p, &t).unwrap()), &t) < 1e-8);
    }

    #[test]
    fn product_is_commutative_associative_unital(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x5a5a);
        let w: Vec<_> = (0..3).map(|_| random_covector(&p, &mut r, 5)).collect();
        prop_assert!(star(&p, &w[0], &w[1]).sub(&star(&p, &w[1], &w[0])).sup_norm() < 1e-10);
        let lhs = star(&p, &star(&p, &w[0], &w[1]), &w[2]);
        let rhs = star(&p, &w[0], &star(&p, &w[1], &w[2]));
        prop_assert!(lhs.kernel_distance(&rhs, &p) < 1e-8);
        prop_assert!(star(&p, &unity_covector(&p), &w[0]).kernel_distance(&w[0], &p) < 1e-8);
    }

    #[test]
    fn connection_is_torsion_free(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let mut r = ChaCha8Rng::seed_from_u64(seed ^ 0x3c3c);
        let c1 = RawCombo::random(&p, &mut r);
        let c2 = RawCombo::random(&p, &mut r);
        let d = tangent_distance(&nabla_vec(&p, &c1, &c2).unwrap(), &nabla_vec(&p, &c2, &c1).unwrap());
        prop_assert!(d < 1e-8, "{d}");
    }

    #[test]
    fn gram_matrix_is_constant(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let cap = p.tail_depth as i64 / 2;
        let idx = CoordIndex::all(p.m, p.n, -cap..=cap);
        let fields: Vec<_> = idx.iter().map(|&u| flat_field(&p, u).unwrap()).collect();
        for (a, fa) in idx.iter().zip(&fields) {
            for (b, fb) in idx.iter().zip(&fields) {
                let g = metric(&p, fa, fb).unwrap();
                let want = flat_metric_entry(*a, *b, p.m, p.n, p.s);
                prop_assert!((g - want).norm() < 1e-6, "{a} {b}: {g} vs {want}");
            }
        }
    }

    #[test]
    fn flat_coordinates_scale_under_euler(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let e = RawCombo::euler(&p);
        for u in CoordIndex::all(p.m, p.n, -2..=2) {
            let got = directional(&p, &e, |q| flat_coordinate(q, u)).unwrap();
            let want = flat_coordinate(&p, u).unwrap() * euler_weight(u, p.m, p.n, p.s);
            prop_assert!((got - want).norm() < 1e-6 * (1.0 + want.norm()), "{u}: {got} vs {want}");
        }
    }

    #[test]
    fn level_zero_densities_are_lowered_flat_coordinates(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let r = verify_princon3(&p, 3).unwrap();
        prop_assert!(r < 1e-7, "{r}");
    }

    #[test]
    fn densities_are_homogeneous(cfg in 0..CONFIGS.len(), seed in 0u64..1000, level in 0usize..3) {
        let p = point(cfg, seed);
        for u in CoordIndex::all(p.m, p.n, -2..=2) {
            let r = verify_princon2(&p, DensityIndex::new(u, level)).unwrap();
            prop_assert!(r < 1e-6, "{u},{level}: {r}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn poisson_tensors_are_antisymmetric(cfg in 0..CONFIGS.len(), seed in 0u64..1000) {
        let p = point(cfg, seed);
        let lf = LoopField::perturbed(&p, 64, 0.01, seed).unwrap();
        let w1 = random_covector_field(&lf, seed, 3);
        let w2 = random_covector_field(&lf, seed + 1, 3);
        for tensor in [Tensor::P1, Tensor::P2] {
            let r = antisymmetry_residual(&lf, tensor, &w1, &w2).unwrap();
            prop_assert!(r < 1e-8, "{tensor:?}: {r}");
        }
    }
}
