mod common;

use nested_hinf::lmi::{solve_for_single_unknown, AffineMatrixExpr, LmiProblem, SolverOptions};
use nested_hinf::matcore::{
    block_columns, from_block_columns, is_block_lower_triangular, max_sym_eig, spectral_abscissa, upper_block_residual,
};
use nested_hinf::plant::{
    close_loop, closed_loop_is_nested, freq_response_sigma_max, hinf_norm, plant_from_json, plant_to_json,
    StructuredController,
};
use nested_hinf::{Matrix, Partition};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn partition() -> impl Strategy<Value = Partition> {
    prop::collection::vec(1usize..=3, 1..=3).prop_map(|s| Partition::new(s).unwrap())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn selectors_tile_the_identity(p in partition()) {
        let n = p.total();
        let mut sum = Matrix::zeros(n, n);
        for j in 1..=p.blocks() {
            let r = p.r(j);
            prop_assert_eq!(r.transpose() * &r, Matrix::identity(p.size(j), p.size(j)));
            sum += &r * r.transpose();
            // Λ_j and L_j split the identity at block j.
            let split = p.lambda(j) * p.lambda(j).transpose() + p.l(j) * p.l(j).transpose();
            prop_assert_eq!(split, Matrix::identity(n, n));
        }
        prop_assert_eq!(sum, Matrix::identity(n, n));
        prop_assert_eq!(p.r(p.blocks() + 1).ncols(), 0);
    }

    #[test]
    fn block_columns_round_trip(rows in partition(), seed in any::<u64>()) {
        let mut g = rng(seed);
        let sizes: Vec<usize> = rows.sizes().iter().map(|s| s % 2 + 1).collect();
        let cols = Partition::new(sizes).unwrap();
        let m = common::random_lower(&mut g, &rows, &cols, 1.0);
        prop_assert_eq!(upper_block_residual(&m, &rows, &cols).unwrap(), 0.0);
        let parts = block_columns(&m, &rows, &cols).unwrap();
        prop_assert_eq!(from_block_columns(&parts, &rows, &cols).unwrap(), m);
    }

    #[test]
    fn lower_triangular_closed_under_products(p in partition(), seed in any::<u64>()) {
        let mut g = rng(seed);
        let a = common::random_lower(&mut g, &p, &p, 1.0);
        let b = common::random_lower(&mut g, &p, &p, 1.0);
        prop_assert!(is_block_lower_triangular(&(&a * &b), &p, &p, 0.0).unwrap());
        if let Some(inv) = a.clone().try_inverse() {
            prop_assert!(is_block_lower_triangular(&inv, &p, &p, 1e-8 * inv.amax().max(1.0)).unwrap());
        }
    }

    #[test]
    fn expression_algebra_matches_matrices(seed in any::<u64>(), n in 1usize..=4) {
        let mut g = rng(seed);
        let mut prob = LmiProblem::new();
        let x = prob.symmetric("X", n);
        let s = prob.full("S", n, 2);
        let l = common::random_matrix(&mut g, 3, n, 1.0);
        let r = common::random_matrix(&mut g, n, n, 1.0);
        let xv = common::random_matrix(&mut g, n, n, 1.0);
        let xv = &xv + xv.transpose();
        let sv = common::random_matrix(&mut g, n, 2, 1.0);
        let mut vec = vec![0.0; x.scalar_count() + s.scalar_count()];
        x.store(&xv, &mut vec);
        s.store(&sv, &mut vec);
        prop_assert!((x.value(&vec) - &xv).amax() < 1e-14);
        prop_assert!((s.value(&vec) - &sv).amax() < 1e-14);

        let e = AffineMatrixExpr::var(&x).lmul(&l).unwrap().rmul(&r).unwrap();
        prop_assert!((e.eval(&vec) - &l * &xv * &r).amax() < 1e-12);
        let he = AffineMatrixExpr::var(&x).rmul(&r).unwrap().he().unwrap();
        let t = &xv * &r;
        prop_assert!((he.eval(&vec) - (&t + t.transpose())).amax() < 1e-12);
        prop_assert!(he.symmetry_defect() < 1e-12);
        let tr = AffineMatrixExpr::var(&s).transpose();
        prop_assert_eq!(tr.eval(&vec), sv.transpose());
    }

    #[test]
    fn plant_json_round_trip_is_exact(seed in any::<u64>()) {
        let mut g = rng(seed);
        let plant = common::random_two_block(&mut g);
        let back = plant_from_json(&plant_to_json(&plant)).unwrap();
        prop_assert_eq!(back, plant);
    }

    #[test]
    fn norm_bounds_every_frequency(seed in any::<u64>(), n in 1usize..=4, w in 0.0f64..10.0) {
        let mut g = rng(seed);
        let mut a = common::random_matrix(&mut g, n, n, 1.0);
        common::place_abscissa(&mut a, -0.3);
        let b = common::random_matrix(&mut g, n, 2, 1.0);
        let c = common::random_matrix(&mut g, 2, n, 1.0);
        let d = common::random_matrix(&mut g, 2, 2, 0.5);
        let norm = hinf_norm(&a, &b, &c, &d);
        prop_assert!(norm.is_finite());
        prop_assert!(freq_response_sigma_max(&a, &b, &c, &d, w) <= norm * (1.0 + 1e-6));
        // scaling the output scales the norm
        let scaled = hinf_norm(&a, &b, &(&c * 3.0), &(&d * 3.0));
        prop_assert!((scaled - 3.0 * norm).abs() <= 1e-5 * scaled);
    }

    #[test]
    fn unstable_systems_have_infinite_norm(seed in any::<u64>(), n in 1usize..=4) {
        let mut g = rng(seed);
        let mut a = common::random_matrix(&mut g, n, n, 1.0);
        common::place_abscissa(&mut a, 0.2);
        let b = common::random_matrix(&mut g, n, 1, 1.0);
        let c = common::random_matrix(&mut g, 1, n, 1.0);
        prop_assert_eq!(hinf_norm(&a, &b, &c, &Matrix::zeros(1, 1)), f64::INFINITY);
    }

    #[test]
    fn structured_feedback_keeps_the_loop_nested(seed in any::<u64>()) {
        let mut g = rng(seed);
        let plant = common::random_two_block(&mut g);
        let big = Partition::uniform(2, plant.p()).unwrap();
        let k = StructuredController {
            ak: common::random_lower(&mut g, &big, &big, 1.0),
            bk: common::random_lower(&mut g, &big, &plant.kparts, 1.0),
            ck: common::random_lower(&mut g, &plant.mparts, &big, 1.0),
            dk: common::random_lower(&mut g, &plant.mparts, &plant.kparts, 1.0),
            nk_parts: Some(big.clone()),
            generators: None,
        };
        prop_assert!(k.is_structured(&plant, 0.0).unwrap());
        let cl = close_loop(&plant, &k).unwrap();
        prop_assert!(closed_loop_is_nested(&cl, &plant.nparts, &big, 0.0).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    /// Problems built to satisfy both kernel conditions are always solved,
    /// and the returned unknown satisfies the strict inequality.
    #[test]
    fn projection_solves_solvable_instances(seed in any::<u64>(), dim in 3usize..=6) {
        let mut g = rng(seed);
        let m = common::random_matrix(&mut g, 2, dim, 1.0);
        let n = common::random_matrix(&mut g, 1, dim, 1.0);
        let s0 = common::random_matrix(&mut g, 2, 1, 1.0);
        let w = common::random_matrix(&mut g, dim, dim, 1.0);
        // Q = -I - Mᵀ S₀ N + skew part, so S = S₀ gives He(...) = -2I.
        let q = -Matrix::identity(dim, dim) - m.transpose() * &s0 * &n + (&w - w.transpose());
        let s = solve_for_single_unknown(&q, &m, &n, &SolverOptions::default()).unwrap();
        let t = &q + m.transpose() * &s * &n;
        prop_assert!(max_sym_eig(&(&t + t.transpose())) < 0.0);
    }
}

#[test]
fn place_abscissa_hits_target() {
    let mut g = rng(7);
    let mut a = common::random_matrix(&mut g, 4, 4, 1.0);
    common::place_abscissa(&mut a, -0.25);
    assert!((spectral_abscissa(&a).unwrap() + 0.25).abs() < 1e-10);
}
