use distreach::linalg::{self, LpProblem, Matrix, Sense, Vector};
use proptest::prelude::*;

fn matrix(n: usize, max_norm: f64) -> impl Strategy<Value = Matrix> {
    (proptest::collection::vec(-1.0..1.0f64, n * n), 0.0..max_norm).prop_map(move |(v, scale)| {
        let m = Matrix::from_vec(n, n, v);
        let norm = m.clone().svd(false, false).singular_values.max();
        if norm == 0.0 {
            m
        } else {
            m * (scale / norm)
        }
    })
}

fn square(max_norm: f64) -> impl Strategy<Value = Matrix> {
    (1usize..=6).prop_flat_map(move |n| matrix(n, max_norm))
}

fn vec_of(n: usize) -> impl Strategy<Value = Vector> {
    proptest::collection::vec(-1.0..1.0f64, n).prop_map(Vector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn transition_is_a_semigroup(m in square(5.0), a in 0.0..1.0f64, b in 0.0..1.0f64) {
        let lhs = linalg::state_transition(&m, a + b).unwrap();
        let rhs = linalg::state_transition(&m, a).unwrap() * linalg::state_transition(&m, b).unwrap();
        prop_assert!((lhs - rhs).abs().max() <= 1e-8);
    }

    #[test]
    fn transition_of_negated_matrix_is_inverse(m in square(5.0), dt in 0.0..1.0f64) {
        let n = m.nrows();
        let p = linalg::state_transition(&m, dt).unwrap() * linalg::state_transition(&(-&m), dt).unwrap();
        prop_assert!((p - Matrix::identity(n, n)).abs().max() <= 1e-8);
    }

    #[test]
    fn costate_flow_preserves_pairing(
        (m, l, x) in (1usize..=6).prop_flat_map(|n| (matrix(n, 5.0), vec_of(n), vec_of(n))),
        dt in 0.0..1.0f64,
    ) {
        let lam = linalg::state_transition(&(-m.transpose()), dt).unwrap() * &l;
        let state = linalg::state_transition(&m, dt).unwrap() * &x;
        prop_assert!((lam.dot(&state) - l.dot(&x)).abs() <= 1e-8);
    }

    #[test]
    fn zoh_matches_transition(m in square(3.0), dt in 0.0..1.0f64) {
        let (ad, integ) = linalg::zoh_pair(&m, dt).unwrap();
        let phi = linalg::state_transition(&m, dt).unwrap();
        prop_assert!((&ad - &phi).abs().max() <= 1e-10);
        // m ∫ exp(ms) ds = exp(m dt) - I
        let n = m.nrows();
        prop_assert!((&m * integ - (phi - Matrix::identity(n, n))).abs().max() <= 1e-9);
    }

    #[test]
    fn kernel_projector_properties(
        (rows, cols, data) in (0usize..=5, 1usize..=6).prop_flat_map(|(r, c)| {
            (Just(r), Just(c), proptest::collection::vec(-2.0..2.0f64, r * c))
        }),
        rank_drop in any::<bool>(),
    ) {
        let mut a = Matrix::from_vec(rows, cols, data);
        if rank_drop && rows >= 2 {
            let r0 = a.row(0).into_owned();
            a.row_mut(1).copy_from(&(r0 * 2.0));
        }
        let p = linalg::kernel_projector(&a);
        prop_assert!((&p * &p - &p).abs().max() <= 1e-10);
        prop_assert!((&p - p.transpose()).abs().max() <= 1e-10);
        if rows > 0 {
            prop_assert!((&a * &p).abs().max() <= 1e-10);
        }
    }

    #[test]
    fn min_norm_solution_satisfies_consistent_rows(
        (a, x) in (1usize..=4, 1usize..=6).prop_flat_map(|(r, c)| {
            (proptest::collection::vec(-2.0..2.0f64, r * c).prop_map(move |v| Matrix::from_vec(r, c, v)), vec_of(c))
        }),
    ) {
        let b = &a * &x;
        let sol = linalg::min_norm_solution(&a, &b).unwrap();
        prop_assert!((&a * &sol - &b).norm() <= 1e-9 * (1.0 + b.norm()));
        prop_assert!(sol.norm() <= x.norm() + 1e-9);
    }
}

/// Best objective over all vertices: every `d`-subset of constraints taken
/// as equalities, kept when feasible.
fn brute_force(c: &Vector, a: &Matrix, b: &Vector) -> f64 {
    let (m, d) = a.shape();
    let mut best = f64::NEG_INFINITY;
    let mut idx: Vec<usize> = (0..d).collect();
    loop {
        let sub = Matrix::from_fn(d, d, |i, j| a[(idx[i], j)]);
        let rhs = Vector::from_fn(d, |i, _| b[idx[i]]);
        if let Some(inv) = sub.try_inverse() {
            let x = inv * rhs;
            let slack = b - a * &x;
            if slack.iter().all(|s| *s >= -1e-9) {
                best = best.max(c.dot(&x));
            }
        }
        // next combination
        let mut i = d;
        loop {
            if i == 0 {
                return best;
            }
            i -= 1;
            if idx[i] < m - d + i {
                break;
            }
        }
        idx[i] += 1;
        for j in i + 1..d {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn bounded_polytope(d: usize) -> impl Strategy<Value = (Matrix, Vector, Vector)> {
    (0usize..=6).prop_flat_map(move |extra| {
        (
            proptest::collection::vec(-1.0..1.0f64, extra * d),
            proptest::collection::vec(0.1..2.0f64, extra),
            proptest::collection::vec(0.5..3.0f64, 2 * d),
            vec_of(d),
        )
            .prop_map(move |(normals, offs, box_offs, c)| {
                // A box keeps every instance bounded.
                let m = extra + 2 * d;
                let mut a = Matrix::zeros(m, d);
                let mut b = Vector::zeros(m);
                for k in 0..d {
                    a[(2 * k, k)] = 1.0;
                    a[(2 * k + 1, k)] = -1.0;
                    b[2 * k] = box_offs[2 * k];
                    b[2 * k + 1] = box_offs[2 * k + 1];
                }
                for r in 0..extra {
                    for k in 0..d {
                        a[(2 * d + r, k)] = normals[r * d + k];
                    }
                    b[2 * d + r] = offs[r];
                }
                (a, b, c)
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn lp_matches_vertex_enumeration((a, b, c) in (2usize..=3).prop_flat_map(bounded_polytope)) {
        let (value, x) = linalg::solve_lp(&LpProblem::new(c.clone(), a.clone(), b.clone(), Sense::Max).unwrap()).unwrap();
        let expected = brute_force(&c, &a, &b);
        prop_assert!((value - expected).abs() <= 1e-7 * (1.0 + expected.abs()), "{value} vs {expected}");
        prop_assert!((&a * &x - &b).max() <= 1e-7);
        let (min_value, _) = linalg::solve_lp(&LpProblem::new(c.clone(), a.clone(), b.clone(), Sense::Min).unwrap()).unwrap();
        let expected_min = -brute_force(&(-&c), &a, &b);
        prop_assert!((min_value - expected_min).abs() <= 1e-7 * (1.0 + expected_min.abs()));
    }
}
