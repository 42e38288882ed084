use gridshare_core::solver::{solve_lp, solve_qp, LpProblem, Matrix, QpProblem, RowSense, Sense};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lp(seed: u64) -> LpProblem<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(2..8);
    let m = rng.random_range(1..8);
    let x0: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let sense = if rng.random_bool(0.5) { Sense::Min } else { Sense::Max };
    let cost = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let mut lp = LpProblem::new(sense, cost).with_bounds(vec![-3.0; n], vec![3.0; n]);
    for _ in 0..m {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let act: f64 = row.iter().zip(&x0).map(|(a, b)| a * b).sum();
        match rng.random_range(0..3) {
            0 => lp.add_row(&row, RowSense::Le, act + rng.random_range(0.0..1.0)),
            1 => lp.add_row(&row, RowSense::Ge, act - rng.random_range(0.0..1.0)),
            _ => lp.add_row(&row, RowSense::Eq, act),
        };
    }
    lp
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn lp_strong_duality(seed in 0u64..1_000_000) {
        let lp = random_lp(seed);
        let s = solve_lp(&lp).unwrap();
        prop_assert!(s.is_optimal());
        let rhs_norm = lp.rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(s.primal_residual(&lp) <= 1e-8 * (1.0 + rhs_norm));
        let gap = (s.objective - s.dual_objective(&lp)).abs();
        prop_assert!(gap <= 1e-7 * (1.0 + s.objective.abs()), "gap {}", gap);
    }

    #[test]
    fn solves_are_bit_identical(seed in 0u64..1_000_000) {
        let lp = random_lp(seed);
        let (a, b) = (solve_lp(&lp).unwrap(), solve_lp(&lp).unwrap());
        prop_assert_eq!(a.primal, b.primal);
        prop_assert_eq!(a.dual, b.dual);

        let n = lp.num_vars();
        let mut qp = QpProblem::new(Matrix::identity(n), lp.cost.clone()).with_bounds(lp.lower.clone(), lp.upper.clone());
        for i in 0..lp.num_rows() {
            match lp.row_sense[i] {
                RowSense::Le => { qp.add_le(lp.rows.row(i), lp.rhs[i]); }
                RowSense::Ge => {
                    let neg: Vec<f64> = lp.rows.row(i).iter().map(|v| -v).collect();
                    qp.add_le(&neg, -lp.rhs[i]);
                }
                RowSense::Eq => { qp.add_eq(lp.rows.row(i), lp.rhs[i]); }
            }
        }
        let (a, b) = (solve_qp(&qp).unwrap(), solve_qp(&qp).unwrap());
        prop_assert_eq!(a.primal, b.primal);
        prop_assert_eq!(a.ineq_duals, b.ineq_duals);
    }
}
