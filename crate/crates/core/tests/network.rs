mod common;

use common::{dc_flows, dispatch_feasible, injections};
use gridshare_core::cases::{random_case, RandomCaseSpec};
use gridshare_core::network::{assemble_constraints, compute_ptdf};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_spec() -> RandomCaseSpec {
    RandomCaseSpec {
        buses: (2, 5),
        users: (2, 6),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn ptdf_matches_dc_power_flow(seed in 0u64..10_000) {
        let case = random_case::<f64>(seed, &small_spec());
        let ptdf = compute_ptdf(&case.grid).unwrap();
        let slack = ptdf.column_of(case.grid.slack_bus).unwrap();
        prop_assert!(ptdf.matrix.column(slack).iter().all(|v| *v == 0.0));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut inj: Vec<f64> = (0..case.grid.buses.len()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mean = inj.iter().sum::<f64>() / inj.len() as f64;
        inj.iter_mut().for_each(|v| *v -= mean);
        let expected = dc_flows(&case.grid, &inj);
        for (a, b) in ptdf.flows(&inj).iter().zip(&expected) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn constraint_system_matches_direct_check(seed in 0u64..10_000) {
        let case = random_case::<f64>(seed, &small_spec());
        let cs = assemble_constraints(&case.grid, &case.users).unwrap();
        prop_assert_eq!(cs.num_rows(), 2 + 2 * case.users.len() + 2 * case.grid.lines.len());
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
        let w0 = common::outputs(&case);
        let mut agree = 0;
        for i in 0..25 {
            // Half the samples sit exactly on the balance plane so both
            // outcomes occur.
            let d: Vec<f64> = case.users.iter().map(|u| {
                let span = u.elastic_hi - u.elastic_lo;
                u.elastic_lo + rng.random_range(-0.2..1.2) * span
            }).collect();
            let mut w: Vec<f64> = w0.iter().map(|v| v * rng.random_range(0.6..1.4)).collect();
            if i % 2 == 0 {
                let need: f64 = case.users.iter().zip(&d).map(|(u, d)| u.fixed_demand + d).sum::<f64>() - w.iter().sum::<f64>();
                let k = w.len() - 1;
                w[k] += need;
            }
            let tol = 1e-9;
            let direct = dispatch_feasible(&case.grid, &case.users, &d, &w, tol);
            let compact = cs.contains(&d, &w, tol);
            prop_assert_eq!(direct, compact, "d={:?} w={:?}", d, w);
            agree += 1;
        }
        prop_assert_eq!(agree, 25);
    }
}

#[test]
fn shift_invariance_of_flows() {
    // Adding a constant to every angle leaves b (theta_i - theta_j) unchanged;
    // equivalently the factors see only balanced injections. Moving the slack
    // changes the matrix but not the flows of a balanced injection.
    let case = random_case::<f64>(11, &small_spec());
    for slack in case.grid.buses.clone() {
        let mut grid = case.grid.clone();
        grid.slack_bus = slack;
        let p = compute_ptdf(&grid).unwrap();
        let inj = injections(&grid, &case.users, &vec![0.3; case.users.len()]);
        let total: f64 = inj.iter().sum();
        let mut balanced = inj.clone();
        balanced[0] -= total;
        let f = p.flows(&balanced);
        let expected = dc_flows(&case.grid, &balanced);
        for (a, b) in f.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
