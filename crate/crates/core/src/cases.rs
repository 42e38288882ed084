//! Built-in reference cases.

use std::collections::BTreeMap;

use crate::model::{BusId, Case, GridSpec, LineSpec, MarketParams, Scenario, UserId, UserKind, UserSpec};
use crate::scalar::Scalar;

/// Two groups of 100 identical prosumers, each group at its own bus, joined
/// by a single line from bus 2 to bus 1 with the given limit (kW). Bus 1 is
/// the slack.
///
/// | group | alpha1 | alpha2 | w    | fixed | elastic    |
/// |-------|--------|--------|------|-------|------------|
/// | 1     | 0.30   | 0.42   | 1.25 | 1.00  | [0.2, 0.5] |
/// | 2     | 0.60   | 0.72   | 1.75 | 1.30  | [0.1, 0.6] |
///
/// Market sensitivity 1 kW/$.
pub fn two_group_case<T: Scalar>(flow_limit: f64) -> Case<T> {
    let groups = [
        (BusId(1), 0.30, 0.42, 1.25, 1.00, 0.2, 0.5),
        (BusId(2), 0.60, 0.72, 1.75, 1.30, 0.1, 0.6),
    ];
    let mut users = Vec::with_capacity(200);
    let mut w = BTreeMap::new();
    for (g, (bus, a1, a2, out, fixed, lo, hi)) in groups.into_iter().enumerate() {
        for k in 0..100 {
            let id = UserId((g * 100 + k + 1) as i64);
            users.push(UserSpec {
                id,
                bus,
                kind: UserKind::Prosumer,
                fixed_demand: T::of(fixed),
                elastic_lo: T::of(lo),
                elastic_hi: T::of(hi),
                alpha1: T::of(a1),
                alpha2: T::of(a2),
            });
            w.insert(id, T::of(out));
        }
    }
    Case {
        grid: GridSpec {
            buses: vec![BusId(1), BusId(2)],
            slack_bus: BusId(1),
            lines: vec![LineSpec {
                from_bus: BusId(2),
                to_bus: BusId(1),
                susceptance: T::one(),
                flow_limit: T::of(flow_limit),
            }],
        },
        users,
        scenario: Scenario::new(w),
        market: MarketParams {
            a: T::one(),
            eps: T::of(1e-9),
            max_iters: 20_000,
        },
    }
}

/// Shape of a random case from [`random_case`].
#[derive(Debug, Clone)]
pub struct RandomCaseSpec {
    pub buses: (usize, usize),
    pub users: (usize, usize),
    /// Exact prosumer count; otherwise each user is a prosumer with
    /// probability 0.6 (at least one).
    pub prosumers: Option<usize>,
    pub alpha1: (f64, f64),
    pub alpha2: (f64, f64),
    /// Line limits are `|flow| * U(limit_factor) + limit_margin` at the
    /// reference dispatch the outputs are built around.
    pub limit_factor: (f64, f64),
    pub limit_margin: f64,
    /// `a = U(a_factor) * max_k 1/(2 alpha1_k)`; a factor above 1 satisfies
    /// the convergence condition.
    pub a_factor: (f64, f64),
    pub eps: f64,
    pub max_iters: usize,
}

impl Default for RandomCaseSpec {
    fn default() -> Self {
        Self {
            buses: (3, 8),
            users: (4, 20),
            prosumers: None,
            alpha1: (0.1, 2.0),
            alpha2: (-1.0, 1.0),
            limit_factor: (1.0, 1.5),
            limit_margin: 0.05,
            a_factor: (1.2, 2.0),
            eps: 1e-10,
            max_iters: 20_000,
        }
    }
}

/// Random connected grid and users whose outputs admit a dispatch: a demand
/// vector is drawn inside the boxes, outputs are split so that it balances,
/// and every line limit is at least the flow it causes.
pub fn random_case<T: Scalar>(seed: u64, spec: &RandomCaseSpec) -> Case<T> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut uniform = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..hi) } else { lo };

    let n_bus = uniform((spec.buses.0 as f64, spec.buses.1 as f64 + 1.0)) as usize;
    let n_bus = n_bus.clamp(spec.buses.0.max(1), spec.buses.1.max(1));
    let buses: Vec<BusId> = (1..=n_bus as i64).map(BusId).collect();
    let mut pairs: Vec<(usize, usize)> = (1..n_bus)
        .map(|i| ((uniform((0.0, i as f64)) as usize).min(i - 1), i))
        .collect();
    for _ in 0..n_bus / 2 {
        let i = (uniform((0.0, n_bus as f64)) as usize).min(n_bus - 1);
        let j = (uniform((0.0, n_bus as f64)) as usize).min(n_bus - 1);
        if i != j && !pairs.contains(&(i.min(j), i.max(j))) {
            pairs.push((i.min(j), i.max(j)));
        }
    }

    let n_users = (uniform((spec.users.0 as f64, spec.users.1 as f64 + 1.0)) as usize).clamp(spec.users.0, spec.users.1);
    let n_users = n_users.max(spec.prosumers.unwrap_or(1));
    let mut users = Vec::with_capacity(n_users);
    for k in 0..n_users {
        let prosumer = match spec.prosumers {
            Some(p) => k < p,
            None => k == 0 || uniform((0.0, 1.0)) < 0.6,
        };
        let lo = uniform((0.0, 0.5));
        users.push(UserSpec {
            id: UserId(k as i64 + 1),
            bus: buses[(uniform((0.0, n_bus as f64)) as usize).min(n_bus - 1)],
            kind: if prosumer { UserKind::Prosumer } else { UserKind::Consumer },
            fixed_demand: T::of(uniform((0.5, 2.0))),
            elastic_lo: T::of(lo),
            elastic_hi: T::of(lo + uniform((0.2, 1.5))),
            alpha1: T::of(uniform(spec.alpha1)),
            alpha2: T::of(uniform(spec.alpha2)),
        });
    }

    // Reference demands and outputs that balance.
    let d0: Vec<f64> = users
        .iter()
        .map(|u| {
            let (lo, hi) = (u.elastic_lo.to_f64_lossy(), u.elastic_hi.to_f64_lossy());
            lo + uniform((0.0, 1.0)) * (hi - lo)
        })
        .collect();
    let total: f64 = users.iter().zip(&d0).map(|(u, d)| u.fixed_demand.to_f64_lossy() + d).sum();
    let weights: Vec<f64> = users.iter().filter(|u| u.is_prosumer()).map(|_| uniform((0.2, 1.0))).collect();
    let wsum: f64 = weights.iter().sum();
    let w: Vec<T> = weights.iter().map(|x| T::of(total * x / wsum)).collect();
    let scenario = Scenario::from_vector(&users, &w);

    let mut grid = GridSpec {
        buses: buses.clone(),
        slack_bus: buses[0],
        lines: pairs
            .iter()
            .map(|&(i, j)| LineSpec {
                from_bus: buses[i],
                to_bus: buses[j],
                susceptance: T::of(uniform((0.5, 2.0))),
                flow_limit: T::one(),
            })
            .collect(),
    };
    let ptdf = crate::network::compute_ptdf(&grid).expect("generated grid is connected");
    let pi = ptdf.user_factors(&users).expect("users sit on grid buses");
    let net: Vec<T> = users
        .iter()
        .zip(&d0)
        .map(|(u, d)| {
            let out = scenario.output(u.id).unwrap_or_else(T::zero);
            u.fixed_demand + T::of(*d) - out
        })
        .collect();
    let flows = crate::network::line_flows(&pi, &net);
    for (line, f) in grid.lines.iter_mut().zip(flows) {
        line.flow_limit = T::of(f.to_f64_lossy().abs() * uniform(spec.limit_factor) + spec.limit_margin);
    }

    let max_inv = users
        .iter()
        .map(|u| 1.0 / (2.0 * u.alpha1.to_f64_lossy()))
        .fold(0.0, f64::max);
    Case {
        grid,
        users,
        scenario,
        market: MarketParams {
            a: T::of(uniform(spec.a_factor) * max_inv),
            eps: T::of(spec.eps),
            max_iters: spec.max_iters,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_cases_validate() {
        for seed in 0..50 {
            let case = random_case::<f64>(seed, &RandomCaseSpec::default());
            case.validate().unwrap();
            assert!((3..=8).contains(&case.grid.buses.len()));
            assert!((4..=20).contains(&case.users.len()));
        }
        let spec = RandomCaseSpec {
            prosumers: Some(2),
            ..Default::default()
        };
        assert_eq!(random_case::<f64>(3, &spec).prosumers().count(), 2);
        assert_eq!(random_case::<f64>(9, &spec), random_case::<f64>(9, &spec));
    }
}
