//! The energy-sharing market.
//!
//! Each user bids `b_k` and transacts `q_k = b_k - a lambda_k` at its price.
//! The operator picks prices so that trades balance and line limits hold;
//! each user then picks the demand that minimizes its own cost at that price
//! and rebids so that `q_k` covers its net demand. [`run_sharing`] repeats the
//! two steps, with a proximal term on the prices, until the bids settle.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::centralized::DispatchSolution;
use crate::model::{aggregate_net_fixed, GridSpec, MarketParams, ModelError, Scenario, UserId, UserSpec};
use crate::network::{compute_ptdf_with, NetworkError};
use crate::scalar::{dot, max_abs_diff, norm_inf, Scalar};
use crate::solver::{solve_qp_from, Matrix, QpProblem, SolverError};
use crate::tolerance::Tolerances;

#[derive(Debug, thiserror::Error)]
pub enum SharingError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("market cannot clear: no balanced trade respects the line limits")]
    InfeasibleClearing,
    #[error("clearing problem failed: {0}")]
    Solver(SolverError),
    #[error("expected {expected} values, got {got}")]
    Length { expected: usize, got: usize },
}

impl From<SolverError> for SharingError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Infeasible => SharingError::InfeasibleClearing,
            other => SharingError::Solver(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Bid<T: Scalar> {
    pub user: UserId,
    pub b: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct PriceVector<T: Scalar> {
    pub lambda: Vec<T>,
}

impl<T: Scalar> PriceVector<T> {
    /// Transacted quantities `q = b - a lambda`.
    pub fn quantities(&self, bids: &[T], a: T) -> Vec<T> {
        bids.iter().zip(&self.lambda).map(|(b, l)| *b - a * *l).collect()
    }
}

/// One iteration: prices from clearing bids `b^{n-1}`, then the responses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BidRecord<T: Scalar> {
    pub n: usize,
    pub b: Vec<T>,
    pub lambda: Vec<T>,
    pub d: Vec<T>,
    /// `|b^n - b^{n-1}|_inf`.
    pub residual: T,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BidTrace<T: Scalar> {
    pub records: Vec<BidRecord<T>>,
}

impl<T: Scalar> BidTrace<T> {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn last(&self) -> Option<&BidRecord<T>> {
        self.records.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct EquilibriumResult<T: Scalar> {
    pub user_ids: Vec<UserId>,
    pub d: Vec<T>,
    pub b: Vec<T>,
    pub lambda: Vec<T>,
    pub q: Vec<T>,
    pub converged: bool,
    pub iterations: usize,
    #[serde(skip)]
    pub trace: BidTrace<T>,
}

impl<T: Scalar> EquilibriumResult<T> {
    pub fn bids(&self) -> Vec<Bid<T>> {
        self.user_ids
            .iter()
            .zip(&self.b)
            .map(|(u, b)| Bid { user: *u, b: *b })
            .collect()
    }
}

/// Demand minimizing `f(d) + lambda (d + D)` over the user's box, and the
/// bid `d + D + a lambda` that makes the transacted quantity cover it.
pub fn best_response<T: Scalar>(
    user: &UserSpec<T>,
    lambda: T,
    scenario: &Scenario<T>,
    a: T,
) -> Result<(T, T), ModelError> {
    let net_fixed = aggregate_net_fixed(user, scenario)?;
    Ok(respond(user, lambda, net_fixed, a))
}

fn respond<T: Scalar>(user: &UserSpec<T>, lambda: T, net_fixed: T, a: T) -> (T, T) {
    let d = user.clamp(-(user.alpha2 + lambda) / user.curvature());
    (d, d + net_fixed + a * lambda)
}

/// Line limits on transacted quantities: flow `l` is
/// `-sum_k factors[l][k] q_k` and must stay within `+-limits[l]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClearingSystem<T: Scalar> {
    pub factors: Matrix<T>,
    pub limits: Vec<T>,
}

impl<T: Scalar> ClearingSystem<T> {
    pub fn new(grid: &GridSpec<T>, users: &[UserSpec<T>], tol: &Tolerances<T>) -> Result<Self, SharingError> {
        let ptdf = compute_ptdf_with(grid, tol)?;
        Ok(Self {
            factors: ptdf.user_factors(users)?,
            limits: grid.lines.iter().map(|l| l.flow_limit).collect(),
        })
    }

    /// No lines: only the balance couples users.
    pub fn unconstrained(users: usize) -> Self {
        Self {
            factors: Matrix::zeros(0, users),
            limits: Vec::new(),
        }
    }

    pub fn num_users(&self) -> usize {
        self.factors.cols()
    }

    pub fn flows(&self, q: &[T]) -> Vec<T> {
        self.factors.mul_vec(q).into_iter().map(|f| -f).collect()
    }

    /// Whether `q` is a balanced trade within the line limits.
    pub fn admits(&self, q: &[T], tol: T) -> bool {
        let total: T = q.iter().copied().sum();
        total.abs() <= tol
            && self
                .flows(q)
                .iter()
                .zip(&self.limits)
                .all(|(f, lim)| f.abs() <= *lim + tol)
    }
}

/// Prices minimizing `sum lambda^2 + sum (lambda - lambda_prev)^2` (or just
/// `sum lambda^2` without `lambda_prev`) such that `q = b - a lambda` is a
/// balanced trade within the line limits.
pub fn clear_market<T: Scalar>(
    bids: &[T],
    system: &ClearingSystem<T>,
    a: T,
    lambda_prev: Option<&[T]>,
) -> Result<PriceVector<T>, SharingError> {
    clear_market_with(bids, system, a, lambda_prev, &Tolerances::default())
}

pub fn clear_market_with<T: Scalar>(
    bids: &[T],
    system: &ClearingSystem<T>,
    a: T,
    lambda_prev: Option<&[T]>,
    tol: &Tolerances<T>,
) -> Result<PriceVector<T>, SharingError> {
    let n = system.num_users();
    check_len(n, bids.len())?;
    let (curv, cost) = match lambda_prev {
        Some(prev) => {
            check_len(n, prev.len())?;
            (T::of(4.0), prev.iter().map(|l| T::of(-2.0) * *l).collect())
        }
        None => (T::of(2.0), vec![T::zero(); n]),
    };
    let mut qp = QpProblem::new(Matrix::diagonal(&vec![curv; n]), cost);
    let total: T = bids.iter().copied().sum();
    qp.add_eq(&vec![T::one(); n], total / a);
    for (l, limit) in system.limits.iter().enumerate() {
        // flow = -pi (b - a lambda) = a pi lambda - pi b
        let row = system.factors.row(l);
        let pb = dot(row, bids);
        let scaled: Vec<T> = row.iter().map(|p| a * *p).collect();
        let neg: Vec<T> = scaled.iter().map(|p| -*p).collect();
        qp.add_le(&scaled, *limit + pb);
        qp.add_le(&neg, *limit - pb);
    }
    // lambda = b / a trades nothing, which is always admissible.
    let start: Vec<T> = bids.iter().map(|b| *b / a).collect();
    let sol = solve_qp_from(&qp, &start, tol)?;
    Ok(PriceVector { lambda: sol.primal })
}

fn check_len(expected: usize, got: usize) -> Result<(), SharingError> {
    if expected == got {
        Ok(())
    } else {
        Err(SharingError::Length { expected, got })
    }
}

#[derive(Debug, Clone)]
pub struct SharingOptions<T: Scalar> {
    /// Keep the proximal price term in the clearing objective.
    pub proximal: bool,
    pub tol: Tolerances<T>,
}

impl<T: Scalar> Default for SharingOptions<T> {
    fn default() -> Self {
        Self {
            proximal: true,
            tol: Tolerances::default(),
        }
    }
}

pub fn run_sharing<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
    scenario: &Scenario<T>,
    params: &MarketParams<T>,
) -> Result<EquilibriumResult<T>, SharingError> {
    run_sharing_with(grid, users, scenario, params, &SharingOptions::default())
}

/// Alternates market clearing and synchronous best responses from
/// `b = 0`, `lambda = 0` until `|b^n - b^{n-1}|_inf <= eps` or
/// `max_iters` iterations. Running out of iterations is reported through
/// `converged`, not as an error.
pub fn run_sharing_with<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
    scenario: &Scenario<T>,
    params: &MarketParams<T>,
    options: &SharingOptions<T>,
) -> Result<EquilibriumResult<T>, SharingError> {
    params.validate()?;
    scenario.validate(users)?;
    let system = ClearingSystem::new(grid, users, &options.tol)?;
    let net_fixed = users
        .iter()
        .map(|u| aggregate_net_fixed(u, scenario))
        .collect::<Result<Vec<_>, _>>()?;
    let n = users.len();
    let a = params.a;
    let mut b = vec![T::zero(); n];
    let mut lambda = vec![T::zero(); n];
    let mut d = vec![T::zero(); n];
    let mut trace = BidTrace::default();
    let mut converged = false;

    for iter in 1..=params.max_iters {
        let prev = options.proximal.then_some(lambda.as_slice());
        lambda = clear_market_with(&b, &system, a, prev, &options.tol)?.lambda;
        let mut next = Vec::with_capacity(n);
        for (k, u) in users.iter().enumerate() {
            let (dk, bk) = respond(u, lambda[k], net_fixed[k], a);
            d[k] = dk;
            next.push(bk);
        }
        let residual = max_abs_diff(&next, &b);
        b = next;
        trace.records.push(BidRecord {
            n: iter,
            b: b.clone(),
            lambda: lambda.clone(),
            d: d.clone(),
            residual,
        });
        if residual <= params.eps {
            converged = true;
            break;
        }
    }

    let q = b.iter().zip(&lambda).map(|(b, l)| *b - a * *l).collect();
    Ok(EquilibriumResult {
        user_ids: users.iter().map(|u| u.id).collect(),
        d,
        b,
        lambda,
        q,
        converged,
        iterations: trace.len(),
        trace,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct C1Report<T: Scalar> {
    pub holds: bool,
    /// `min_k 2 alpha1_k - 1/a`; positive when the condition holds.
    pub margin: T,
}

/// Sufficient convergence condition for [`run_sharing`]: every disutility
/// is more curved than `1/a`.
pub fn check_c1<T: Scalar>(users: &[UserSpec<T>], a: T) -> C1Report<T> {
    let min_curv = users.iter().map(|u| u.curvature()).fold(T::infinity(), T::min);
    let margin = min_curv - T::one() / a;
    C1Report {
        holds: margin > T::zero(),
        margin,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GneCheck<T: Scalar> {
    pub name: String,
    pub passed: bool,
    /// Worst violation found.
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GneReport<T: Scalar> {
    pub tol: T,
    pub checks: Vec<GneCheck<T>>,
}

impl<T: Scalar> GneReport<T> {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

/// Market description needed to check an equilibrium.
#[derive(Debug, Clone)]
pub struct MarketView<'a, T: Scalar> {
    pub users: &'a [UserSpec<T>],
    pub scenario: &'a Scenario<T>,
    pub system: &'a ClearingSystem<T>,
    pub a: T,
}

/// Compares an equilibrium with the centralized optimum and checks the
/// equilibrium conditions directly:
///
/// - `demand`: `|d_eq - d_ref|_inf`
/// - `price`: `|lambda_eq - lambda_ref|_inf`
/// - `bid`: `b_k = d_k + D_k + a lambda_k` at the reference point
/// - `user-optimality`: `f(x) - f(d) + (x - d) lambda >= 0` for sampled `x`
///   in each box
/// - `operator-optimality`: `lambda . (p - p_eq) <= 0` for sampled net
///   demands `p` that balance and respect the line limits
pub fn verify_gne<T: Scalar>(
    eq: &EquilibriumResult<T>,
    reference: &DispatchSolution<T>,
    market: &MarketView<'_, T>,
    tol: T,
    samples: usize,
    seed: u64,
) -> Result<GneReport<T>, SharingError> {
    let n = market.users.len();
    for len in [eq.d.len(), eq.b.len(), eq.lambda.len(), reference.d.len(), reference.lambda.len()] {
        check_len(n, len)?;
    }
    let mut checks = Vec::new();
    let mut push = |name: &str, value: T| {
        checks.push(GneCheck {
            name: name.to_string(),
            passed: value <= tol,
            value,
        })
    };

    push("demand", max_abs_diff(&eq.d, &reference.d));
    push("price", max_abs_diff(&eq.lambda, &reference.lambda));

    let net_fixed = market
        .users
        .iter()
        .map(|u| aggregate_net_fixed(u, market.scenario))
        .collect::<Result<Vec<_>, _>>()?;
    let bid_gap = (0..n)
        .map(|k| (eq.b[k] - (reference.d[k] + net_fixed[k] + market.a * reference.lambda[k])).abs())
        .fold(T::zero(), T::max);
    push("bid", bid_gap);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for (k, u) in market.users.iter().enumerate() {
        let (dk, lk) = (eq.d[k], eq.lambda[k]);
        let base = u.disutility(dk);
        let mut probe = |x: T| {
            let gap = u.disutility(x) - base + (x - dk) * lk;
            worst = worst.max(-gap);
        };
        probe(u.elastic_lo);
        probe(u.elastic_hi);
        for _ in 0..samples {
            let t = T::of(rng.random::<f64>());
            probe(u.elastic_lo + t * (u.elastic_hi - u.elastic_lo));
        }
    }
    push("user-optimality", worst);

    let p_eq: Vec<T> = eq.d.iter().zip(&net_fixed).map(|(d, f)| *d + *f).collect();
    push("operator-optimality", operator_gap(&p_eq, &eq.lambda, market.system, samples, &mut rng, tol));

    Ok(GneReport { tol, checks })
}

/// Largest `lambda . (p - p_eq)` over sampled feasible moves from `p_eq`.
fn operator_gap<T: Scalar>(
    p_eq: &[T],
    lambda: &[T],
    system: &ClearingSystem<T>,
    samples: usize,
    rng: &mut ChaCha8Rng,
    tol: T,
) -> T {
    let n = p_eq.len();
    if n < 2 {
        return T::zero();
    }
    let flows = system.flows(p_eq);
    let mut worst = T::zero();
    let mut try_direction = |dir: &[T]| {
        // Longest step keeping every |flow| within its limit.
        let df = system.flows(dir);
        let mut t = T::one();
        for ((f, g), lim) in flows.iter().zip(&df).zip(&system.limits) {
            if *g > T::zero() {
                t = t.min(((*lim - *f) / *g).max(T::zero()));
            } else if *g < T::zero() {
                t = t.min(((-*lim - *f) / *g).max(T::zero()));
            }
        }
        if t > T::zero() {
            worst = worst.max(t * dot(lambda, dir));
        }
    };
    for i in 0..n.min(64) {
        for j in 0..n.min(64) {
            if i != j {
                let mut e = vec![T::zero(); n];
                e[i] = T::one();
                e[j] = -T::one();
                try_direction(&e);
            }
        }
    }
    for _ in 0..samples {
        let mut v: Vec<T> = (0..n).map(|_| T::of(rng.random::<f64>() - 0.5)).collect();
        let mean = v.iter().copied().sum::<T>() / T::of(n as f64);
        v.iter_mut().for_each(|x| *x -= mean);
        let scale = norm_inf(&v);
        if scale > tol {
            v.iter_mut().for_each(|x| *x /= scale);
            try_direction(&v);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::two_group_case;
    use crate::centralized::solve_centralized;

    #[test]
    fn best_response_interior_and_clamped() {
        let case = two_group_case::<f64>(10.0);
        let (d, b) = best_response(&case.users[0], -0.63, &case.scenario, 1.0).unwrap();
        assert!((d - 0.35).abs() < 1e-12);
        assert!((b - (0.35 - 0.25 - 0.63)).abs() < 1e-12);
        let (d, _) = best_response(&case.users[150], -1.14, &case.scenario, 1.0).unwrap();
        assert!((d - 0.35).abs() < 1e-12);
        let (d, _) = best_response(&case.users[0], 0.0, &case.scenario, 1.0).unwrap();
        assert_eq!(d, 0.2);
        // 1-D grid search oracle on the user's cost
        let u = &case.users[0];
        let cost = |x: f64| u.disutility(x) - 0.63 * (x - 0.25);
        let best = (0..=30_000)
            .map(|i| 0.2 + 0.3 * i as f64 / 30_000.0)
            .min_by(|x, y| cost(*x).partial_cmp(&cost(*y)).unwrap())
            .unwrap();
        assert!((best - 0.35).abs() < 1e-5);
    }

    #[test]
    fn zero_bids_clear_at_zero() {
        let sys = ClearingSystem::<f64>::unconstrained(4);
        let p = clear_market(&[0.0; 4], &sys, 1.0, Some(&[0.0; 4])).unwrap();
        assert!(p.lambda.iter().all(|l| l.abs() < 1e-15));
    }

    #[test]
    fn uniform_price_without_congestion() {
        let bids = [0.3, -1.2, 0.8, 2.5, -0.1];
        let sys = ClearingSystem::<f64>::unconstrained(5);
        let a = 2.0;
        let p = clear_market(&bids, &sys, a, None).unwrap();
        let expected = bids.iter().sum::<f64>() / (a * 5.0);
        assert!(p.lambda.iter().all(|l| (l - expected).abs() < 1e-12));
        let q: f64 = p.quantities(&bids, a).iter().sum();
        assert!(q.abs() < 1e-12);
    }

    #[test]
    fn c1_formula() {
        let users = two_group_case::<f64>(10.0).users;
        let r = check_c1(&users, 1.0);
        assert!(!r.holds && (r.margin + 0.4).abs() < 1e-12);
        let r = check_c1(&users, 10.0);
        assert!(r.holds && (r.margin - 0.5).abs() < 1e-12);
        assert!(check_c1(&users, 1e12).holds);
    }

    #[test]
    fn two_group_equilibrium() {
        let case = two_group_case::<f64>(10.0);
        let eq = run_sharing(&case.grid, &case.users, &case.scenario, &case.market).unwrap();
        assert!(eq.converged, "iterations {}", eq.iterations);
        assert!(eq.d.iter().all(|d| (d - 0.35).abs() < 1e-6));
        let central = solve_centralized(&case.grid, &case.users, &case.scenario).unwrap();
        let system = ClearingSystem::new(&case.grid, &case.users, &Tolerances::default()).unwrap();
        let view = MarketView {
            users: &case.users,
            scenario: &case.scenario,
            system: &system,
            a: case.market.a,
        };
        let report = verify_gne(&eq, &central, &view, 1e-5, 50, 3).unwrap();
        assert!(report.passed(), "{report:?}");

        let mut bad = eq.clone();
        bad.b[17] += 0.1;
        let report = verify_gne(&bad, &central, &view, 1e-5, 50, 3).unwrap();
        assert_eq!(report.failed(), vec!["bid"]);
    }

    #[test]
    fn small_sensitivity_reports_without_error() {
        let mut case = two_group_case::<f64>(10.0);
        case.market.a = 0.01;
        case.market.max_iters = 200;
        let eq = run_sharing(&case.grid, &case.users, &case.scenario, &case.market).unwrap();
        assert_eq!(eq.trace.len(), eq.iterations);
        if !eq.converged {
            assert_eq!(eq.iterations, 200);
        }
    }
}
