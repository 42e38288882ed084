//! Centralized dispatch: minimize total disutility subject to balance, demand
//! boxes and line limits, and recover per-user prices from the duals.

use serde::{Deserialize, Serialize};

use crate::flexibility::{feasibility_value_with, FlexError};
use crate::model::{net_fixed_vector, GridSpec, ModelError, Scenario, UserId, UserSpec};
use crate::network::{assemble_with_ptdf, compute_ptdf_with, line_flows, ConstraintSystem, NetworkError};
use crate::scalar::Scalar;
use crate::solver::{solve_qp_with, Matrix, QpProblem, SolverError};
use crate::tolerance::Tolerances;

#[derive(Debug, thiserror::Error)]
pub enum DispatchError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Flexibility(#[from] FlexError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DispatchStatus {
    Optimal,
    Infeasible,
}

/// Optimal dispatch. When infeasible the vectors are empty and
/// `infeasibility` holds the positive feasibility value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct DispatchSolution<T: Scalar> {
    pub status: DispatchStatus,
    pub user_ids: Vec<UserId>,
    pub d: Vec<T>,
    /// Multiplier of each user's net-demand definition, $/kW.
    pub lambda: Vec<T>,
    /// `d + D`, kW.
    pub net_demand: Vec<T>,
    /// Oriented `from -> to`, kW.
    pub line_flows: Vec<T>,
    pub total_disutility: T,
    pub infeasibility: T,
}

impl<T: Scalar> DispatchSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == DispatchStatus::Optimal
    }
}

pub fn solve_centralized<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
    scenario: &Scenario<T>,
) -> Result<DispatchSolution<T>, DispatchError> {
    solve_centralized_with(grid, users, scenario, &Tolerances::default())
}

pub fn solve_centralized_with<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
    scenario: &Scenario<T>,
    tol: &Tolerances<T>,
) -> Result<DispatchSolution<T>, DispatchError> {
    scenario.validate(users)?;
    let ptdf = compute_ptdf_with(grid, tol)?;
    let pi = ptdf.user_factors(users)?;
    let net_fixed = net_fixed_vector(users, scenario)?;
    let n = users.len();

    let hessian = Matrix::diagonal(&users.iter().map(|u| u.curvature()).collect::<Vec<_>>());
    let cost = users.iter().map(|u| u.alpha2).collect();
    let mut qp = QpProblem::new(hessian, cost).with_bounds(
        users.iter().map(|u| u.elastic_lo).collect(),
        users.iter().map(|u| u.elastic_hi).collect(),
    );
    // sum_k (d_k + D_k) = 0
    let total: T = net_fixed.iter().copied().sum();
    qp.add_eq(&vec![T::one(); n], -total);
    // flow_l = -sum_k pi_lk (d_k + D_k) within +-F_l
    for (l, line) in grid.lines.iter().enumerate() {
        let row = pi.row(l);
        let pd: T = row.iter().zip(&net_fixed).map(|(p, d)| *p * *d).sum();
        let neg: Vec<T> = row.iter().map(|p| -*p).collect();
        qp.add_le(&neg, line.flow_limit + pd);
        qp.add_le(row, line.flow_limit - pd);
    }

    let sol = match solve_qp_with(&qp, tol) {
        Ok(s) => s,
        Err(SolverError::Infeasible) => {
            let csys = assemble_with_ptdf(grid, users, &ptdf)?;
            let w = scenario.vector(users)?;
            let fv = feasibility_value_with(&csys, &w, tol)?;
            return Ok(DispatchSolution {
                status: DispatchStatus::Infeasible,
                user_ids: users.iter().map(|u| u.id).collect(),
                d: Vec::new(),
                lambda: Vec::new(),
                net_demand: Vec::new(),
                line_flows: Vec::new(),
                total_disutility: T::nan(),
                infeasibility: fv.value,
            });
        }
        Err(e) => return Err(e.into()),
    };

    // Stationarity in d reads f'(d_k) + nu - sum_l pi_lk (mu+_l - mu-_l) = bound dual,
    // so the price attached to user k's net demand is everything but f'.
    let nu = sol.eq_duals[0];
    let lambda: Vec<T> = (0..n)
        .map(|k| {
            let mut l = nu;
            for line in 0..grid.lines.len() {
                let (up, down) = (sol.ineq_duals[2 * line], sol.ineq_duals[2 * line + 1]);
                l -= pi[(line, k)] * (up - down);
            }
            l
        })
        .collect();
    let d = sol.primal;
    let net_demand: Vec<T> = d.iter().zip(&net_fixed).map(|(d, f)| *d + *f).collect();
    let total_disutility = users.iter().zip(&d).map(|(u, d)| u.disutility(*d)).sum();
    Ok(DispatchSolution {
        status: DispatchStatus::Optimal,
        user_ids: users.iter().map(|u| u.id).collect(),
        line_flows: line_flows(&pi, &net_demand),
        d,
        lambda,
        net_demand,
        total_disutility,
        infeasibility: T::zero(),
    })
}

/// Whether some dispatch satisfies every constraint at outputs `w` (ordered
/// like the system's output columns).
pub fn check_a1<T: Scalar>(csys: &ConstraintSystem<T>, w: &[T]) -> bool {
    check_a1_with(csys, w, &Tolerances::default())
}

pub fn check_a1_with<T: Scalar>(csys: &ConstraintSystem<T>, w: &[T], tol: &Tolerances<T>) -> bool {
    let scale = T::one() + crate::scalar::norm_inf(&csys.c);
    feasibility_value_with(csys, w, tol).is_ok_and(|fv| fv.value <= tol.region * scale)
}
