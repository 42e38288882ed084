//! Dense linear algebra, LP and QP solvers.

mod lu;
pub mod lp;
mod matrix;
pub mod qp;

pub use lp::{solve_lp, solve_lp_with, LpProblem, LpSolution, LpStatus, RowSense, Sense};
pub use lu::{rank_estimate, solve_linear_system, solve_linear_system_with, Lu};
pub use matrix::Matrix;
pub use qp::{solve_qp, solve_qp_from, solve_qp_with, QpProblem, QpSolution, QpStatus};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SolverError {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is singular (estimated rank {rank} of {size})")]
    Singular { rank: usize, size: usize },
    #[error("quadratic matrix is not positive definite (pivot {index})")]
    Indefinite { index: usize },
    #[error("constraints are infeasible")]
    Infeasible,
    #[error("numerical failure (condition estimate {condition_estimate:.3e}): {detail}")]
    NumericalFailure {
        condition_estimate: f64,
        detail: String,
    },
    #[error("iteration limit reached after {iterations} iterations")]
    IterationLimit { iterations: usize },
}
