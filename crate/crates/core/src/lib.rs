//! Peer-to-peer energy sharing in a microgrid.
//!
//! - [`centralized`]: the operator's optimal dispatch and its prices.
//! - [`sharing`]: the bidding market and its equilibrium.
//! - [`flexibility`]: the set of renewable outputs the grid can absorb.
//!
//! Everything is generic over the scalar type; the aliases at the crate root
//! fix it to `f64`.

pub mod cases;
pub mod centralized;
pub mod flexibility;
pub mod model;
pub mod network;
pub mod scalar;
pub mod sharing;
pub mod solver;
pub mod tolerance;

pub use model::{load_case, BusId, UserId, UserKind};
pub use scalar::Scalar;

pub type Case = model::Case<f64>;
pub type GridSpec = model::GridSpec<f64>;
pub type LineSpec = model::LineSpec<f64>;
pub type UserSpec = model::UserSpec<f64>;
pub type Scenario = model::Scenario<f64>;
pub type MarketParams = model::MarketParams<f64>;
pub type Tolerances = tolerance::Tolerances<f64>;
pub type Ptdf = network::Ptdf<f64>;
pub type ConstraintSystem = network::ConstraintSystem<f64>;
pub type DispatchSolution = centralized::DispatchSolution<f64>;
pub type EquilibriumResult = sharing::EquilibriumResult<f64>;
pub type BidTrace = sharing::BidTrace<f64>;
pub type PriceVector = sharing::PriceVector<f64>;
pub type ClearingSystem = sharing::ClearingSystem<f64>;
pub type Region = flexibility::Region<f64>;
pub type DualBox = flexibility::DualBox<f64>;

/// Any error the library reports.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] model::ModelError),
    #[error(transparent)]
    Network(#[from] network::NetworkError),
    #[error(transparent)]
    Dispatch(#[from] centralized::DispatchError),
    #[error(transparent)]
    Sharing(#[from] sharing::SharingError),
    #[error(transparent)]
    Flexibility(#[from] flexibility::FlexError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Tolerance(#[from] tolerance::ToleranceError),
}
