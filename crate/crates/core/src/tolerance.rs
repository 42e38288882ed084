//! Every numerical tolerance used by the solvers and the domain checks.
//!
//! The defaults are the values the acceptance suite is pinned to. The
//! `GRIDSHARE_TOL` environment variable can override individual fields with
//! a comma separated list of `name=value` pairs, e.g.
//! `GRIDSHARE_TOL=region=1e-6,membership=1e-8`.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

/// Name of the environment variable read by [`Tolerances::from_env`].
pub const ENV_VAR: &str = "GRIDSHARE_TOL";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Tolerances<T: Scalar> {
    /// Smallest admissible pivot magnitude in LU and simplex pivots.
    pub pivot: T,
    /// Reduced-cost optimality threshold of the simplex method.
    pub lp_optimality: T,
    /// Bound violation accepted for LP primal values, relative to `1 + |rhs|_inf`.
    pub lp_feasibility: T,
    /// Relative duality gap accepted on an optimal LP.
    pub lp_duality_gap: T,
    /// Degenerate pivots after which the simplex switches to Bland's rule.
    pub bland_after: usize,
    /// Hard cap on simplex iterations (both phases together).
    pub lp_max_iters: usize,
    /// KKT stationarity residual of the QP, relative to `1 + |cost|_inf`.
    pub qp_kkt: T,
    /// Step norm below which an active-set step counts as zero.
    pub qp_step: T,
    /// Cap on active-set iterations.
    pub qp_max_iters: usize,
    /// Residual of a square linear solve, relative to `1 + |rhs|_inf`.
    pub linear_residual: T,
    /// Feasibility tolerance for candidate vertices of a halfspace system.
    pub vertex: T,
    /// Distance below which two vertices are merged.
    pub dedup: T,
    /// Region violation tolerance, scaled by `1 + |c|_inf`.
    pub region: T,
    /// Slack granted by the halfspace membership test.
    pub membership: T,
    /// Monte-Carlo samples closer than this to a facet are not scored.
    pub boundary: T,
    /// Cap on the number of cutting planes generated for one region.
    pub max_cuts: usize,
}

impl<T: Scalar> Default for Tolerances<T> {
    fn default() -> Self {
        Self {
            pivot: T::of(1e-11),
            lp_optimality: T::of(1e-9),
            lp_feasibility: T::of(1e-9),
            lp_duality_gap: T::of(1e-7),
            bland_after: 1000,
            lp_max_iters: 100_000,
            qp_kkt: T::of(1e-7),
            qp_step: T::of(1e-12),
            qp_max_iters: 10_000,
            linear_residual: T::of(1e-9),
            vertex: T::of(1e-7),
            dedup: T::of(1e-7),
            region: T::of(1e-7),
            membership: T::of(1e-9),
            boundary: T::of(1e-6),
            max_cuts: 500,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ToleranceError {
    #[error("malformed tolerance override `{0}`, expected name=value")]
    Malformed(String),
    #[error("unknown tolerance `{0}`")]
    Unknown(String),
    #[error("invalid value `{value}` for tolerance `{name}`")]
    Value { name: String, value: String },
}

impl<T: Scalar> Tolerances<T> {
    /// Defaults with any overrides found in `GRIDSHARE_TOL` applied.
    pub fn from_env() -> Result<Self, ToleranceError> {
        let mut tol = Self::default();
        if let Ok(spec) = std::env::var(ENV_VAR) {
            tol.apply_overrides(&spec)?;
        }
        Ok(tol)
    }

    /// Applies `name=value[,name=value...]` overrides in place.
    pub fn apply_overrides(&mut self, spec: &str) -> Result<(), ToleranceError> {
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (name, value) = item
                .split_once('=')
                .ok_or_else(|| ToleranceError::Malformed(item.to_string()))?;
            let (name, value) = (name.trim(), value.trim());
            let bad = || ToleranceError::Value {
                name: name.to_string(),
                value: value.to_string(),
            };
            let real = || -> Result<T, ToleranceError> {
                let v = f64::from_str(value).map_err(|_| bad())?;
                if v.is_finite() && v >= 0.0 {
                    Ok(T::of(v))
                } else {
                    Err(bad())
                }
            };
            let count = || usize::from_str(value).map_err(|_| bad());
            match name {
                "pivot" => self.pivot = real()?,
                "lp_optimality" => self.lp_optimality = real()?,
                "lp_feasibility" => self.lp_feasibility = real()?,
                "lp_duality_gap" => self.lp_duality_gap = real()?,
                "bland_after" => self.bland_after = count()?,
                "lp_max_iters" => self.lp_max_iters = count()?,
                "qp_kkt" => self.qp_kkt = real()?,
                "qp_step" => self.qp_step = real()?,
                "qp_max_iters" => self.qp_max_iters = count()?,
                "linear_residual" => self.linear_residual = real()?,
                "vertex" => self.vertex = real()?,
                "dedup" => self.dedup = real()?,
                "region" => self.region = real()?,
                "membership" => self.membership = real()?,
                "boundary" => self.boundary = real()?,
                "max_cuts" => self.max_cuts = count()?,
                other => return Err(ToleranceError::Unknown(other.to_string())),
            }
        }
        Ok(())
    }
}
