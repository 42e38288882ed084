use gridshare_core::centralized::solve_centralized_with;
use gridshare_core::sharing::{run_sharing_with, SharingError, SharingOptions};
use gridshare_core::{Case, Tolerances, UserId};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisreportRow {
    pub scale: f64,
    /// Realized disutility of the misreporting user, true coefficients.
    pub user_central: f64,
    pub user_sharing: f64,
    /// Sum of realized disutilities over all users.
    pub total_central: f64,
    pub total_sharing: f64,
    /// Centralized dispatch infeasible under the reported coefficients.
    pub central_infeasible: bool,
    /// Sharing market hit its iteration cap or could not clear.
    pub sharing_unconverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisreportSweepResult {
    pub user: UserId,
    pub rows: Vec<MisreportRow>,
}

impl MisreportSweepResult {
    pub fn to_csv(&self) -> anyhow::Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        Ok(String::from_utf8(w.into_inner()?)?)
    }
}

/// For every scale `s`, the target user reports `(s alpha1, s alpha2)` to
/// both schemes; the outcomes are scored with everyone's true coefficients.
/// Infeasible solves score `NaN` and are flagged.
pub fn misreport_sweep(
    case: &Case,
    target: UserId,
    scales: &[f64],
    tol: &Tolerances,
) -> anyhow::Result<MisreportSweepResult> {
    let k = case
        .users
        .iter()
        .position(|u| u.id == target)
        .ok_or_else(|| anyhow::anyhow!("user {target} is not in the case"))?;
    let score = |d: &[f64]| -> (f64, f64) {
        let total = case.users.iter().zip(d).map(|(u, d)| u.disutility(*d)).sum();
        (case.users[k].disutility(d[k]), total)
    };
    let options = SharingOptions { tol: *tol, ..Default::default() };
    let mut rows = Vec::with_capacity(scales.len());
    for &s in scales {
        let mut reported = case.clone();
        reported.users[k].alpha1 *= s;
        reported.users[k].alpha2 *= s;
        let central = solve_centralized_with(&reported.grid, &reported.users, &reported.scenario, tol)?;
        let (user_central, total_central) = if central.is_optimal() {
            score(&central.d)
        } else {
            (f64::NAN, f64::NAN)
        };
        let (user_sharing, total_sharing, sharing_unconverged) =
            match run_sharing_with(&reported.grid, &reported.users, &reported.scenario, &reported.market, &options) {
                Ok(eq) => {
                    let (u, t) = score(&eq.d);
                    (u, t, !eq.converged)
                }
                Err(SharingError::InfeasibleClearing) => (f64::NAN, f64::NAN, true),
                Err(e) => return Err(e.into()),
            };
        rows.push(MisreportRow {
            scale: s,
            user_central,
            user_sharing,
            total_central,
            total_sharing,
            central_infeasible: !central.is_optimal(),
            sharing_unconverged,
        });
    }
    Ok(MisreportSweepResult { user: target, rows })
}
