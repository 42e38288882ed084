//! DC power-flow distribution factors and the compact constraint system
//! `{d | A d + B w <= c}`.

use std::collections::HashMap;
use std::fmt;

use crate::model::{BusId, GridSpec, ModelError, UserId, UserSpec};
use crate::scalar::Scalar;
use crate::solver::{Lu, Matrix, SolverError};
use crate::tolerance::Tolerances;

#[derive(Debug, thiserror::Error)]
pub enum NetworkError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("reduced susceptance matrix is singular: {0}")]
    Singular(#[source] SolverError),
    #[error("user {user} sits on unknown bus {bus}")]
    UnknownBus { user: UserId, bus: BusId },
    #[error("invalid output grouping: {0}")]
    Grouping(String),
}

/// Line flow per unit of injection at each bus, `|lines| x |buses|`.
///
/// Flows are oriented `from -> to`; the slack bus absorbs the imbalance so its
/// column is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Ptdf<T: Scalar> {
    pub matrix: Matrix<T>,
    pub buses: Vec<BusId>,
    pub slack_bus: BusId,
}

impl<T: Scalar> Ptdf<T> {
    pub fn column_of(&self, bus: BusId) -> Option<usize> {
        self.buses.iter().position(|b| *b == bus)
    }

    /// Line flows for a bus injection vector ordered like `buses`.
    pub fn flows(&self, injection: &[T]) -> Vec<T> {
        self.matrix.mul_vec(injection)
    }

    /// Factors per user: entry `(l, k)` is the factor of the bus user `k` sits on.
    pub fn user_factors(&self, users: &[UserSpec<T>]) -> Result<Matrix<T>, NetworkError> {
        let cols = users
            .iter()
            .map(|u| {
                self.column_of(u.bus)
                    .ok_or(NetworkError::UnknownBus { user: u.id, bus: u.bus })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Matrix::from_fn(self.matrix.rows(), users.len(), |l, k| {
            self.matrix[(l, cols[k])]
        }))
    }
}

/// Bus susceptance (Laplacian) matrix in the order of `grid.buses`.
pub fn susceptance_matrix<T: Scalar>(grid: &GridSpec<T>) -> Matrix<T> {
    let index = grid.bus_index();
    let n = grid.buses.len();
    let mut b = Matrix::zeros(n, n);
    for l in &grid.lines {
        let (i, j) = (index[&l.from_bus], index[&l.to_bus]);
        b[(i, i)] += l.susceptance;
        b[(j, j)] += l.susceptance;
        b[(i, j)] -= l.susceptance;
        b[(j, i)] -= l.susceptance;
    }
    b
}

pub fn compute_ptdf<T: Scalar>(grid: &GridSpec<T>) -> Result<Ptdf<T>, NetworkError> {
    compute_ptdf_with(grid, &Tolerances::default())
}

pub fn compute_ptdf_with<T: Scalar>(grid: &GridSpec<T>, tol: &Tolerances<T>) -> Result<Ptdf<T>, NetworkError> {
    grid.validate()?;
    let index = grid.bus_index();
    let n = grid.buses.len();
    let slack = index[&grid.slack_bus];
    let keep: Vec<usize> = (0..n).filter(|&i| i != slack).collect();

    // Reactance matrix: inverse of the reduced Laplacian, padded with a zero
    // row and column at the slack.
    let mut x = Matrix::zeros(n, n);
    if !keep.is_empty() {
        let reduced = susceptance_matrix(grid).select(&keep, &keep);
        let lu = Lu::factor(&reduced, tol.pivot).map_err(NetworkError::Singular)?;
        for (jj, &j) in keep.iter().enumerate() {
            let mut e = vec![T::zero(); keep.len()];
            e[jj] = T::one();
            let col = lu.solve(&e);
            for (ii, &i) in keep.iter().enumerate() {
                x[(i, j)] = col[ii];
            }
        }
    }

    let matrix = Matrix::from_fn(grid.lines.len(), n, |l, k| {
        let line = &grid.lines[l];
        let (i, j) = (index[&line.from_bus], index[&line.to_bus]);
        line.susceptance * (x[(i, k)] - x[(j, k)])
    });
    Ok(Ptdf {
        matrix,
        buses: grid.buses.clone(),
        slack_bus: grid.slack_bus,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowLabel {
    BalanceUpper,
    BalanceLower,
    BoxLower(UserId),
    BoxUpper(UserId),
    FlowUpper(usize),
    FlowLower(usize),
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RowLabel::BalanceUpper => write!(f, "balance+"),
            RowLabel::BalanceLower => write!(f, "balance-"),
            RowLabel::BoxLower(u) => write!(f, "box-lo:{u}"),
            RowLabel::BoxUpper(u) => write!(f, "box-hi:{u}"),
            RowLabel::FlowUpper(l) => write!(f, "flow+:{l}"),
            RowLabel::FlowLower(l) => write!(f, "flow-:{l}"),
        }
    }
}

/// All dispatch constraints as `A d + B w <= c`.
///
/// Rows come in pairs: the balance equality, then the box of each user, then
/// both flow directions of each line. Columns of `A` follow `user_ids`;
/// columns of `B` follow `output_ids` (prosumers, or groups of prosumers after
/// [`ConstraintSystem::with_grouped_outputs`]).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSystem<T: Scalar> {
    pub a: Matrix<T>,
    pub b: Matrix<T>,
    pub c: Vec<T>,
    pub labels: Vec<RowLabel>,
    pub user_ids: Vec<UserId>,
    pub output_ids: Vec<UserId>,
    /// Prosumer membership of each `w` coordinate.
    pub output_groups: Vec<Vec<UserId>>,
}

impl<T: Scalar> ConstraintSystem<T> {
    pub fn num_rows(&self) -> usize {
        self.c.len()
    }

    pub fn num_demands(&self) -> usize {
        self.a.cols()
    }

    pub fn num_outputs(&self) -> usize {
        self.b.cols()
    }

    /// `c - B w`.
    pub fn rhs(&self, w: &[T]) -> Vec<T> {
        let bw = self.b.mul_vec(w);
        self.c.iter().zip(bw).map(|(c, bw)| *c - bw).collect()
    }

    /// `A d + B w - c`; feasible iff every entry is `<= 0`.
    pub fn slack(&self, d: &[T], w: &[T]) -> Vec<T> {
        let ad = self.a.mul_vec(d);
        let bw = self.b.mul_vec(w);
        ad.iter()
            .zip(&bw)
            .zip(&self.c)
            .map(|((ad, bw), c)| *ad + *bw - *c)
            .collect()
    }

    pub fn contains(&self, d: &[T], w: &[T], tol: T) -> bool {
        self.slack(d, w).iter().all(|s| *s <= tol)
    }

    /// Replaces per-prosumer outputs by per-group outputs: every prosumer in
    /// a group receives the group's value, so the new `B` is `B G`.
    pub fn with_grouped_outputs(&self, groups: &[Vec<UserId>]) -> Result<Self, NetworkError> {
        let pos: HashMap<UserId, usize> = self.output_ids.iter().enumerate().map(|(i, u)| (*u, i)).collect();
        let mut seen = vec![false; self.output_ids.len()];
        let mut g = Matrix::zeros(self.output_ids.len(), groups.len());
        for (j, group) in groups.iter().enumerate() {
            if group.is_empty() {
                return Err(NetworkError::Grouping(format!("group {j} is empty")));
            }
            for id in group {
                let i = *pos
                    .get(id)
                    .ok_or_else(|| NetworkError::Grouping(format!("user {id} is not an output column")))?;
                if seen[i] {
                    return Err(NetworkError::Grouping(format!("user {id} appears in two groups")));
                }
                seen[i] = true;
                g[(i, j)] = T::one();
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(NetworkError::Grouping(format!(
                "user {} is not assigned to a group",
                self.output_ids[i]
            )));
        }
        Ok(Self {
            b: self.b.mul(&g),
            output_ids: groups.iter().map(|g| g[0]).collect(),
            output_groups: groups.to_vec(),
            ..self.clone()
        })
    }

    /// Expands grouped outputs back to one value per prosumer.
    pub fn expand_outputs(&self, w: &[T]) -> Vec<(UserId, T)> {
        self.output_groups
            .iter()
            .zip(w)
            .flat_map(|(g, w)| g.iter().map(move |u| (*u, *w)))
            .collect()
    }
}

pub fn assemble_constraints<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
) -> Result<ConstraintSystem<T>, NetworkError> {
    let ptdf = compute_ptdf(grid)?;
    assemble_with_ptdf(grid, users, &ptdf)
}

pub fn assemble_with_ptdf<T: Scalar>(
    grid: &GridSpec<T>,
    users: &[UserSpec<T>],
    ptdf: &Ptdf<T>,
) -> Result<ConstraintSystem<T>, NetworkError> {
    let n_d = users.len();
    let prosumers: Vec<usize> = (0..n_d).filter(|&k| users[k].is_prosumer()).collect();
    let n_w = prosumers.len();
    let pi = ptdf.user_factors(users)?;
    let fixed: Vec<T> = users.iter().map(|u| u.fixed_demand).collect();
    let total_fixed: T = fixed.iter().copied().sum();

    let m = 2 + 2 * n_d + 2 * grid.lines.len();
    let mut a = Matrix::zeros(m, n_d);
    let mut b = Matrix::zeros(m, n_w);
    let mut c = Vec::with_capacity(m);
    let mut labels = Vec::with_capacity(m);

    // sum d - sum w <= -sum d_f and its negation.
    for k in 0..n_d {
        a[(0, k)] = T::one();
        a[(1, k)] = -T::one();
    }
    for j in 0..n_w {
        b[(0, j)] = -T::one();
        b[(1, j)] = T::one();
    }
    c.extend([-total_fixed, total_fixed]);
    labels.extend([RowLabel::BalanceUpper, RowLabel::BalanceLower]);

    for (k, u) in users.iter().enumerate() {
        let r = c.len();
        a[(r, k)] = -T::one();
        a[(r + 1, k)] = T::one();
        c.extend([-u.elastic_lo, u.elastic_hi]);
        labels.extend([RowLabel::BoxLower(u.id), RowLabel::BoxUpper(u.id)]);
    }

    // flow_l = sum_k pi_lk (w_k - d_k - d_f_k), bounded by +-F_l.
    for (l, line) in grid.lines.iter().enumerate() {
        let r = c.len();
        let mut pd = T::zero();
        for k in 0..n_d {
            a[(r, k)] = -pi[(l, k)];
            a[(r + 1, k)] = pi[(l, k)];
            pd += pi[(l, k)] * fixed[k];
        }
        for (j, &k) in prosumers.iter().enumerate() {
            b[(r, j)] = pi[(l, k)];
            b[(r + 1, j)] = -pi[(l, k)];
        }
        c.extend([line.flow_limit + pd, line.flow_limit - pd]);
        labels.extend([RowLabel::FlowUpper(l), RowLabel::FlowLower(l)]);
    }

    let output_ids: Vec<UserId> = prosumers.iter().map(|&k| users[k].id).collect();
    Ok(ConstraintSystem {
        a,
        b,
        c,
        labels,
        user_ids: users.iter().map(|u| u.id).collect(),
        output_groups: output_ids.iter().map(|u| vec![*u]).collect(),
        output_ids,
    })
}

/// Prosumers grouped by the bus they sit on, buses in grid order.
pub fn prosumers_by_bus<T: Scalar>(grid: &GridSpec<T>, users: &[UserSpec<T>]) -> Vec<Vec<UserId>> {
    grid.buses
        .iter()
        .map(|b| {
            users
                .iter()
                .filter(|u| u.is_prosumer() && u.bus == *b)
                .map(|u| u.id)
                .collect::<Vec<_>>()
        })
        .filter(|g| !g.is_empty())
        .collect()
}

/// Line flows when user `k` withdraws `net_demand[k]` at its bus.
pub fn line_flows<T: Scalar>(user_factors: &Matrix<T>, net_demand: &[T]) -> Vec<T> {
    user_factors.mul_vec(net_demand).into_iter().map(|f| -f).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases::two_group_case;
    use crate::model::{LineSpec, UserKind};

    fn line(from: i64, to: i64) -> LineSpec<f64> {
        LineSpec {
            from_bus: BusId(from),
            to_bus: BusId(to),
            susceptance: 1.0,
            flow_limit: 5.0,
        }
    }

    fn triangle() -> GridSpec<f64> {
        GridSpec {
            buses: vec![BusId(1), BusId(2), BusId(3)],
            slack_bus: BusId(1),
            lines: vec![line(1, 2), line(1, 3), line(2, 3)],
        }
    }

    #[test]
    fn two_bus_single_path() {
        let grid = GridSpec {
            buses: vec![BusId(1), BusId(2)],
            slack_bus: BusId(1),
            lines: vec![line(1, 2)],
        };
        let p = compute_ptdf(&grid).unwrap();
        assert_eq!(p.flows(&[0.0, 1.0]), vec![-1.0]);
        assert_eq!(p.matrix[(0, 0)], 0.0);
    }

    #[test]
    fn triangle_matches_reduced_inverse() {
        // Reduced Laplacian over buses 2,3 is [[2,-1],[-1,2]]; its inverse is
        // [[2,1],[1,2]]/3, so injecting at bus 2 gives angles (0, 2/3, 1/3).
        let p = compute_ptdf(&triangle()).unwrap();
        let f = p.flows(&[0.0, 1.0, 0.0]);
        let expected = [-2.0 / 3.0, -1.0 / 3.0, 1.0 / 3.0];
        for (a, b) in f.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{f:?}");
        }
        assert!(p.matrix.column(0).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn slack_choice_changes_factors_not_balanced_flows() {
        let mut g2 = triangle();
        g2.slack_bus = BusId(3);
        let p1 = compute_ptdf(&triangle()).unwrap();
        let p2 = compute_ptdf(&g2).unwrap();
        assert!(p2.matrix.column(2).iter().all(|v| *v == 0.0));
        let inj = [0.7, -1.2, 0.5];
        let (f1, f2) = (p1.flows(&inj), p2.flows(&inj));
        for (a, b) in f1.iter().zip(&f2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn two_group_row_counts() {
        let case = two_group_case::<f64>(10.0);
        let cs = assemble_constraints(&case.grid, &case.users).unwrap();
        assert_eq!((cs.num_rows(), cs.num_demands(), cs.num_outputs()), (404, 200, 200));
        for j in 0..200 {
            assert_eq!(cs.a[(0, j)], -cs.a[(1, j)]);
            assert_eq!(cs.b[(0, j)], -cs.b[(1, j)]);
        }
        assert_eq!(cs.c[0], -cs.c[1]);
    }

    #[test]
    fn no_lines_one_bus() {
        let grid = GridSpec::<f64> {
            buses: vec![BusId(4)],
            slack_bus: BusId(4),
            lines: vec![],
        };
        let users: Vec<UserSpec<f64>> = (1..=2)
            .map(|i| UserSpec {
                id: UserId(i),
                bus: BusId(4),
                kind: UserKind::Consumer,
                fixed_demand: 1.0,
                elastic_lo: 0.0,
                elastic_hi: 1.0,
                alpha1: 1.0,
                alpha2: 0.0,
            })
            .collect();
        let cs = assemble_constraints(&grid, &users).unwrap();
        assert_eq!(cs.num_rows(), 6);
        assert_eq!(cs.num_outputs(), 0);
    }

    #[test]
    fn hand_built_point_is_feasible() {
        // Two prosumers on a two-bus line: fixed 1.0 each, outputs 1.5 and 0.9,
        // demands 0.2 and 0.2 balance (2.4 = 2.0 + 0.4). Net withdrawal at bus 2
        // is 1.2 - 0.9 = 0.3, so 0.3 kW flows 1 -> 2, under the 5 kW limit.
        let grid = GridSpec {
            buses: vec![BusId(1), BusId(2)],
            slack_bus: BusId(1),
            lines: vec![line(1, 2)],
        };
        let users: Vec<UserSpec<f64>> = (1..=2)
            .map(|i| UserSpec {
                id: UserId(i),
                bus: BusId(i),
                kind: UserKind::Prosumer,
                fixed_demand: 1.0,
                elastic_lo: 0.0,
                elastic_hi: 0.5,
                alpha1: 1.0,
                alpha2: 0.0,
            })
            .collect();
        let cs = assemble_constraints(&grid, &users).unwrap();
        let s = cs.slack(&[0.2, 0.2], &[1.5, 0.9]);
        assert!(s.iter().all(|v| *v <= 1e-12), "{s:?}");
        assert!((s[6] - (0.3 - 5.0)).abs() < 1e-12);
        let flows = line_flows(&compute_ptdf(&grid).unwrap().user_factors(&users).unwrap(), &[-0.3, 0.3]);
        assert!((flows[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn grouping_sums_columns() {
        let case = two_group_case::<f64>(10.0);
        let cs = assemble_constraints(&case.grid, &case.users).unwrap();
        let groups = prosumers_by_bus(&case.grid, &case.users);
        assert_eq!(groups.len(), 2);
        let g = cs.with_grouped_outputs(&groups).unwrap();
        assert_eq!(g.num_outputs(), 2);
        assert_eq!(g.b[(0, 0)], -100.0);
        assert_eq!(g.expand_outputs(&[1.25, 1.75]).len(), 200);
        assert!(cs.with_grouped_outputs(&groups[..1]).is_err());
    }
}
