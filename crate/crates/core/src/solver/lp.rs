//! Dense bounded-variable primal simplex.
//!
//! Every row `i` is turned into `a_i x - r_i = 0` where the row activity
//! `r_i` carries the row bounds. Rows whose activity is out of bounds at the
//! starting point receive an artificial column, and phase 1 minimizes the sum
//! of artificials. Pricing is Dantzig's rule with lowest-index tie breaking;
//! after `bland_after` degenerate pivots the phase switches to Bland's rule.
//! The final basis is refactored from the original columns so that primal
//! values and duals do not carry tableau round-off.

use super::{Lu, Matrix, SolverError};
use crate::scalar::{norm_inf, Scalar};
use crate::tolerance::Tolerances;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowSense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// `opt c^T x` subject to `rows x (<=|=|>=) rhs` and `lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct LpProblem<T: Scalar> {
    pub sense: Sense,
    pub cost: Vec<T>,
    pub rows: Matrix<T>,
    pub row_sense: Vec<RowSense>,
    pub rhs: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> LpProblem<T> {
    /// A problem with no rows and every variable free.
    pub fn new(sense: Sense, cost: Vec<T>) -> Self {
        let n = cost.len();
        Self {
            sense,
            cost,
            rows: Matrix::zeros(0, n),
            row_sense: Vec::new(),
            rhs: Vec::new(),
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rhs.len()
    }

    pub fn with_bounds(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn add_row(&mut self, coeffs: &[T], sense: RowSense, rhs: T) -> &mut Self {
        self.rows.push_row(coeffs);
        self.row_sense.push(sense);
        self.rhs.push(rhs);
        self
    }

    fn row_bounds(&self, i: usize) -> (T, T) {
        match self.row_sense[i] {
            RowSense::Le => (T::neg_infinity(), self.rhs[i]),
            RowSense::Eq => (self.rhs[i], self.rhs[i]),
            RowSense::Ge => (self.rhs[i], T::infinity()),
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        let m = self.num_rows();
        if self.rows.cols() != n || self.rows.rows() != m || self.row_sense.len() != m {
            return Err(SolverError::Dimension(format!(
                "constraint matrix {}x{} with {} senses and {} rhs for {} variables",
                self.rows.rows(),
                self.rows.cols(),
                self.row_sense.len(),
                m,
                n
            )));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return Err(SolverError::Dimension(format!(
                "{} lower and {} upper bounds for {} variables",
                self.lower.len(),
                self.upper.len(),
                n
            )));
        }
        for j in 0..n {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] > self.upper[j] {
                return Err(SolverError::Dimension(format!(
                    "variable {j}: lower bound {} exceeds upper bound {}",
                    self.lower[j], self.upper[j]
                )));
            }
            if !self.cost[j].is_finite() {
                return Err(SolverError::Dimension(format!("cost {j} is not finite")));
            }
        }
        if self.rows.as_slice().iter().chain(&self.rhs).any(|v| !v.is_finite()) {
            return Err(SolverError::Dimension("non-finite constraint data".into()));
        }
        Ok(())
    }
}

/// Result of [`solve_lp`].
///
/// Dual convention: `cost = rows^T dual + reduced_costs`. For a minimization
/// an active `<=` row has `dual <= 0` and an active `>=` row `dual >= 0`;
/// the signs flip for a maximization.
#[derive(Debug, Clone)]
pub struct LpSolution<T: Scalar> {
    pub status: LpStatus,
    pub primal: Vec<T>,
    pub dual: Vec<T>,
    pub reduced_costs: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

impl<T: Scalar> LpSolution<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Objective of the dual problem evaluated at the reported multipliers:
    /// each multiplier is paired with the bound its sign makes active.
    pub fn dual_objective(&self, p: &LpProblem<T>) -> T {
        let s = match p.sense {
            Sense::Min => T::one(),
            Sense::Max => -T::one(),
        };
        let pick = |mult: T, lo: T, hi: T| -> T {
            let signed = mult * s;
            if signed > T::zero() {
                mult * lo
            } else if signed < T::zero() {
                mult * hi
            } else {
                T::zero()
            }
        };
        let rows: T = (0..p.num_rows())
            .map(|i| {
                let (lo, hi) = p.row_bounds(i);
                pick(self.dual[i], lo, hi)
            })
            .sum();
        let vars: T = (0..p.num_vars())
            .map(|j| pick(self.reduced_costs[j], p.lower[j], p.upper[j]))
            .sum();
        rows + vars
    }

    /// Largest bound or row violation of the primal point.
    pub fn primal_residual(&self, p: &LpProblem<T>) -> T {
        let act = p.rows.mul_vec(&self.primal);
        let mut worst = T::zero();
        for (i, a) in act.iter().enumerate() {
            let (lo, hi) = p.row_bounds(i);
            worst = worst.max(lo - *a).max(*a - hi);
        }
        for (j, x) in self.primal.iter().enumerate() {
            worst = worst.max(p.lower[j] - *x).max(*x - p.upper[j]);
        }
        worst
    }
}

/// Solves `p` with the default tolerances.
pub fn solve_lp<T: Scalar>(p: &LpProblem<T>) -> Result<LpSolution<T>, SolverError> {
    solve_lp_with(p, &Tolerances::default())
}

pub fn solve_lp_with<T: Scalar>(
    p: &LpProblem<T>,
    tol: &Tolerances<T>,
) -> Result<LpSolution<T>, SolverError> {
    p.validate()?;
    let mut tab = Tableau::new(p, tol);
    if tab.num_artificial > 0 {
        tab.set_phase_one_costs();
        match tab.iterate()? {
            PhaseEnd::Optimal => {}
            PhaseEnd::Unbounded => {
                return Err(SolverError::NumericalFailure {
                    condition_estimate: f64::NAN,
                    detail: "phase 1 reported an unbounded ray".into(),
                })
            }
        }
        let infeasibility: T = (tab.first_artificial..tab.ncols).map(|j| tab.x[j]).sum();
        if infeasibility > tol.lp_feasibility * (T::one() + norm_inf(&p.rhs)) {
            return Ok(tab.unfinished(LpStatus::Infeasible));
        }
        tab.retire_artificials();
    }
    tab.set_phase_two_costs();
    match tab.iterate()? {
        PhaseEnd::Unbounded => Ok(tab.unfinished(LpStatus::Unbounded)),
        PhaseEnd::Optimal => tab.finish(),
    }
}

enum PhaseEnd {
    Optimal,
    Unbounded,
}

struct Tableau<'a, T: Scalar> {
    p: &'a LpProblem<T>,
    tol: &'a Tolerances<T>,
    n: usize,
    m: usize,
    ncols: usize,
    first_artificial: usize,
    num_artificial: usize,
    /// Row of each artificial column, indexed by `j - first_artificial`.
    artificial_row: Vec<usize>,
    artificial_sign: Vec<T>,
    /// `B^{-1} M`, one row per constraint.
    t: Matrix<T>,
    lo: Vec<T>,
    hi: Vec<T>,
    x: Vec<T>,
    basis: Vec<usize>,
    is_basic: Vec<bool>,
    cost: Vec<T>,
    d: Vec<T>,
    iterations: usize,
    degenerate: usize,
}

impl<'a, T: Scalar> Tableau<'a, T> {
    fn new(p: &'a LpProblem<T>, tol: &'a Tolerances<T>) -> Self {
        let n = p.num_vars();
        let m = p.num_rows();
        let mut x = vec![T::zero(); n + m];
        let mut lo = Vec::with_capacity(n + m);
        let mut hi = Vec::with_capacity(n + m);
        for j in 0..n {
            let (l, u) = (p.lower[j], p.upper[j]);
            x[j] = starting_value(l, u);
            lo.push(l);
            hi.push(u);
        }
        let activity = p.rows.mul_vec(&x[..n]);
        let mut artificial_row = Vec::new();
        let mut artificial_sign = Vec::new();
        for i in 0..m {
            let (l, u) = p.row_bounds(i);
            lo.push(l);
            hi.push(u);
            let a = activity[i];
            if a >= l && a <= u {
                x[n + i] = a;
            } else {
                let target = if a < l { l } else { u };
                x[n + i] = target;
                artificial_row.push(i);
                artificial_sign.push(if target > a { T::one() } else { -T::one() });
            }
        }
        let num_artificial = artificial_row.len();
        let ncols = n + m + num_artificial;
        let first_artificial = n + m;
        for _ in 0..num_artificial {
            lo.push(T::zero());
            hi.push(T::infinity());
        }
        x.resize(ncols, T::zero());

        let mut t = Matrix::zeros(m, ncols);
        let mut basis: Vec<usize> = (0..m).map(|i| n + i).collect();
        // rows with a slack basis: T_i = -M_i
        for i in 0..m {
            for j in 0..n {
                t[(i, j)] = -p.rows[(i, j)];
            }
            t[(i, n + i)] = T::one();
        }
        for (k, (&i, &s)) in artificial_row.iter().zip(&artificial_sign).enumerate() {
            let col = first_artificial + k;
            for j in 0..n {
                t[(i, j)] = s * p.rows[(i, j)];
            }
            t[(i, n + i)] = -s;
            t[(i, col)] = T::one();
            basis[i] = col;
            x[col] = s * (x[n + i] - activity[i]);
        }
        let mut is_basic = vec![false; ncols];
        for &b in &basis {
            is_basic[b] = true;
        }
        Self {
            p,
            tol,
            n,
            m,
            ncols,
            first_artificial,
            num_artificial,
            artificial_row,
            artificial_sign,
            t,
            lo,
            hi,
            x,
            basis,
            is_basic,
            cost: vec![T::zero(); ncols],
            d: vec![T::zero(); ncols],
            iterations: 0,
            degenerate: 0,
        }
    }

    fn set_phase_one_costs(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = T::zero());
        for j in self.first_artificial..self.ncols {
            self.cost[j] = T::one();
        }
        self.recompute_reduced_costs();
    }

    fn set_phase_two_costs(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = T::zero());
        let flip = match self.p.sense {
            Sense::Min => T::one(),
            Sense::Max => -T::one(),
        };
        for j in 0..self.n {
            self.cost[j] = flip * self.p.cost[j];
        }
        self.degenerate = 0;
        self.recompute_reduced_costs();
    }

    /// Artificials are pinned to zero for phase 2; basic ones stay basic and
    /// leave on the first degenerate pivot through their row.
    fn retire_artificials(&mut self) {
        for j in self.first_artificial..self.ncols {
            self.lo[j] = T::zero();
            self.hi[j] = T::zero();
            if !self.is_basic[j] {
                self.x[j] = T::zero();
            }
        }
    }

    fn recompute_reduced_costs(&mut self) {
        for j in 0..self.ncols {
            let mut dj = self.cost[j];
            for i in 0..self.m {
                let cb = self.cost[self.basis[i]];
                if !cb.is_zero() {
                    dj -= cb * self.t[(i, j)];
                }
            }
            self.d[j] = dj;
        }
    }

    fn iterate(&mut self) -> Result<PhaseEnd, SolverError> {
        let mut since_refresh = 0usize;
        loop {
            if self.iterations >= self.tol.lp_max_iters {
                return Err(SolverError::IterationLimit {
                    iterations: self.iterations,
                });
            }
            let bland = self.degenerate > self.tol.bland_after;
            let Some(q) = self.price(bland) else {
                return Ok(PhaseEnd::Optimal);
            };
            self.iterations += 1;
            let dir = if self.d[q] < T::zero() { T::one() } else { -T::one() };

            // ratio test; the entering variable's own range allows a bound flip
            let mut step = self.hi[q] - self.lo[q];
            let mut leave: Option<(usize, T)> = None;
            let tie = T::of(1e-12);
            for i in 0..self.m {
                let alpha = -dir * self.t[(i, q)];
                if alpha.abs() <= self.tol.pivot {
                    continue;
                }
                let b = self.basis[i];
                let room = if alpha > T::zero() {
                    (self.hi[b] - self.x[b]) / alpha
                } else {
                    (self.lo[b] - self.x[b]) / alpha
                }
                .max(T::zero());
                let better = match leave {
                    _ if room < step - tie => true,
                    None => room <= step + tie && room.is_finite(),
                    Some((r, a)) => {
                        room <= step + tie
                            && if bland {
                                b < self.basis[r]
                            } else {
                                alpha.abs() > a.abs()
                            }
                    }
                };
                if better {
                    step = step.min(room);
                    leave = Some((i, alpha));
                }
            }
            if !step.is_finite() {
                return Ok(PhaseEnd::Unbounded);
            }
            if step <= self.tol.pivot {
                self.degenerate += 1;
            }
            // move along the edge
            self.x[q] += dir * step;
            for i in 0..self.m {
                let tq = self.t[(i, q)];
                if !tq.is_zero() {
                    let b = self.basis[i];
                    self.x[b] -= dir * tq * step;
                }
            }
            match leave {
                None => {
                    self.x[q] = if dir > T::zero() { self.hi[q] } else { self.lo[q] };
                }
                Some((r, alpha)) => {
                    let b = self.basis[r];
                    self.x[b] = if alpha > T::zero() { self.hi[b] } else { self.lo[b] };
                    if b >= self.first_artificial {
                        self.lo[b] = T::zero();
                        self.hi[b] = T::zero();
                        self.x[b] = T::zero();
                    }
                    self.pivot(r, q);
                    since_refresh += 1;
                    if since_refresh >= 64 {
                        self.recompute_reduced_costs();
                        since_refresh = 0;
                    }
                }
            }
        }
    }

    fn price(&self, bland: bool) -> Option<usize> {
        let opt = self.tol.lp_optimality;
        let mut best: Option<(usize, T)> = None;
        for j in 0..self.ncols {
            if self.is_basic[j] || self.lo[j] == self.hi[j] {
                continue;
            }
            let dj = self.d[j];
            let eligible = (dj < -opt && self.x[j] < self.hi[j]) || (dj > opt && self.x[j] > self.lo[j]);
            if !eligible {
                continue;
            }
            if bland {
                return Some(j);
            }
            if best.map_or(true, |(_, v)| dj.abs() > v) {
                best = Some((j, dj.abs()));
            }
        }
        best.map(|(j, _)| j)
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let piv = self.t[(r, q)];
        for v in self.t.row_mut(r) {
            *v /= piv;
        }
        let pivot_row = self.t.row(r).to_vec();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[(i, q)];
            if f.is_zero() {
                continue;
            }
            for (v, pr) in self.t.row_mut(i).iter_mut().zip(&pivot_row) {
                *v -= f * *pr;
            }
        }
        let dq = self.d[q];
        for (dj, pr) in self.d.iter_mut().zip(&pivot_row) {
            *dj -= dq * *pr;
        }
        self.d[q] = T::zero();
        let old = self.basis[r];
        self.is_basic[old] = false;
        self.is_basic[q] = true;
        self.basis[r] = q;
    }

    /// Column `j` of `[A | -I | E]`.
    fn original_column(&self, j: usize) -> Vec<T> {
        let mut col = vec![T::zero(); self.m];
        if j < self.n {
            for (i, c) in col.iter_mut().enumerate() {
                *c = self.p.rows[(i, j)];
            }
        } else if j < self.first_artificial {
            col[j - self.n] = -T::one();
        } else {
            let k = j - self.first_artificial;
            col[self.artificial_row[k]] = self.artificial_sign[k];
        }
        col
    }

    fn unfinished(&self, status: LpStatus) -> LpSolution<T> {
        LpSolution {
            status,
            primal: self.x[..self.n].to_vec(),
            dual: Vec::new(),
            reduced_costs: Vec::new(),
            objective: T::nan(),
            iterations: self.iterations,
        }
    }

    fn finish(mut self) -> Result<LpSolution<T>, SolverError> {
        let (n, m) = (self.n, self.m);
        if m > 0 {
            let mut bmat = Matrix::zeros(m, m);
            for (k, &b) in self.basis.iter().enumerate() {
                for (i, v) in self.original_column(b).into_iter().enumerate() {
                    bmat[(i, k)] = v;
                }
            }
            let lu = Lu::factor(&bmat, self.tol.pivot).map_err(|e| match e {
                SolverError::Singular { rank, size } => SolverError::NumericalFailure {
                    condition_estimate: f64::INFINITY,
                    detail: format!("final basis is singular (rank {rank} of {size})"),
                },
                other => other,
            })?;
            // B x_B = -N x_N
            let mut rhs = vec![T::zero(); m];
            for j in (0..self.ncols).filter(|&j| !self.is_basic[j]) {
                let xj = self.x[j];
                if xj.is_zero() {
                    continue;
                }
                for (r, c) in rhs.iter_mut().zip(self.original_column(j)) {
                    *r -= c * xj;
                }
            }
            let xb = lu.solve(&rhs);
            for (k, &b) in self.basis.iter().enumerate() {
                self.x[b] = xb[k];
            }
            let cb: Vec<T> = self.basis.iter().map(|&b| self.cost[b]).collect();
            let y = lu.solve_transposed(&cb);
            let scale = T::one() + norm_inf(&self.p.rhs) + norm_inf(&self.x[..n]);
            let worst = self
                .basis
                .iter()
                .map(|&b| (self.lo[b] - self.x[b]).max(self.x[b] - self.hi[b]))
                .fold(T::zero(), T::max);
            if worst > T::of(1e-6) * scale {
                return Err(SolverError::NumericalFailure {
                    condition_estimate: lu.pivot_ratio(),
                    detail: format!("refactored basis violates bounds by {worst}"),
                });
            }
            // project tiny violations back onto the bounds
            for &b in &self.basis {
                self.x[b] = self.x[b].max(self.lo[b]).min(self.hi[b]);
            }
            self.finish_with_duals(y)
        } else {
            self.finish_with_duals(Vec::new())
        }
    }

    fn finish_with_duals(self, y_min: Vec<T>) -> Result<LpSolution<T>, SolverError> {
        let n = self.n;
        let primal = self.x[..n].to_vec();
        let at_y = self.p.rows.tr_mul_vec(&y_min);
        let flip = match self.p.sense {
            Sense::Min => T::one(),
            Sense::Max => -T::one(),
        };
        // Basic columns have zero reduced cost by construction; zero them
        // exactly so round-off cannot pick an infinite bound in the dual.
        let reduced_costs: Vec<T> = (0..n)
            .map(|j| if self.is_basic[j] { T::zero() } else { flip * (self.cost[j] - at_y[j]) })
            .collect();
        let dual: Vec<T> = y_min
            .iter()
            .enumerate()
            .map(|(i, y)| if self.is_basic[n + i] { T::zero() } else { flip * *y })
            .collect();
        let objective = self.p.cost.iter().zip(&primal).map(|(c, x)| *c * *x).sum();
        Ok(LpSolution {
            status: LpStatus::Optimal,
            primal,
            dual,
            reduced_costs,
            objective,
            iterations: self.iterations,
        })
    }
}

/// Nonbasic starting value: the finite bound of smaller magnitude, else zero.
fn starting_value<T: Scalar>(lo: T, hi: T) -> T {
    match (lo.is_finite(), hi.is_finite()) {
        (true, true) => {
            if lo.abs() <= hi.abs() {
                lo
            } else {
                hi
            }
        }
        (true, false) => lo,
        (false, true) => hi,
        (false, false) => T::zero(),
    }
}
