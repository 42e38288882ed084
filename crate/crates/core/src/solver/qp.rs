//! Primal active-set method for strictly convex quadratic programs.
//!
//! A feasible start comes from a phase-1 LP. The working set holds the
//! equality rows plus a linearly independent subset of active inequality
//! rows and active variable bounds; variables fixed at a bound are eliminated
//! from each equality-constrained subproblem. When the Hessian is diagonal
//! the subproblem is solved through its Schur complement.

use super::lp::{solve_lp_with, LpProblem, LpStatus, RowSense, Sense};
use super::{rank_estimate, Lu, Matrix, SolverError};
use crate::scalar::{dot, norm_inf, Scalar};
use crate::tolerance::Tolerances;

/// `min 1/2 x^T H x + c^T x` subject to `eq_rows x = eq_rhs`,
/// `ineq_rows x <= ineq_rhs` and `lower <= x <= upper`.
#[derive(Debug, Clone)]
pub struct QpProblem<T: Scalar> {
    pub hessian: Matrix<T>,
    pub cost: Vec<T>,
    pub eq_rows: Matrix<T>,
    pub eq_rhs: Vec<T>,
    pub ineq_rows: Matrix<T>,
    pub ineq_rhs: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Scalar> QpProblem<T> {
    /// Unconstrained problem with free variables.
    pub fn new(hessian: Matrix<T>, cost: Vec<T>) -> Self {
        let n = cost.len();
        Self {
            hessian,
            cost,
            eq_rows: Matrix::zeros(0, n),
            eq_rhs: Vec::new(),
            ineq_rows: Matrix::zeros(0, n),
            ineq_rhs: Vec::new(),
            lower: vec![T::neg_infinity(); n],
            upper: vec![T::infinity(); n],
        }
    }

    pub fn with_bounds(mut self, lower: Vec<T>, upper: Vec<T>) -> Self {
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn add_eq(&mut self, coeffs: &[T], rhs: T) -> &mut Self {
        self.eq_rows.push_row(coeffs);
        self.eq_rhs.push(rhs);
        self
    }

    pub fn add_le(&mut self, coeffs: &[T], rhs: T) -> &mut Self {
        self.ineq_rows.push_row(coeffs);
        self.ineq_rhs.push(rhs);
        self
    }

    pub fn num_vars(&self) -> usize {
        self.cost.len()
    }

    pub fn objective(&self, x: &[T]) -> T {
        let hx = self.hessian.mul_vec(x);
        T::of(0.5) * dot(x, &hx) + dot(&self.cost, x)
    }

    /// Largest violation of any equality, row or bound at `x`.
    pub fn violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for (a, b) in self.eq_rows.mul_vec(x).iter().zip(&self.eq_rhs) {
            worst = worst.max((*a - *b).abs());
        }
        for (a, b) in self.ineq_rows.mul_vec(x).iter().zip(&self.ineq_rhs) {
            worst = worst.max(*a - *b);
        }
        for (j, v) in x.iter().enumerate() {
            worst = worst.max(self.lower[j] - *v).max(*v - self.upper[j]);
        }
        worst
    }

    pub fn gradient(&self, x: &[T]) -> Vec<T> {
        let mut g = self.hessian.mul_vec(x);
        for (gi, ci) in g.iter_mut().zip(&self.cost) {
            *gi += *ci;
        }
        g
    }

    fn validate(&self) -> Result<(), SolverError> {
        let n = self.num_vars();
        let dims_ok = self.hessian.rows() == n
            && self.hessian.cols() == n
            && self.eq_rows.cols() == n
            && self.eq_rows.rows() == self.eq_rhs.len()
            && self.ineq_rows.cols() == n
            && self.ineq_rows.rows() == self.ineq_rhs.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !dims_ok {
            return Err(SolverError::Dimension(format!(
                "inconsistent QP dimensions for {n} variables"
            )));
        }
        if let Some(j) = (0..n).find(|&j| !(self.lower[j] <= self.upper[j])) {
            return Err(SolverError::Dimension(format!(
                "variable {j}: lower bound {} exceeds upper bound {}",
                self.lower[j], self.upper[j]
            )));
        }
        if !self.hessian.is_symmetric(T::of(1e-12) * (T::one() + self.hessian.max_abs())) {
            return Err(SolverError::Dimension("Hessian is not symmetric".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QpStatus {
    Optimal,
}

/// Optimal point with multipliers satisfying
/// `H x + c + eq_rows^T eq_duals + ineq_rows^T ineq_duals - bound_duals = 0`,
/// `ineq_duals >= 0`, and `bound_duals` nonnegative at an active lower bound,
/// nonpositive at an active upper bound, zero otherwise.
#[derive(Debug, Clone)]
pub struct QpSolution<T: Scalar> {
    pub status: QpStatus,
    pub primal: Vec<T>,
    pub eq_duals: Vec<T>,
    pub ineq_duals: Vec<T>,
    pub bound_duals: Vec<T>,
    pub objective: T,
    pub iterations: usize,
}

impl<T: Scalar> QpSolution<T> {
    /// Infinity norm of the stationarity residual.
    pub fn stationarity_residual(&self, p: &QpProblem<T>) -> T {
        let mut r = p.gradient(&self.primal);
        let e = p.eq_rows.tr_mul_vec(&self.eq_duals);
        let i = p.ineq_rows.tr_mul_vec(&self.ineq_duals);
        for j in 0..r.len() {
            r[j] += e[j] + i[j] - self.bound_duals[j];
        }
        norm_inf(&r)
    }

    /// Largest product of a multiplier with the slack of its constraint.
    pub fn complementarity_residual(&self, p: &QpProblem<T>) -> T {
        let act = p.ineq_rows.mul_vec(&self.primal);
        let rows = self
            .ineq_duals
            .iter()
            .zip(act.iter().zip(&p.ineq_rhs))
            .map(|(mu, (a, b))| (*mu * (*b - *a)).abs());
        let bounds = self.bound_duals.iter().enumerate().map(|(j, z)| {
            let x = self.primal[j];
            if *z > T::zero() {
                (*z * (x - p.lower[j])).abs()
            } else if *z < T::zero() {
                (*z * (p.upper[j] - x)).abs()
            } else {
                T::zero()
            }
        });
        rows.chain(bounds).fold(T::zero(), T::max)
    }
}

pub fn solve_qp<T: Scalar>(p: &QpProblem<T>) -> Result<QpSolution<T>, SolverError> {
    solve_qp_with(p, &Tolerances::default())
}

pub fn solve_qp_with<T: Scalar>(
    p: &QpProblem<T>,
    tol: &Tolerances<T>,
) -> Result<QpSolution<T>, SolverError> {
    p.validate()?;
    check_positive_definite(&p.hessian)?;
    let x0 = feasible_start(p, tol)?;
    ActiveSet::new(p, tol, x0).run()
}

/// Like [`solve_qp_with`], starting from `x0` when it satisfies every
/// constraint to within `lp_feasibility`; otherwise falls back to phase 1.
pub fn solve_qp_from<T: Scalar>(
    p: &QpProblem<T>,
    x0: &[T],
    tol: &Tolerances<T>,
) -> Result<QpSolution<T>, SolverError> {
    p.validate()?;
    check_positive_definite(&p.hessian)?;
    let x0 = if x0.len() == p.num_vars() && p.violation(x0) <= tol.lp_feasibility {
        x0.iter()
            .enumerate()
            .map(|(j, v)| v.max(p.lower[j]).min(p.upper[j]))
            .collect()
    } else {
        feasible_start(p, tol)?
    };
    ActiveSet::new(p, tol, x0).run()
}

/// Cholesky test; fails on the first nonpositive pivot.
pub fn check_positive_definite<T: Scalar>(h: &Matrix<T>) -> Result<(), SolverError> {
    let n = h.rows();
    if h.is_diagonal() {
        return match (0..n).find(|&i| !(h[(i, i)] > T::zero())) {
            Some(i) => Err(SolverError::Indefinite { index: i }),
            None => Ok(()),
        };
    }
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut s = h[(j, j)];
        for k in 0..j {
            s -= l[(j, k)] * l[(j, k)];
        }
        if !(s > T::zero()) {
            return Err(SolverError::Indefinite { index: j });
        }
        let ljj = s.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..n {
            let mut s = h[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / ljj;
        }
    }
    Ok(())
}

fn feasible_start<T: Scalar>(p: &QpProblem<T>, tol: &Tolerances<T>) -> Result<Vec<T>, SolverError> {
    let n = p.num_vars();
    let mut lp = LpProblem::new(Sense::Min, vec![T::zero(); n])
        .with_bounds(p.lower.clone(), p.upper.clone());
    for i in 0..p.eq_rows.rows() {
        lp.add_row(p.eq_rows.row(i), RowSense::Eq, p.eq_rhs[i]);
    }
    for i in 0..p.ineq_rows.rows() {
        lp.add_row(p.ineq_rows.row(i), RowSense::Le, p.ineq_rhs[i]);
    }
    let sol = solve_lp_with(&lp, tol)?;
    match sol.status {
        LpStatus::Optimal => Ok(sol.primal),
        _ => Err(SolverError::Infeasible),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

/// A constraint normal that can join the working set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Normal {
    Eq(usize),
    Row(usize),
    Var(usize),
}

struct ActiveSet<'a, T: Scalar> {
    p: &'a QpProblem<T>,
    tol: &'a Tolerances<T>,
    x: Vec<T>,
    bound: Vec<Bound>,
    eq_active: Vec<usize>,
    rows_active: Vec<usize>,
    diagonal: bool,
}

impl<'a, T: Scalar> ActiveSet<'a, T> {
    fn new(p: &'a QpProblem<T>, tol: &'a Tolerances<T>, x: Vec<T>) -> Self {
        let n = p.num_vars();
        let mut me = Self {
            p,
            tol,
            x,
            bound: vec![Bound::Free; n],
            eq_active: Vec::new(),
            rows_active: Vec::new(),
            diagonal: p.hessian.is_diagonal(),
        };
        me.initial_working_set();
        me
    }

    fn normal(&self, c: Normal) -> Vec<T> {
        match c {
            Normal::Eq(i) => self.p.eq_rows.row(i).to_vec(),
            Normal::Row(i) => self.p.ineq_rows.row(i).to_vec(),
            Normal::Var(j) => {
                let mut e = vec![T::zero(); self.p.num_vars()];
                e[j] = T::one();
                e
            }
        }
    }

    /// Equalities first, then active bounds, then active rows; a candidate is
    /// kept only when it is linearly independent of those already chosen.
    fn initial_working_set(&mut self) {
        let n = self.p.num_vars();
        let near = |v: T, target: T| (v - target).abs() <= T::of(1e-9) * (T::one() + target.abs());
        let mut candidates: Vec<Normal> = (0..self.p.eq_rows.rows()).map(Normal::Eq).collect();
        for j in 0..n {
            if (self.p.lower[j].is_finite() && near(self.x[j], self.p.lower[j]))
                || (self.p.upper[j].is_finite() && near(self.x[j], self.p.upper[j]))
            {
                candidates.push(Normal::Var(j));
            }
        }
        let act = self.p.ineq_rows.mul_vec(&self.x);
        for (i, a) in act.iter().enumerate() {
            if near(*a, self.p.ineq_rhs[i]) {
                candidates.push(Normal::Row(i));
            }
        }
        let mut basis: Vec<Vec<T>> = Vec::new();
        for c in candidates {
            if basis.len() >= n {
                break;
            }
            let mut v = self.normal(c);
            let scale = crate::scalar::norm2(&v);
            if scale.is_zero() {
                continue;
            }
            // two passes of Gram-Schmidt for stability
            for _ in 0..2 {
                for q in &basis {
                    let proj = dot(&v, q);
                    for (vi, qi) in v.iter_mut().zip(q) {
                        *vi -= proj * *qi;
                    }
                }
            }
            let rest = crate::scalar::norm2(&v);
            if rest <= T::of(1e-9) * scale {
                continue;
            }
            for vi in v.iter_mut() {
                *vi /= rest;
            }
            basis.push(v);
            match c {
                Normal::Eq(i) => self.eq_active.push(i),
                Normal::Row(i) => self.rows_active.push(i),
                Normal::Var(j) => {
                    let at_lower = self.p.lower[j].is_finite() && near(self.x[j], self.p.lower[j]);
                    if at_lower {
                        self.bound[j] = Bound::Lower;
                        self.x[j] = self.p.lower[j];
                    } else {
                        self.bound[j] = Bound::Upper;
                        self.x[j] = self.p.upper[j];
                    }
                }
            }
        }
    }

    /// Working-set rows restricted to the free variables.
    fn working_rows(&self, free: &[usize]) -> Matrix<T> {
        let mut rows = Matrix::zeros(0, free.len());
        for &i in &self.eq_active {
            let r = self.p.eq_rows.row(i);
            rows.push_row(&free.iter().map(|&j| r[j]).collect::<Vec<_>>());
        }
        for &i in &self.rows_active {
            let r = self.p.ineq_rows.row(i);
            rows.push_row(&free.iter().map(|&j| r[j]).collect::<Vec<_>>());
        }
        rows
    }

    /// Solves the equality-constrained step problem. Returns the step on the
    /// free variables and the working-set multipliers.
    fn solve_step(&self, free: &[usize], g: &[T]) -> Result<(Vec<T>, Vec<T>), SolverError> {
        let c = self.working_rows(free);
        let k = c.rows();
        let nf = free.len();
        let g_f: Vec<T> = free.iter().map(|&j| g[j]).collect();
        let singular = |e: SolverError| match e {
            SolverError::Singular { rank, size } => SolverError::NumericalFailure {
                condition_estimate: f64::INFINITY,
                detail: format!("working set KKT system singular (rank {rank} of {size})"),
            },
            other => other,
        };
        if self.diagonal {
            // H p + C^T nu = -g, C p = 0  =>  (C H^-1 C^T) nu = -C H^-1 g
            let hinv: Vec<T> = free
                .iter()
                .map(|&j| T::one() / self.p.hessian[(j, j)])
                .collect();
            let nu = if k == 0 {
                Vec::new()
            } else {
                let s = Matrix::from_fn(k, k, |a, b| {
                    (0..nf).map(|j| c[(a, j)] * hinv[j] * c[(b, j)]).sum()
                });
                let rhs: Vec<T> = (0..k)
                    .map(|a| -(0..nf).map(|j| c[(a, j)] * hinv[j] * g_f[j]).sum::<T>())
                    .collect();
                Lu::factor(&s, self.tol.pivot).map_err(singular)?.solve(&rhs)
            };
            let ctnu = c.tr_mul_vec(&nu);
            let step = (0..nf).map(|j| -(g_f[j] + ctnu[j]) * hinv[j]).collect();
            Ok((step, nu))
        } else {
            let dim = nf + k;
            let mut kkt = Matrix::zeros(dim, dim);
            for (a, &ja) in free.iter().enumerate() {
                for (b, &jb) in free.iter().enumerate() {
                    kkt[(a, b)] = self.p.hessian[(ja, jb)];
                }
            }
            for r in 0..k {
                for j in 0..nf {
                    kkt[(nf + r, j)] = c[(r, j)];
                    kkt[(j, nf + r)] = c[(r, j)];
                }
            }
            let mut rhs: Vec<T> = g_f.iter().map(|v| -*v).collect();
            rhs.resize(dim, T::zero());
            let sol = Lu::factor(&kkt, self.tol.pivot).map_err(singular)?.solve(&rhs);
            Ok((sol[..nf].to_vec(), sol[nf..].to_vec()))
        }
    }

    /// Whether adding `c` keeps the working set linearly independent on the
    /// variables that stay free.
    fn independent(&self, free: &[usize], c: Normal) -> bool {
        let keep: Vec<usize> = match c {
            Normal::Var(j) => free.iter().copied().filter(|&f| f != j).collect(),
            _ => free.to_vec(),
        };
        let mut rows = self.working_rows(&keep);
        if let Normal::Row(i) = c {
            let r = self.p.ineq_rows.row(i);
            rows.push_row(&keep.iter().map(|&j| r[j]).collect::<Vec<_>>());
        }
        rows.rows() == 0 || rank_estimate(&rows, T::of(1e-10)) == rows.rows()
    }

    fn run(mut self) -> Result<QpSolution<T>, SolverError> {
        let n = self.p.num_vars();
        let mut iterations = 0;
        loop {
            if iterations >= self.tol.qp_max_iters {
                return Err(SolverError::IterationLimit { iterations });
            }
            iterations += 1;
            let g = self.p.gradient(&self.x);
            let free: Vec<usize> = (0..n).filter(|&j| self.bound[j] == Bound::Free).collect();
            let (step, nu) = self.solve_step(&free, &g)?;
            let step_norm = norm_inf(&step);
            let scale = T::one() + norm_inf(&self.x);

            if step_norm <= self.tol.qp_step * scale {
                // multipliers at the current point
                let ne = self.eq_active.len();
                let mut c_full = Matrix::zeros(0, n);
                for &i in &self.eq_active {
                    c_full.push_row(self.p.eq_rows.row(i));
                }
                for &i in &self.rows_active {
                    c_full.push_row(self.p.ineq_rows.row(i));
                }
                let ctnu = c_full.tr_mul_vec(&nu);
                let z: Vec<T> = (0..n)
                    .map(|j| match self.bound[j] {
                        Bound::Free => T::zero(),
                        _ => g[j] + ctnu[j],
                    })
                    .collect();
                let dual_tol = self.tol.qp_kkt * (T::one() + norm_inf(&self.p.cost));
                let mut worst: Option<(T, Normal)> = None;
                for (k, &i) in self.rows_active.iter().enumerate() {
                    let mu = nu[ne + k];
                    if mu < -dual_tol && worst.map_or(true, |(w, _)| mu < w) {
                        worst = Some((mu, Normal::Row(i)));
                    }
                }
                for j in 0..n {
                    let signed = match self.bound[j] {
                        Bound::Free => continue,
                        Bound::Lower => z[j],
                        Bound::Upper => -z[j],
                    };
                    if signed < -dual_tol && worst.map_or(true, |(w, _)| signed < w) {
                        worst = Some((signed, Normal::Var(j)));
                    }
                }
                match worst {
                    None => return Ok(self.solution(&nu, z, iterations)),
                    Some((_, Normal::Row(i))) => self.rows_active.retain(|&r| r != i),
                    Some((_, Normal::Var(j))) => self.bound[j] = Bound::Free,
                    Some((_, Normal::Eq(_))) => unreachable!("equalities never leave"),
                }
                continue;
            }

            let mut p_full = vec![T::zero(); n];
            for (k, &j) in free.iter().enumerate() {
                p_full[j] = step[k];
            }
            // Candidates in ratio order; one that is linearly dependent on the
            // working set can only block through round-off and is skipped.
            let eps = T::of(1e-14) * (T::one() + step_norm);
            let mut candidates: Vec<(T, Normal)> = Vec::new();
            for i in 0..self.p.ineq_rows.rows() {
                if self.rows_active.contains(&i) {
                    continue;
                }
                let row = self.p.ineq_rows.row(i);
                let ap = dot(row, &p_full);
                if ap <= eps {
                    continue;
                }
                let slack = (self.p.ineq_rhs[i] - dot(row, &self.x)).max(T::zero());
                candidates.push((slack / ap, Normal::Row(i)));
            }
            for &j in &free {
                let pj = p_full[j];
                let ratio = if pj > eps && self.p.upper[j].is_finite() {
                    (self.p.upper[j] - self.x[j]).max(T::zero()) / pj
                } else if pj < -eps && self.p.lower[j].is_finite() {
                    (self.p.lower[j] - self.x[j]).min(T::zero()) / pj
                } else {
                    continue;
                };
                candidates.push((ratio, Normal::Var(j)));
            }
            candidates.retain(|(r, _)| *r < T::one());
            candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
            let mut alpha = T::one();
            let mut blocking: Option<Normal> = None;
            for (ratio, c) in candidates {
                if self.independent(&free, c) {
                    alpha = ratio;
                    blocking = Some(c);
                    break;
                }
            }
            for j in 0..n {
                self.x[j] += alpha * p_full[j];
            }
            match blocking {
                Some(Normal::Row(i)) => self.rows_active.push(i),
                Some(Normal::Var(j)) => {
                    if p_full[j] > T::zero() {
                        self.bound[j] = Bound::Upper;
                        self.x[j] = self.p.upper[j];
                    } else {
                        self.bound[j] = Bound::Lower;
                        self.x[j] = self.p.lower[j];
                    }
                }
                _ => {}
            }
        }
    }

    fn solution(&self, nu: &[T], bound_duals: Vec<T>, iterations: usize) -> QpSolution<T> {
        let ne = self.eq_active.len();
        let mut eq_duals = vec![T::zero(); self.p.eq_rows.rows()];
        for (k, &i) in self.eq_active.iter().enumerate() {
            eq_duals[i] = nu[k];
        }
        let mut ineq_duals = vec![T::zero(); self.p.ineq_rows.rows()];
        for (k, &i) in self.rows_active.iter().enumerate() {
            ineq_duals[i] = nu[ne + k].max(T::zero());
        }
        QpSolution {
            status: QpStatus::Optimal,
            objective: self.p.objective(&self.x),
            primal: self.x.clone(),
            eq_duals,
            ineq_duals,
            bound_duals,
            iterations,
        }
    }
}
