//! LU factorization with partial pivoting.

use super::{Matrix, SolverError};
use crate::scalar::{norm_inf, Scalar};
use crate::tolerance::Tolerances;

/// `P A = L U` packed into one matrix; `perm[i]` is the source row of row `i`.
#[derive(Debug, Clone)]
pub struct Lu<T: Scalar> {
    lu: Matrix<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> Lu<T> {
    /// Factors a square matrix. Fails with a rank estimate when a pivot falls
    /// below `pivot_tol * max|A|`.
    pub fn factor(a: &Matrix<T>, pivot_tol: T) -> Result<Self, SolverError> {
        if !a.is_square() {
            return Err(SolverError::NotSquare {
                rows: a.rows(),
                cols: a.cols(),
            });
        }
        let n = a.rows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let threshold = pivot_tol * a.max_abs().max(T::one());
        let mut singular = false;

        for k in 0..n {
            let (p, pmax) = (k..n)
                .map(|i| (i, lu[(i, k)].abs()))
                .fold((k, T::zero()), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pmax <= threshold {
                singular = true;
                break;
            }
            if p != k {
                for j in 0..n {
                    let tmp = lu[(k, j)];
                    lu[(k, j)] = lu[(p, j)];
                    lu[(p, j)] = tmp;
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] / pivot;
                lu[(i, k)] = f;
                if f.is_zero() {
                    continue;
                }
                for j in k + 1..n {
                    let ukj = lu[(k, j)];
                    lu[(i, j)] -= f * ukj;
                }
            }
        }
        if singular {
            return Err(SolverError::Singular {
                rank: rank_estimate(a, pivot_tol),
                size: n,
            });
        }
        Ok(Self { lu, perm })
    }

    pub fn size(&self) -> usize {
        self.perm.len()
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.size();
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[(i, j)] * x[j];
            }
            x[i] = s / self.lu[(i, i)];
        }
        x
    }

    /// Solves `A^T y = c`.
    pub fn solve_transposed(&self, c: &[T]) -> Vec<T> {
        let n = self.size();
        assert_eq!(c.len(), n);
        // U^T z = c, then L^T v = z, then y = P^T v.
        let mut z = c.to_vec();
        for i in 0..n {
            let mut s = z[i];
            for j in 0..i {
                s -= self.lu[(j, i)] * z[j];
            }
            z[i] = s / self.lu[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = z[i];
            for j in i + 1..n {
                s -= self.lu[(j, i)] * z[j];
            }
            z[i] = s;
        }
        let mut y = vec![T::zero(); n];
        for (i, &p) in self.perm.iter().enumerate() {
            y[p] = z[i];
        }
        y
    }

    /// Ratio of the largest to the smallest pivot magnitude. A cheap lower
    /// bound on the condition number, used in error reports.
    pub fn pivot_ratio(&self) -> f64 {
        let n = self.size();
        if n == 0 {
            return 1.0;
        }
        let (lo, hi) = (0..n).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let d = self.lu[(i, i)].abs().to_f64_lossy();
            (lo.min(d), hi.max(d))
        });
        hi / lo
    }
}

/// Numerical rank by Gaussian elimination with complete pivoting.
pub fn rank_estimate<T: Scalar>(a: &Matrix<T>, rel_tol: T) -> usize {
    let mut m = a.clone();
    let (rows, cols) = (m.rows(), m.cols());
    let threshold = rel_tol * m.max_abs().max(T::one());
    let mut rank = 0;
    let mut col_used = vec![false; cols];
    let mut row_used = vec![false; rows];
    loop {
        let mut best = (usize::MAX, usize::MAX, T::zero());
        for i in (0..rows).filter(|i| !row_used[*i]) {
            for j in (0..cols).filter(|j| !col_used[*j]) {
                let v = m[(i, j)].abs();
                if v > best.2 {
                    best = (i, j, v);
                }
            }
        }
        if best.0 == usize::MAX || best.2 <= threshold {
            return rank;
        }
        let (pi, pj) = (best.0, best.1);
        row_used[pi] = true;
        col_used[pj] = true;
        rank += 1;
        for i in (0..rows).filter(|i| !row_used[*i]) {
            let f = m[(i, pj)] / m[(pi, pj)];
            if f.is_zero() {
                continue;
            }
            for j in 0..cols {
                let v = m[(pi, j)];
                m[(i, j)] -= f * v;
            }
        }
    }
}

/// Solves the square system `matrix * x = rhs`.
///
/// One step of iterative refinement is applied; the result is rejected when
/// the residual exceeds `linear_residual * (1 + |rhs|_inf)`.
pub fn solve_linear_system<T: Scalar>(matrix: &Matrix<T>, rhs: &[T]) -> Result<Vec<T>, SolverError> {
    solve_linear_system_with(matrix, rhs, &Tolerances::default())
}

pub fn solve_linear_system_with<T: Scalar>(
    matrix: &Matrix<T>,
    rhs: &[T],
    tol: &Tolerances<T>,
) -> Result<Vec<T>, SolverError> {
    if rhs.len() != matrix.rows() {
        return Err(SolverError::Dimension(format!(
            "rhs has {} entries, matrix has {} rows",
            rhs.len(),
            matrix.rows()
        )));
    }
    let lu = Lu::factor(matrix, tol.pivot)?;
    let mut x = lu.solve(rhs);
    let residual = |x: &[T]| -> Vec<T> {
        matrix
            .mul_vec(x)
            .iter()
            .zip(rhs)
            .map(|(ax, b)| *b - *ax)
            .collect()
    };
    let r = residual(&x);
    let dx = lu.solve(&r);
    for (xi, d) in x.iter_mut().zip(dx) {
        *xi += d;
    }
    let res = norm_inf(&residual(&x));
    let limit = tol.linear_residual * (T::one() + norm_inf(rhs));
    if res > limit {
        return Err(SolverError::NumericalFailure {
            condition_estimate: lu.pivot_ratio(),
            detail: format!("linear solve residual {res} exceeds {limit}"),
        });
    }
    Ok(x)
}
