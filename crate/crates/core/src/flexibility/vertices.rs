//! Vertex enumeration for low-dimensional polytopes by brute force over
//! every `dim`-subset of facets.

use serde::{Deserialize, Serialize};

use super::FlexError;
use crate::scalar::{dot, max_abs_diff, Scalar};
use crate::solver::{Lu, Matrix};

pub const MAX_DIM: usize = 3;

/// `normal . w <= offset`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Halfspace<T: Scalar> {
    pub normal: Vec<T>,
    pub offset: T,
}

impl<T: Scalar> Halfspace<T> {
    pub fn new(normal: Vec<T>, offset: T) -> Self {
        Self { normal, offset }
    }

    /// `normal . w - offset`; positive outside.
    pub fn excess(&self, w: &[T]) -> T {
        dot(&self.normal, w) - self.offset
    }

    /// Signed distance of `w` to the boundary plane, positive outside.
    pub fn distance(&self, w: &[T]) -> T {
        let n = crate::scalar::norm2(&self.normal);
        if n > T::zero() {
            self.excess(w) / n
        } else {
            self.excess(w)
        }
    }

    /// Scaled to a unit normal; a zero normal is left as is.
    pub fn normalized(&self) -> Self {
        let n = crate::scalar::norm2(&self.normal);
        if n > T::zero() {
            Self {
                normal: self.normal.iter().map(|v| *v / n).collect(),
                offset: self.offset / n,
            }
        } else {
            self.clone()
        }
    }

    pub fn approx_eq(&self, other: &Self, tol: T) -> bool {
        self.normal.len() == other.normal.len()
            && max_abs_diff(&self.normal, &other.normal) <= tol
            && (self.offset - other.offset).abs() <= tol
    }
}

/// Box `0 <= w <= wmax` as `2 dim` halfspaces.
pub fn box_halfspaces<T: Scalar>(wmax: &[T]) -> Vec<Halfspace<T>> {
    let dim = wmax.len();
    let unit = |i: usize, s: T| (0..dim).map(|j| if j == i { s } else { T::zero() }).collect();
    (0..dim)
        .flat_map(|i| {
            [
                Halfspace::new(unit(i, -T::one()), T::zero()),
                Halfspace::new(unit(i, T::one()), wmax[i]),
            ]
        })
        .collect()
}

/// Every point where `dim` facets meet and all halfspaces hold within
/// `feas_tol`, with duplicates closer than `dedup_tol` removed. Order follows
/// the lexicographic order of the facet subsets.
pub fn enumerate_vertices<T: Scalar>(
    halfspaces: &[Halfspace<T>],
    dim: usize,
    feas_tol: T,
    dedup_tol: T,
    pivot_tol: T,
) -> Result<Vec<Vec<T>>, FlexError> {
    if dim == 0 || dim > MAX_DIM {
        return Err(FlexError::UnsupportedDimension(dim));
    }
    if let Some(h) = halfspaces.iter().find(|h| h.normal.len() != dim) {
        return Err(FlexError::DimensionMismatch {
            expected: dim,
            got: h.normal.len(),
        });
    }
    let mut out: Vec<Vec<T>> = Vec::new();
    let mut idx: Vec<usize> = (0..dim).collect();
    let m = halfspaces.len();
    if m < dim {
        return Ok(out);
    }
    loop {
        let rows: Vec<Vec<T>> = idx.iter().map(|&i| halfspaces[i].normal.clone()).collect();
        let rhs: Vec<T> = idx.iter().map(|&i| halfspaces[i].offset).collect();
        if let Ok(lu) = Lu::factor(&Matrix::from_rows(&rows, dim), pivot_tol) {
            let x = lu.solve(&rhs);
            let inside = x.iter().all(|v| v.is_finite())
                && halfspaces
                    .iter()
                    .all(|h| h.excess(&x) <= feas_tol * (T::one() + h.offset.abs()));
            if inside && !out.iter().any(|v| max_abs_diff(v, &x) <= dedup_tol) {
                out.push(x);
            }
        }
        if !next_combination(&mut idx, m) {
            return Ok(out);
        }
    }
}

fn next_combination(idx: &mut [usize], n: usize) -> bool {
    let k = idx.len();
    let mut i = k;
    while i > 0 {
        i -= 1;
        if idx[i] < n - k + i {
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
            return true;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    fn verts(hs: &[Halfspace<f64>], dim: usize) -> Vec<Vec<f64>> {
        let mut v = enumerate_vertices(hs, dim, 1e-7, 1e-7, 1e-11).unwrap();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    #[test]
    fn unit_square() {
        let v = verts(&box_halfspaces(&[1.0, 1.0]), 2);
        assert_eq!(v, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]]);
    }

    #[test]
    fn square_with_cut() {
        let mut hs = box_halfspaces(&[1.0, 1.0]);
        hs.push(Halfspace::new(vec![1.0, 1.0], 1.5));
        let v = verts(&hs, 2);
        // Pairwise intersections of the five lines, filtered by hand:
        // the cut meets x=1 at (1, .5) and y=1 at (.5, 1); (1,1) is cut off.
        let expected = vec![
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![0.5, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.5],
        ];
        assert_eq!(v.len(), 5);
        for (a, b) in v.iter().zip(&expected) {
            assert!(max_abs_diff(a, b) < 1e-12);
        }
    }

    #[test]
    fn unit_cube() {
        assert_eq!(verts(&box_halfspaces(&[1.0, 1.0, 1.0]), 3).len(), 8);
    }

    #[test]
    fn redundant_facets_deduplicate() {
        let mut hs = box_halfspaces(&[1.0, 1.0]);
        hs.push(Halfspace::new(vec![1.0, 1.0], 2.0));
        assert_eq!(verts(&hs, 2).len(), 4);
    }

    #[test]
    fn dimension_limits() {
        let hs = box_halfspaces(&[1.0; 4]);
        assert!(matches!(
            enumerate_vertices(&hs, 4, 1e-7, 1e-7, 1e-11),
            Err(FlexError::UnsupportedDimension(4))
        ));
    }

    #[test]
    fn combinations_cover_all_subsets() {
        let mut idx = vec![0, 1];
        let mut count = 1;
        while next_combination(&mut idx, 5) {
            count += 1;
        }
        assert_eq!(count, 10);
    }
}
