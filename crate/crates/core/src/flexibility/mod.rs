//! Absorbable-region computation.
//!
//! A scenario `w` admits a dispatch iff `min 1^T z` over `A d - z <= c - B w`,
//! `z >= 0` is zero. Its dual is `max u^T (c - B w)` over
//! `U = {u | A^T u = 0, -1 <= u <= 0}`, so the region is cut out by the
//! halfspaces `u^T (c - B w) <= 0` for the vertices of `U`. [`compute_region`]
//! finds the ones that matter by checking the vertices of a shrinking
//! polytope, starting from a box.

mod vertices;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use vertices::{box_halfspaces, enumerate_vertices, Halfspace, MAX_DIM};

use crate::model::UserId;
use crate::network::ConstraintSystem;
use crate::scalar::{dot, norm_inf, Scalar};
use crate::solver::{solve_lp_with, LpProblem, LpStatus, RowSense, Sense, SolverError};
use crate::tolerance::Tolerances;

#[derive(Debug, thiserror::Error)]
pub enum FlexError {
    #[error("regions are supported in 1 to 3 dimensions, got {0}")]
    UnsupportedDimension(usize),
    #[error("expected a {expected}-dimensional point, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("initial box needs finite, nonnegative upper bounds")]
    BadBox,
    #[error("cut {iter} repeats an existing halfspace; tolerances are likely too tight")]
    DuplicateCut { iter: usize },
    #[error("LP ended with status {0:?}")]
    LpStatus(LpStatus),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

/// `U = {u | A^T u = 0, -1 <= u <= 0}` with a prebuilt LP over it.
#[derive(Debug, Clone)]
pub struct DualBox<T: Scalar> {
    lp: LpProblem<T>,
}

impl<T: Scalar> DualBox<T> {
    pub fn new(csys: &ConstraintSystem<T>) -> Self {
        let m = csys.num_rows();
        let mut lp = LpProblem::new(Sense::Max, vec![T::zero(); m]).with_bounds(vec![-T::one(); m], vec![T::zero(); m]);
        for j in 0..csys.num_demands() {
            lp.add_row(&csys.a.column(j), RowSense::Eq, T::zero());
        }
        Self { lp }
    }

    pub fn dim(&self) -> usize {
        self.lp.num_vars()
    }

    pub fn contains(&self, u: &[T], tol: T) -> bool {
        u.len() == self.dim()
            && u.iter().all(|v| *v >= -T::one() - tol && *v <= tol)
            && norm_inf(&self.lp.rows.mul_vec(u)) <= tol
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityValue<T: Scalar> {
    /// Total constraint violation that cannot be avoided, kW.
    pub value: T,
    /// Row multipliers, an element of `U`.
    pub u: Vec<T>,
    /// Minimizing dispatch.
    pub d: Vec<T>,
}

pub fn feasibility_value<T: Scalar>(csys: &ConstraintSystem<T>, w: &[T]) -> Result<FeasibilityValue<T>, FlexError> {
    feasibility_value_with(csys, w, &Tolerances::default())
}

pub fn feasibility_value_with<T: Scalar>(
    csys: &ConstraintSystem<T>,
    w: &[T],
    tol: &Tolerances<T>,
) -> Result<FeasibilityValue<T>, FlexError> {
    check_len(csys.num_outputs(), w.len())?;
    let (m, n) = (csys.num_rows(), csys.num_demands());
    let cost = (0..n + m).map(|j| if j < n { T::zero() } else { T::one() }).collect();
    let lower = (0..n + m).map(|j| if j < n { T::neg_infinity() } else { T::zero() }).collect();
    let mut lp = LpProblem::new(Sense::Min, cost).with_bounds(lower, vec![T::infinity(); n + m]);
    let rhs = csys.rhs(w);
    let mut row = vec![T::zero(); n + m];
    for i in 0..m {
        row[..n].copy_from_slice(csys.a.row(i));
        row[n..].iter_mut().for_each(|v| *v = T::zero());
        row[n + i] = -T::one();
        lp.add_row(&row, RowSense::Le, rhs[i]);
    }
    let sol = solve_lp_with(&lp, tol)?;
    if !sol.is_optimal() {
        return Err(FlexError::LpStatus(sol.status));
    }
    Ok(FeasibilityValue {
        value: sol.objective.max(T::zero()),
        u: sol.dual,
        d: sol.primal[..n].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation<T: Scalar> {
    pub r: T,
    pub u: Vec<T>,
}

/// `max u^T (c - B w)` over `U`.
pub fn max_violation<T: Scalar>(
    dual: &DualBox<T>,
    csys: &ConstraintSystem<T>,
    w: &[T],
) -> Result<Violation<T>, FlexError> {
    max_violation_with(dual, csys, w, &Tolerances::default())
}

pub fn max_violation_with<T: Scalar>(
    dual: &DualBox<T>,
    csys: &ConstraintSystem<T>,
    w: &[T],
    tol: &Tolerances<T>,
) -> Result<Violation<T>, FlexError> {
    check_len(csys.num_outputs(), w.len())?;
    let mut lp = dual.lp.clone();
    lp.cost = csys.rhs(w);
    let sol = solve_lp_with(&lp, tol)?;
    if !sol.is_optimal() {
        return Err(FlexError::LpStatus(sol.status));
    }
    Ok(Violation {
        r: sol.objective.max(T::zero()),
        u: sol.primal,
    })
}

fn check_len(expected: usize, got: usize) -> Result<(), FlexError> {
    if expected == got {
        Ok(())
    } else {
        Err(FlexError::DimensionMismatch { expected, got })
    }
}

/// A cutting plane added while computing a region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Cut<T: Scalar> {
    /// Outer pass (0-based) that produced the cut.
    pub iter: usize,
    pub u: Vec<T>,
    pub r: T,
    pub vertex: Vec<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Region<T: Scalar> {
    pub dim: usize,
    pub halfspaces: Vec<Halfspace<T>>,
    pub vertices: Vec<Vec<T>>,
    pub cuts: Vec<Cut<T>>,
    /// Upper corner of the initial box `[0, wmax]`.
    pub wmax: Vec<T>,
    /// False when the cut limit stopped the computation early.
    pub complete: bool,
    /// Prosumers behind each coordinate.
    #[serde(default)]
    pub groups: Vec<Vec<UserId>>,
}

impl<T: Scalar> Region<T> {
    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn contains(&self, w: &[T]) -> Result<bool, FlexError> {
        self.contains_within(w, T::of(1e-9))
    }

    pub fn contains_within(&self, w: &[T], tol: T) -> Result<bool, FlexError> {
        check_len(self.dim, w.len())?;
        Ok(self.halfspaces.iter().all(|h| h.excess(w) <= tol))
    }

    /// Smallest distance from `w` to any facet plane.
    pub fn facet_distance(&self, w: &[T]) -> T {
        self.halfspaces
            .iter()
            .map(|h| h.distance(w).abs())
            .fold(T::infinity(), T::min)
    }

    pub fn centroid(&self) -> Option<Vec<T>> {
        if self.vertices.is_empty() {
            return None;
        }
        let k = T::of(self.vertices.len() as f64);
        Some(
            (0..self.dim)
                .map(|i| self.vertices.iter().map(|v| v[i]).sum::<T>() / k)
                .collect(),
        )
    }
}

/// Halfspace test against a region (`normal . w <= offset + 1e-9`).
pub fn membership<T: Scalar>(region: &Region<T>, w: &[T]) -> Result<bool, FlexError> {
    region.contains(w)
}

/// Tolerance on `r` and on the feasibility value: relative to the size of `c`.
pub fn region_tolerance<T: Scalar>(csys: &ConstraintSystem<T>, tol: &Tolerances<T>) -> T {
    tol.region * (T::one() + norm_inf(&csys.c))
}

pub fn compute_region<T: Scalar>(csys: &ConstraintSystem<T>, wmax: &[T]) -> Result<Region<T>, FlexError> {
    compute_region_with(csys, wmax, &Tolerances::default(), 0)
}

/// Cutting-plane projection of the feasible set onto the outputs, inside
/// `[0, wmax]`. Each outer pass checks every current vertex and adds the cut
/// of the most violated one (lowest index on ties). `jobs > 1` spreads the
/// vertex LPs over that many threads.
pub fn compute_region_with<T: Scalar>(
    csys: &ConstraintSystem<T>,
    wmax: &[T],
    tol: &Tolerances<T>,
    jobs: usize,
) -> Result<Region<T>, FlexError> {
    let dim = csys.num_outputs();
    if dim == 0 || dim > MAX_DIM {
        return Err(FlexError::UnsupportedDimension(dim));
    }
    check_len(dim, wmax.len())?;
    if wmax.iter().any(|v| !v.is_finite() || *v < T::zero()) {
        return Err(FlexError::BadBox);
    }
    let dual = DualBox::new(csys);
    let rtol = region_tolerance(csys, tol);
    let mut halfspaces = box_halfspaces(wmax);
    let mut cuts = Vec::new();
    let mut complete = true;

    let vertices = loop {
        let verts = enumerate_vertices(&halfspaces, dim, tol.vertex, tol.dedup, tol.pivot)?;
        let violations = par_map(&verts, jobs, |v| max_violation_with(&dual, csys, v, tol))?;
        let mut worst: Option<(usize, &Violation<T>)> = None;
        for (i, v) in violations.iter().enumerate() {
            if v.r > rtol && worst.is_none_or(|(_, w)| v.r > w.r) {
                worst = Some((i, v));
            }
        }
        let Some((i, viol)) = worst else {
            break verts;
        };
        if cuts.len() >= tol.max_cuts {
            complete = false;
            break verts;
        }
        // u^T (c - B w) <= 0  <=>  (-B^T u) . w <= -u^T c
        let normal: Vec<T> = csys.b.tr_mul_vec(&viol.u).into_iter().map(|v| -v).collect();
        let cut = Halfspace::new(normal, -dot(&viol.u, &csys.c)).normalized();
        let iter = cuts.len();
        if halfspaces.iter().any(|h| h.normalized().approx_eq(&cut, tol.dedup)) {
            return Err(FlexError::DuplicateCut { iter });
        }
        halfspaces.push(cut);
        cuts.push(Cut {
            iter,
            u: viol.u.clone(),
            r: viol.r,
            vertex: verts[i].clone(),
        });
    };

    Ok(Region {
        dim,
        halfspaces,
        vertices,
        cuts,
        wmax: wmax.to_vec(),
        complete,
        groups: csys.output_groups.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct Mismatch<T: Scalar> {
    pub sample: usize,
    pub w: Vec<T>,
    pub in_region: bool,
    pub feasible: bool,
    pub feasibility_value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct MonteCarloReport<T: Scalar> {
    pub samples: usize,
    pub seed: u64,
    /// Samples within the boundary band, not classified.
    pub boundary_excluded: usize,
    pub agreements: usize,
    pub mismatches: Vec<Mismatch<T>>,
}

pub fn monte_carlo_check<T: Scalar>(
    csys: &ConstraintSystem<T>,
    region: &Region<T>,
    samples: usize,
    seed: u64,
) -> Result<MonteCarloReport<T>, FlexError> {
    monte_carlo_check_with(csys, region, samples, seed, &Tolerances::default(), 0)
}

/// Draws `samples` points uniformly from the region's initial box and
/// compares halfspace membership with the feasibility LP. Sample `i` uses
/// stream `i` of a ChaCha8 generator seeded with `seed`, so results do not
/// depend on `jobs`.
pub fn monte_carlo_check_with<T: Scalar>(
    csys: &ConstraintSystem<T>,
    region: &Region<T>,
    samples: usize,
    seed: u64,
    tol: &Tolerances<T>,
    jobs: usize,
) -> Result<MonteCarloReport<T>, FlexError> {
    check_len(csys.num_outputs(), region.dim)?;
    let rtol = region_tolerance(csys, tol);
    let indices: Vec<usize> = (0..samples).collect();
    let outcomes = par_map(&indices, jobs, |&i| -> Result<Option<Mismatch<T>>, FlexError> {
        let w = sample_point(&region.wmax, seed, i as u64);
        if region.facet_distance(&w) <= tol.boundary {
            return Ok(None);
        }
        let in_region = region.contains_within(&w, tol.membership)?;
        let fv = feasibility_value_with(csys, &w, tol)?.value;
        Ok(Some(Mismatch {
            sample: i,
            w,
            in_region,
            feasible: fv <= rtol,
            feasibility_value: fv,
        }))
    })?;
    let mut report = MonteCarloReport {
        samples,
        seed,
        boundary_excluded: 0,
        agreements: 0,
        mismatches: Vec::new(),
    };
    for o in outcomes {
        match o {
            None => report.boundary_excluded += 1,
            Some(m) if m.in_region == m.feasible => report.agreements += 1,
            Some(m) => report.mismatches.push(m),
        }
    }
    Ok(report)
}

/// Uniform point in `[0, wmax]` from stream `stream` of the seeded generator.
pub fn sample_point<T: Scalar>(wmax: &[T], seed: u64, stream: u64) -> Vec<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    wmax.iter()
        .map(|hi| T::of(rng.random::<f64>() * hi.to_f64_lossy()))
        .collect()
}

/// Order-preserving map, chunked over `jobs` scoped threads when `jobs > 1`.
fn par_map<I: Sync, O: Send, E: Send>(
    items: &[I],
    jobs: usize,
    f: impl Fn(&I) -> Result<O, E> + Sync,
) -> Result<Vec<O>, E> {
    if jobs <= 1 || items.len() < 2 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(jobs);
    let f = &f;
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<O>, E>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}
