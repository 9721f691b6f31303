//! H-representation polytopes `{x : Hx ≤ h}`.

use itertools::Itertools;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{norm_inf, Lu, Matrix};
use crate::lp::{self, LinearProgram, LpError, LpOptions, LpStatus, SparseRow};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolytopeError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("polytope is empty")]
    Empty,
    #[error("polytope is unbounded")]
    Unbounded,
    #[error("vertex enumeration needs {subsets} subsets, budget is {budget}")]
    DimensionTooLarge { subsets: u128, budget: u128 },
    #[error("points are collinear")]
    DegenerateHull,
    #[error(transparent)]
    Lp(#[from] LpError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Polytope<T: Scalar> {
    h_mat: Matrix<T>,
    h: Vec<T>,
    #[serde(skip)]
    vertices: Option<VertexSet<T>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VertexSet<T> {
    pub points: Vec<Vec<T>>,
}

impl<T: Scalar> VertexSet<T> {
    pub fn new(points: Vec<Vec<T>>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Vec<T>> {
        self.points.iter()
    }

    /// Adds `p` unless a point within `tol` (max norm) is already present.
    pub fn push_dedup(&mut self, p: Vec<T>, tol: T) -> bool {
        if self.points.iter().any(|q| dist_inf(q, &p) <= tol) {
            return false;
        }
        self.points.push(p);
        true
    }

    /// Set equality up to `tol`: every point of each set has a partner in the other.
    pub fn same_points(&self, other: &Self, tol: T) -> bool {
        let covered = |a: &Self, b: &Self| a.points.iter().all(|p| b.points.iter().any(|q| dist_inf(p, q) <= tol));
        covered(self, other) && covered(other, self)
    }
}

fn dist_inf<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |m, (&x, &y)| m.max((x - y).abs()))
}

#[derive(Clone, Debug)]
pub struct VertexOptions<T> {
    /// Candidate kept iff `Hv ≤ h + feas_tol`.
    pub feas_tol: T,
    pub dedup_tol: T,
    /// Maximum number of row subsets examined.
    pub budget: u128,
}

impl<T: Scalar> Default for VertexOptions<T> {
    fn default() -> Self {
        Self {
            feas_tol: T::of(1e-8),
            dedup_tol: T::of(1e-7),
            budget: 20_000_000,
        }
    }
}

pub(crate) fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

impl<T: Scalar> Polytope<T> {
    pub fn new(h_mat: Matrix<T>, h: Vec<T>) -> Result<Self, PolytopeError> {
        if h_mat.rows() != h.len() {
            return Err(PolytopeError::Shape(format!(
                "H has {} rows, h has {} entries",
                h_mat.rows(),
                h.len()
            )));
        }
        if h_mat.check_finite().is_err() || h.iter().any(|v| !v.is_finite()) {
            return Err(PolytopeError::Shape("non-finite entries".into()));
        }
        Ok(Self {
            h_mat,
            h,
            vertices: None,
        })
    }

    /// `{x : |x_i| ≤ b_i}`.
    pub fn symmetric_box(bounds: &[T]) -> Self {
        let n = bounds.len();
        let h_half = Matrix::identity(n);
        Self::symmetric(&h_half, bounds).expect("identity rows match bounds")
    }

    /// `{x : −h ≤ Hx ≤ h}`, stored as `[H; −H] x ≤ [h; h]`.
    pub fn symmetric(h_half: &Matrix<T>, h: &[T]) -> Result<Self, PolytopeError> {
        if h_half.rows() != h.len() {
            return Err(PolytopeError::Shape("H and h row counts differ".into()));
        }
        if h.iter().any(|&v| v < T::zero()) {
            return Err(PolytopeError::Empty);
        }
        let stacked = h_half.vstack(&h_half.scaled(-T::one()));
        let mut rhs = h.to_vec();
        rhs.extend_from_slice(h);
        Self::new(stacked, rhs)
    }

    pub fn dim(&self) -> usize {
        self.h_mat.cols()
    }

    pub fn num_rows(&self) -> usize {
        self.h_mat.rows()
    }

    pub fn h_matrix(&self) -> &Matrix<T> {
        &self.h_mat
    }

    pub fn h_vector(&self) -> &[T] {
        &self.h
    }

    pub fn cached_vertices(&self) -> Option<&VertexSet<T>> {
        self.vertices.as_ref()
    }

    /// Enumerates and caches the vertex list.
    pub fn with_vertices(mut self) -> Result<Self, PolytopeError> {
        let v = enumerate_vertices(&self, &VertexOptions::default())?;
        self.vertices = Some(v);
        Ok(self)
    }

    /// Recovers `(H_half, h_half)` when every row `a ≤ b` has a partner `−a ≤ b`.
    pub fn as_symmetric(&self, tol: T) -> Option<(Matrix<T>, Vec<T>)> {
        let m = self.num_rows();
        let mut used = vec![false; m];
        let mut half_rows = Vec::new();
        let mut half_h = Vec::new();
        for i in 0..m {
            if used[i] {
                continue;
            }
            let partner = (i + 1..m).find(|&j| {
                !used[j]
                    && (self.h[i] - self.h[j]).abs() <= tol
                    && self
                        .h_mat
                        .row(i)
                        .iter()
                        .zip(self.h_mat.row(j))
                        .all(|(&a, &b)| (a + b).abs() <= tol)
            })?;
            used[i] = true;
            used[partner] = true;
            half_rows.push(self.h_mat.row(i).to_vec());
            half_h.push(self.h[i]);
        }
        let half = Matrix::from_rows_with_cols(&half_rows, self.dim()).ok()?;
        Some((half, half_h))
    }

    /// Per-axis `(lower, upper)` when every row is a scaled signed unit vector
    /// and both sides are bounded.
    pub fn box_bounds(&self) -> Option<(Vec<T>, Vec<T>)> {
        let n = self.dim();
        let mut lo = vec![T::neg_infinity(); n];
        let mut hi = vec![T::infinity(); n];
        for i in 0..self.num_rows() {
            let row = self.h_mat.row(i);
            let mut nz = row.iter().enumerate().filter(|(_, v)| **v != T::zero());
            match (nz.next(), nz.next()) {
                (Some((j, &a)), None) => {
                    let b = self.h[i] / a;
                    if a > T::zero() {
                        hi[j] = hi[j].min(b);
                    } else {
                        lo[j] = lo[j].max(b);
                    }
                }
                (None, None) => {
                    if self.h[i] < T::zero() {
                        return None;
                    }
                }
                _ => return None,
            }
        }
        if lo.iter().chain(&hi).all(|v| v.is_finite()) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// `max c·x` over the polytope.
    pub fn support(&self, c: &[T]) -> Result<T, PolytopeError> {
        if let Some((lo, hi)) = self.box_bounds() {
            if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                return Err(PolytopeError::Empty);
            }
            return Ok(c
                .iter()
                .zip(lo.iter().zip(&hi))
                .map(|(&ci, (&l, &h))| if ci >= T::zero() { ci * h } else { ci * l })
                .sum());
        }
        let (v, _) = self.support_point(c)?;
        Ok(v)
    }

    /// `max c·x` together with a maximizer, always by LP.
    pub fn support_point(&self, c: &[T]) -> Result<(T, Vec<T>), PolytopeError> {
        let mut prog = self.as_program();
        let neg: Vec<T> = c.iter().map(|&v| -v).collect();
        prog.set_objective_dense(&neg);
        let r = lp::solve(&prog, &LpOptions::default())?;
        match r.status {
            LpStatus::Optimal => Ok((-r.objective_value, r.x)),
            LpStatus::Infeasible => Err(PolytopeError::Empty),
            LpStatus::Unbounded => Err(PolytopeError::Unbounded),
            LpStatus::IterationLimit => Err(PolytopeError::Lp(LpError::NumericalBreakdown {
                reason: "iteration limit in support LP".into(),
            })),
        }
    }

    /// Feasibility program with free variables and the rows of `H`.
    pub fn as_program(&self) -> LinearProgram<T> {
        let mut prog = LinearProgram::new(self.dim());
        for i in 0..self.num_rows() {
            prog.add_le(SparseRow::from_dense(0, self.h_mat.row(i)), self.h[i]);
        }
        prog
    }

    pub fn is_empty(&self) -> Result<bool, PolytopeError> {
        let r = lp::solve(&self.as_program(), &LpOptions::default())?;
        Ok(r.status == LpStatus::Infeasible)
    }

    /// Errors unless the polytope is nonempty and bounded.
    pub fn check_bounded(&self) -> Result<(), PolytopeError> {
        if let Some((lo, hi)) = self.box_bounds() {
            return if lo.iter().zip(&hi).any(|(l, h)| l > h) {
                Err(PolytopeError::Empty)
            } else {
                Ok(())
            };
        }
        let n = self.dim();
        for j in 0..n {
            for s in [T::one(), -T::one()] {
                let mut e = vec![T::zero(); n];
                e[j] = s;
                self.support_point(&e)?;
            }
        }
        Ok(())
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        assert_eq!(x.len(), self.dim(), "dimension mismatch");
        (0..self.num_rows()).all(|i| crate::linops::dot(self.h_mat.row(i), x) <= self.h[i] + tol)
    }

    /// Largest entry of `Hx − h`.
    pub fn max_violation(&self, x: &[T]) -> T {
        (0..self.num_rows())
            .map(|i| crate::linops::dot(self.h_mat.row(i), x) - self.h[i])
            .fold(T::neg_infinity(), T::max)
    }

    /// Row `i` is implied by the others (`max H_i x` over the rest is at most `h_i + tol`).
    pub fn row_is_redundant(&self, i: usize, tol: T) -> Result<bool, PolytopeError> {
        let mut prog = LinearProgram::new(self.dim());
        for r in (0..self.num_rows()).filter(|&r| r != i) {
            prog.add_le(SparseRow::from_dense(0, self.h_mat.row(r)), self.h[r]);
        }
        let neg: Vec<T> = self.h_mat.row(i).iter().map(|&v| -v).collect();
        prog.set_objective_dense(&neg);
        let r = lp::solve(&prog, &LpOptions::default())?;
        Ok(match r.status {
            LpStatus::Optimal => -r.objective_value <= self.h[i] + tol,
            LpStatus::Infeasible => true,
            _ => false,
        })
    }

    /// Exact area for `n = 2`, otherwise a Monte-Carlo estimate.
    pub fn volume(&self, seed: u64) -> Result<VolumeEstimate<T>, PolytopeError> {
        if self.dim() == 2 {
            let v = match &self.vertices {
                Some(v) => v.clone(),
                None => enumerate_vertices(self, &VertexOptions::default())?,
            };
            return Ok(VolumeEstimate {
                value: volume_2d(&v)?,
                approximate: false,
            });
        }
        volume_monte_carlo(self, 200_000, seed)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VolumeEstimate<T> {
    pub value: T,
    pub approximate: bool,
}

/// `d_k = max_{w ∈ P} C_k·w` for every row of `C`.
pub fn support_vector<T: Scalar>(c: &Matrix<T>, p: &Polytope<T>) -> Result<Vec<T>, PolytopeError> {
    if c.cols() != p.dim() {
        return Err(PolytopeError::Shape("C and P dimensions differ".into()));
    }
    (0..c.rows()).into_par_iter().map(|k| p.support(c.row(k))).collect()
}

/// All vertices of a bounded nonempty polytope, by solving `H_I v = h_I` for
/// every `n`-subset `I` of rows.
pub fn enumerate_vertices<T: Scalar>(p: &Polytope<T>, opts: &VertexOptions<T>) -> Result<VertexSet<T>, PolytopeError> {
    let n = p.dim();
    let m = p.num_rows();
    let subsets = binomial(m, n);
    if subsets > opts.budget {
        return Err(PolytopeError::DimensionTooLarge {
            subsets,
            budget: opts.budget,
        });
    }
    p.check_bounded()?;
    let h = p.h_matrix();
    let scale = h.max_abs().max(T::one());
    let mut out = VertexSet::default();
    for idx in (0..m).combinations(n) {
        let sub = h.select_rows(&idx);
        let Some(lu) = Lu::factor(&sub, T::of(1e-12)) else {
            continue;
        };
        let rhs: Vec<T> = idx.iter().map(|&i| p.h_vector()[i]).collect();
        let v = lu.solve(&rhs);
        if !v.iter().all(|x| x.is_finite()) {
            continue;
        }
        let tol = opts.feas_tol * scale * (T::one() + norm_inf(&v));
        if p.contains(&v, tol) {
            out.push_dedup(v, opts.dedup_tol);
        }
    }
    if out.is_empty() {
        return Err(PolytopeError::Empty);
    }
    Ok(out)
}

/// Area of the polygon whose vertices are `v`, ordered counterclockwise around
/// their centroid.
pub fn volume_2d<T: Scalar>(v: &VertexSet<T>) -> Result<T, PolytopeError> {
    if v.points.iter().any(|p| p.len() != 2) {
        return Err(PolytopeError::Shape("volume_2d needs planar points".into()));
    }
    if v.len() < 3 {
        return Err(PolytopeError::DegenerateHull);
    }
    let k = T::of_usize(v.len());
    let cx = v.points.iter().map(|p| p[0]).sum::<T>() / k;
    let cy = v.points.iter().map(|p| p[1]).sum::<T>() / k;
    let mut pts: Vec<(T, T)> = v.points.iter().map(|p| (p[0] - cx, p[1] - cy)).collect();
    pts.sort_by(|a, b| {
        let (ta, tb) = (a.1.atan2(a.0), b.1.atan2(b.0));
        ta.partial_cmp(&tb).unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut twice = T::zero();
    for i in 0..pts.len() {
        let (a, b) = (pts[i], pts[(i + 1) % pts.len()]);
        twice += a.0 * b.1 - a.1 * b.0;
    }
    let area = twice.abs() / T::of(2.0);
    let extent = pts.iter().fold(T::zero(), |m, p| m.max(p.0.abs()).max(p.1.abs()));
    if area <= T::EPS * T::of(100.0) * extent * extent || extent == T::zero() {
        return Err(PolytopeError::DegenerateHull);
    }
    Ok(area)
}

/// Hit-or-miss estimate inside the bounding box.
pub fn volume_monte_carlo<T: Scalar>(
    p: &Polytope<T>,
    samples: usize,
    seed: u64,
) -> Result<VolumeEstimate<T>, PolytopeError> {
    let n = p.dim();
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for j in 0..n {
        let mut e = vec![T::zero(); n];
        e[j] = T::one();
        hi.push(p.support(&e)?);
        e[j] = -T::one();
        lo.push(-p.support(&e)?);
    }
    let box_vol: f64 = lo.iter().zip(&hi).map(|(l, h)| (*h - *l).as_f64()).product();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut hits = 0usize;
    let mut x = vec![T::zero(); n];
    for _ in 0..samples {
        for j in 0..n {
            let (l, h) = (lo[j].as_f64(), hi[j].as_f64());
            x[j] = T::of(if h > l { rng.gen_range(l..h) } else { l });
        }
        if p.contains(&x, T::zero()) {
            hits += 1;
        }
    }
    Ok(VolumeEstimate {
        value: T::of(box_vol * hits as f64 / samples.max(1) as f64),
        approximate: true,
    })
}
