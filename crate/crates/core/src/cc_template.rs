//! Configuration-constrained polytopes `S(q) = {x : Cx ≤ q}` with `Eq ≤ 0`.
//!
//! On the cone `Eq ≤ 0` the vertices of `S(q)` are `V^k q`, one per vertex
//! index set of the template polytope `S(σ)`.

use itertools::Itertools;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{condition_number, inverse, numerical_rank, Matrix};
use crate::lp::{self, LinearProgram, LpOptions, LpStatus, SparseRow};
use crate::polytope::{Polytope, PolytopeError};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcError {
    #[error("a circular template needs at least 3 facets, got {0}")]
    BadComplexity(usize),
    #[error("template polytope S(σ) is empty")]
    Empty,
    #[error("template polytope S(σ) is unbounded")]
    Unbounded,
    #[error("entirely-simple check exceeded its budget of {0} face tests")]
    BudgetExceeded(usize),
    #[error("template polytope is not entirely simple")]
    NotEntirelySimple,
    #[error("vertex map for index set {set:?} is ill conditioned (cond ≈ {cond:e})")]
    IllConditioned { set: Vec<usize>, cond: f64 },
    #[error("template violates its own configuration constraints by {0:e}")]
    ConeViolation(f64),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Polytope(PolytopeError),
}

impl From<PolytopeError> for CcError {
    fn from(e: PolytopeError) -> Self {
        match e {
            PolytopeError::Empty => CcError::Empty,
            PolytopeError::Unbounded => CcError::Unbounded,
            other => CcError::Polytope(other),
        }
    }
}

/// Template description as it appears in problem configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TemplateSpec {
    Circular {
        n_c: usize,
    },
    Explicit {
        #[serde(rename = "C")]
        c: Vec<Vec<f64>>,
        #[serde(default)]
        sigma: Option<Vec<f64>>,
    },
}

impl TemplateSpec {
    pub fn build<T: Scalar>(&self) -> Result<CcTemplate<T>, CcError> {
        let (c, sigma) = match self {
            TemplateSpec::Circular { n_c } => (build_circular_template::<T>(*n_c)?, None),
            TemplateSpec::Explicit { c, sigma } => {
                let rows: Vec<Vec<T>> = c.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
                let m = Matrix::from_rows(&rows).map_err(|e| CcError::Shape(e.to_string()))?;
                (
                    m,
                    sigma.as_ref().map(|s| s.iter().map(|&v| T::of(v)).collect::<Vec<T>>()),
                )
            }
        };
        let sigma = sigma.unwrap_or_else(|| vec![T::one(); c.rows()]);
        build_cc_machinery(&c, &sigma)
    }
}

/// Rows `[cos 2π(i−1)/n_c, sin 2π(i−1)/n_c]`.
pub fn build_circular_template<T: Scalar>(n_c: usize) -> Result<Matrix<T>, CcError> {
    if n_c < 3 {
        return Err(CcError::BadComplexity(n_c));
    }
    Ok(Matrix::from_fn(n_c, 2, |i, j| {
        let a = 2.0 * std::f64::consts::PI * i as f64 / n_c as f64;
        T::of(if j == 0 { a.cos() } else { a.sin() })
    }))
}

fn template_polytope<T: Scalar>(c: &Matrix<T>, sigma: &[T]) -> Result<Polytope<T>, CcError> {
    if c.rows() != sigma.len() {
        return Err(CcError::Shape(format!(
            "C has {} rows, σ has {}",
            c.rows(),
            sigma.len()
        )));
    }
    let p = Polytope::new(c.clone(), sigma.to_vec())?;
    p.check_bounded()?;
    Ok(p)
}

/// Whether the face `{x ∈ S(σ) : C_I x = σ_I}` is nonempty.
fn face_nonempty<T: Scalar>(c: &Matrix<T>, sigma: &[T], set: &[usize], tol: T) -> Result<bool, CcError> {
    let n = c.cols();
    if set.len() == n {
        let sub = c.select_rows(set);
        if let Some(inv) = inverse(&sub) {
            let rhs: Vec<T> = set.iter().map(|&i| sigma[i]).collect();
            let x = inv.mul_vec(&rhs);
            return Ok((0..c.rows()).all(|r| crate::linops::dot(c.row(r), &x) <= sigma[r] + tol));
        }
    }
    let mut prog = LinearProgram::new(n);
    for r in 0..c.rows() {
        let row = SparseRow::from_dense(0, c.row(r));
        if set.contains(&r) {
            prog.add_eq(row, sigma[r]);
        } else {
            prog.add_le(row, sigma[r] + tol);
        }
    }
    let opts = LpOptions {
        feas_tol: tol.max(T::of(1e-10)),
        ..LpOptions::default()
    };
    let r = lp::solve(&prog, &opts).map_err(|e| CcError::Polytope(e.into()))?;
    Ok(r.status == LpStatus::Optimal)
}

/// Size-`n` row subsets whose face of `S(σ)` is a vertex, in lexicographic order.
pub fn find_vertex_index_sets<T: Scalar>(c: &Matrix<T>, sigma: &[T], tol: T) -> Result<Vec<Vec<usize>>, CcError> {
    template_polytope(c, sigma)?;
    let n = c.cols();
    let mut out = Vec::new();
    for set in (0..c.rows()).combinations(n) {
        let sub = c.select_rows(&set);
        if inverse(&sub).is_none() {
            continue;
        }
        if face_nonempty(c, sigma, &set, tol)? {
            out.push(set);
        }
    }
    if out.is_empty() {
        return Err(CcError::Empty);
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct SimpleCheckOptions<T> {
    pub tol: T,
    /// Largest index-set size examined; `None` means `n + 2`.
    pub max_size: Option<usize>,
    /// Maximum number of face tests.
    pub budget: usize,
}

impl<T: Scalar> Default for SimpleCheckOptions<T> {
    fn default() -> Self {
        Self {
            tol: T::of(1e-9),
            max_size: None,
            budget: 2_000_000,
        }
    }
}

/// Every nonempty face has linearly independent active normals.
///
/// Index sets are grown one row at a time and only from sets with a nonempty
/// face, since faces of supersets are contained in those of subsets.
pub fn check_entirely_simple<T: Scalar>(
    c: &Matrix<T>,
    sigma: &[T],
    opts: &SimpleCheckOptions<T>,
) -> Result<bool, CcError> {
    template_polytope(c, sigma)?;
    let n = c.cols();
    let m = c.rows();
    let max_size = opts.max_size.unwrap_or(n + 2).min(m);
    let mut tests = 0usize;
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _size in 1..=max_size {
        let mut next = Vec::new();
        for base in &frontier {
            let start = base.last().map_or(0, |&l| l + 1);
            for j in start..m {
                tests += 1;
                if tests > opts.budget {
                    return Err(CcError::BudgetExceeded(opts.budget));
                }
                let mut set = base.clone();
                set.push(j);
                if !face_nonempty(c, sigma, &set, opts.tol)? {
                    continue;
                }
                if set.len() > n || numerical_rank(&c.select_rows(&set), T::of(1e-9)) < set.len() {
                    return Ok(false);
                }
                next.push(set);
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }
    Ok(true)
}

/// The matrices that make `S(q)` configuration constrained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct CcTemplate<T: Scalar> {
    c: Matrix<T>,
    sigma: Vec<T>,
    index_sets: Vec<Vec<usize>>,
    v_maps: Vec<Matrix<T>>,
    e: Matrix<T>,
}

pub fn build_cc_machinery<T: Scalar>(c: &Matrix<T>, sigma: &[T]) -> Result<CcTemplate<T>, CcError> {
    build_cc_machinery_with(c, sigma, &SimpleCheckOptions::default())
}

pub fn build_cc_machinery_with<T: Scalar>(
    c: &Matrix<T>,
    sigma: &[T],
    opts: &SimpleCheckOptions<T>,
) -> Result<CcTemplate<T>, CcError> {
    if !check_entirely_simple(c, sigma, opts)? {
        return Err(CcError::NotEntirelySimple);
    }
    let n = c.cols();
    let n_c = c.rows();
    let index_sets = find_vertex_index_sets(c, sigma, opts.tol)?;
    let mut v_maps = Vec::with_capacity(index_sets.len());
    for set in &index_sets {
        let sub = c.select_rows(set);
        let cond = condition_number(&sub);
        if !(cond.as_f64() <= 1e10) {
            return Err(CcError::IllConditioned {
                set: set.clone(),
                cond: cond.as_f64(),
            });
        }
        let inv = inverse(&sub).expect("conditioning checked");
        let mut v = Matrix::zeros(n, n_c);
        for (col, &row) in set.iter().enumerate() {
            for r in 0..n {
                v[(r, row)] = inv[(r, col)];
            }
        }
        v_maps.push(v);
    }
    let mut e = Matrix::zeros(0, n_c);
    for v in &v_maps {
        e = e.vstack(&c.matmul(v).sub(&Matrix::identity(n_c)));
    }
    let t = CcTemplate {
        c: c.clone(),
        sigma: sigma.to_vec(),
        index_sets,
        v_maps,
        e,
    };
    let worst = t.config_violation(sigma);
    if worst.as_f64() > 1e-9 * (1.0 + crate::linops::norm_inf(sigma).as_f64()) {
        return Err(CcError::ConeViolation(worst.as_f64()));
    }
    Ok(t)
}

impl<T: Scalar> CcTemplate<T> {
    pub fn c(&self) -> &Matrix<T> {
        &self.c
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn v_maps(&self) -> &[Matrix<T>] {
        &self.v_maps
    }

    pub fn e(&self) -> &Matrix<T> {
        &self.e
    }

    pub fn dim(&self) -> usize {
        self.c.cols()
    }

    pub fn num_facets(&self) -> usize {
        self.c.rows()
    }

    pub fn num_vertices(&self) -> usize {
        self.v_maps.len()
    }

    pub fn vertex(&self, k: usize, q: &[T]) -> Vec<T> {
        self.v_maps[k].mul_vec(q)
    }

    pub fn vertices(&self, q: &[T]) -> Vec<Vec<T>> {
        (0..self.num_vertices()).map(|k| self.vertex(k, q)).collect()
    }

    /// `max(Eq)`; at most zero on the configuration cone.
    pub fn config_violation(&self, q: &[T]) -> T {
        self.e.mul_vec(q).into_iter().fold(T::neg_infinity(), T::max)
    }

    pub fn polytope(&self, q: &[T]) -> Result<Polytope<T>, PolytopeError> {
        Polytope::new(self.c.clone(), q.to_vec())
    }

    pub fn cast<U: Scalar>(&self) -> CcTemplate<U> {
        CcTemplate {
            c: self.c.cast(),
            sigma: self.sigma.iter().map(|v| U::of(v.as_f64())).collect(),
            index_sets: self.index_sets.clone(),
            v_maps: self.v_maps.iter().map(|v| v.cast()).collect(),
            e: self.e.cast(),
        }
    }
}
