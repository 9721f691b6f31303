//! Synthesis of configuration-constrained RCI sets by linear programming.
//!
//! The decision variables are the offset `q`, one input `u^i` per vertex of
//! `S(q)`, the volume variables `z^l, s^l, ε, τ`, and (when the invariance
//! certificate is assembled explicitly) the multipliers `Λ^{ij}`.

use std::fmt;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc_template::CcTemplate;
use crate::dataset::{regressor, FeasibleModelSet};
use crate::linops::{dot, unvec, Matrix};
use crate::lp::{self, LinearProgram, LpError, LpOptions, LpStatus, SolverRegistry, SparseRow, EMBEDDED_ID};
use crate::polytope::{
    enumerate_vertices, support_vector, volume_2d, Polytope, PolytopeError, VertexOptions, VertexSet,
};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintGroup {
    Configuration,
    System,
    Invariance,
    Volume,
}

impl fmt::Display for ConstraintGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ConstraintGroup::Configuration => "configuration",
            ConstraintGroup::System => "state/input",
            ConstraintGroup::Invariance => "invariance",
            ConstraintGroup::Volume => "volume",
        };
        f.write_str(s)
    }
}

/// Groups that need relaxing, with the relaxation each needs, at the optimum
/// of an elastic program in which every group may be violated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    pub groups: Vec<(ConstraintGroup, f64)>,
}

impl fmt::Display for InfeasibilityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return f.write_str("no single group identified");
        }
        let parts: Vec<String> = self
            .groups
            .iter()
            .map(|(g, v)| format!("{g} (needs {v:.3e})"))
            .collect();
        f.write_str(&parts.join(", "))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthesisError {
    #[error("no RCI set exists for this template and model set; blocking constraints: {0}")]
    SynthesisInfeasible(InfeasibilityReport),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("feasible model set is empty")]
    EmptyModelSet,
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
}

impl From<LpError> for SynthesisError {
    fn from(e: LpError) -> Self {
        match e {
            LpError::NumericalBreakdown { reason } => SynthesisError::NumericalBreakdown(reason),
            other => SynthesisError::InvalidProblem(other.to_string()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SynthesisProblem<T: Scalar> {
    pub template: CcTemplate<T>,
    pub x_set: Polytope<T>,
    pub u_set: Polytope<T>,
    pub w_set: Polytope<T>,
    pub p_vertices: Vec<Vec<T>>,
    /// Absent for purely model-based runs.
    pub model_set: Option<FeasibleModelSet<T>>,
    /// Direction template of the size metric.
    pub d_mat: Matrix<T>,
    pub x_vertices: VertexSet<T>,
}

impl<T: Scalar> SynthesisProblem<T> {
    /// Checks shapes and enumerates the vertices of `X`. `d_mat` defaults to `C`.
    pub fn new(
        template: CcTemplate<T>,
        x_set: Polytope<T>,
        u_set: Polytope<T>,
        w_set: Polytope<T>,
        p_vertices: Vec<Vec<T>>,
        model_set: Option<FeasibleModelSet<T>>,
        d_mat: Option<Matrix<T>>,
    ) -> Result<Self, SynthesisError> {
        let n = template.dim();
        if x_set.dim() != n || w_set.dim() != n {
            return Err(SynthesisError::InvalidProblem(
                "X and W must live in the state space of C".into(),
            ));
        }
        if p_vertices.is_empty() {
            return Err(SynthesisError::InvalidProblem("scheduling set has no vertices".into()));
        }
        let s = p_vertices[0].len();
        if p_vertices.iter().any(|p| p.len() != s) {
            return Err(SynthesisError::InvalidProblem(
                "scheduling vertices differ in length".into(),
            ));
        }
        if w_set.as_symmetric(T::zero()).is_none() {
            return Err(SynthesisError::InvalidProblem("W must be given as −h ≤ Hw ≤ h".into()));
        }
        if let Some(f) = &model_set {
            let dims = f.dims();
            if dims.n != n || dims.m != u_set.dim() || dims.s != s {
                return Err(SynthesisError::InvalidProblem(
                    "model set dimensions disagree with the problem".into(),
                ));
            }
        }
        let d_mat = d_mat.unwrap_or_else(|| template.c().clone());
        if d_mat.cols() != n {
            return Err(SynthesisError::InvalidProblem("D must have n columns".into()));
        }
        let x_vertices = enumerate_vertices(&x_set, &VertexOptions::default())?;
        Ok(Self {
            template,
            x_set,
            u_set,
            w_set,
            p_vertices,
            model_set,
            d_mat,
            x_vertices,
        })
    }

    pub fn n(&self) -> usize {
        self.template.dim()
    }

    pub fn m(&self) -> usize {
        self.u_set.dim()
    }

    pub fn s(&self) -> usize {
        self.p_vertices[0].len()
    }

    /// Disturbance tightening `d = max{Cw : w ∈ W}`.
    pub fn tightening(&self) -> Result<Vec<T>, SynthesisError> {
        Ok(support_vector(self.template.c(), &self.w_set)?)
    }

    pub fn with_model_set(mut self, f: FeasibleModelSet<T>) -> Self {
        self.model_set = Some(f);
        self
    }
}

/// Index map of the synthesis LP variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarLayout {
    pub n: usize,
    pub m: usize,
    pub n_c: usize,
    pub v_s: usize,
    pub v_p: usize,
    pub n_y: usize,
    pub m_d: usize,
    /// Columns of each `Λ^{ij}`; zero when no multipliers are assembled.
    pub lambda_cols: usize,
}

impl VarLayout {
    pub fn for_problem<T: Scalar>(prob: &SynthesisProblem<T>, lambda_cols: usize) -> Self {
        Self {
            n: prob.n(),
            m: prob.m(),
            n_c: prob.template.num_facets(),
            v_s: prob.template.num_vertices(),
            v_p: prob.p_vertices.len(),
            n_y: prob.x_vertices.len(),
            m_d: prob.d_mat.rows(),
            lambda_cols,
        }
    }

    pub fn q(&self, k: usize) -> usize {
        k
    }

    pub fn u(&self, i: usize, a: usize) -> usize {
        self.n_c + i * self.m + a
    }

    pub fn z(&self, l: usize, a: usize) -> usize {
        self.n_c + self.v_s * self.m + l * self.n + a
    }

    pub fn s(&self, l: usize, a: usize) -> usize {
        self.z(self.n_y, 0) + l * self.n + a
    }

    pub fn eps(&self, r: usize) -> usize {
        self.s(self.n_y, 0) + r
    }

    pub fn tau(&self, r: usize) -> usize {
        self.eps(self.m_d) + r
    }

    /// Variables other than the multipliers.
    pub fn base_len(&self) -> usize {
        self.tau(self.m_d)
    }

    pub fn pair(&self, i: usize, j: usize) -> usize {
        i * self.v_p + j
    }

    pub fn lambda(&self, i: usize, j: usize, k: usize, rho: usize) -> usize {
        self.base_len() + (self.pair(i, j) * self.n_c + k) * self.lambda_cols + rho
    }

    pub fn total_len(&self) -> usize {
        self.base_len() + self.v_s * self.v_p * self.n_c * self.lambda_cols
    }
}

/// Rows of one constraint group.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintBlock<T> {
    pub group: ConstraintGroup,
    pub inequalities: Vec<(SparseRow<T>, T)>,
    pub equalities: Vec<(SparseRow<T>, T)>,
}

impl<T: Scalar> ConstraintBlock<T> {
    fn new(group: ConstraintGroup) -> Self {
        Self {
            group,
            inequalities: Vec::new(),
            equalities: Vec::new(),
        }
    }

    /// Largest violation at `x` (inequalities one-sided, equalities absolute).
    pub fn max_violation(&self, x: &[T]) -> T {
        let ineq = self.inequalities.iter().map(|(r, b)| r.eval(x) - *b);
        let eq = self.equalities.iter().map(|(r, b)| (r.eval(x) - *b).abs());
        ineq.chain(eq).fold(T::zero(), T::max)
    }

    fn append(&mut self, other: ConstraintBlock<T>) {
        self.inequalities.extend(other.inequalities);
        self.equalities.extend(other.equalities);
    }
}

/// `E q ≤ 0`.
pub fn assemble_config_constraints<T: Scalar>(t: &CcTemplate<T>, layout: &VarLayout) -> ConstraintBlock<T> {
    let mut b = ConstraintBlock::new(ConstraintGroup::Configuration);
    let e = t.e();
    for r in 0..e.rows() {
        let mut row = SparseRow::from_dense(layout.q(0), e.row(r));
        row.compact();
        b.inequalities.push((row, T::zero()));
    }
    b
}

/// `H_x V^i q ≤ h_x` and `H_u u^i ≤ h_u` for every vertex `i`.
pub fn assemble_system_constraints<T: Scalar>(
    t: &CcTemplate<T>,
    x_set: &Polytope<T>,
    u_set: &Polytope<T>,
    layout: &VarLayout,
) -> ConstraintBlock<T> {
    let mut b = ConstraintBlock::new(ConstraintGroup::System);
    for (i, v) in t.v_maps().iter().enumerate() {
        let hv = x_set.h_matrix().matmul(v);
        for r in 0..hv.rows() {
            let mut row = SparseRow::from_dense(layout.q(0), hv.row(r));
            row.compact();
            b.inequalities.push((row, x_set.h_vector()[r]));
        }
        for r in 0..u_set.num_rows() {
            let mut row = SparseRow::from_dense(layout.u(i, 0), u_set.h_matrix().row(r));
            row.compact();
            b.inequalities.push((row, u_set.h_vector()[r]));
        }
    }
    b
}

/// `y^l = z^l + s^l`, `D z^l ≤ ε`, `C s^l ≤ q`, `±ε ≤ τ`; the objective is `Σ τ`.
pub fn assemble_volume_objective<T: Scalar>(
    t: &CcTemplate<T>,
    d_mat: &Matrix<T>,
    x_vertices: &VertexSet<T>,
    layout: &VarLayout,
) -> (ConstraintBlock<T>, Vec<(usize, T)>) {
    let mut b = ConstraintBlock::new(ConstraintGroup::Volume);
    let c = t.c();
    for (l, y) in x_vertices.iter().enumerate() {
        for a in 0..layout.n {
            let row = SparseRow::from_entries(vec![(layout.z(l, a), T::one()), (layout.s(l, a), T::one())]);
            b.equalities.push((row, y[a]));
        }
        for r in 0..layout.m_d {
            let mut row = SparseRow::from_dense(layout.z(l, 0), d_mat.row(r));
            row.compact();
            row.push(layout.eps(r), -T::one());
            b.inequalities.push((row, T::zero()));
        }
        for k in 0..layout.n_c {
            let mut row = SparseRow::from_dense(layout.s(l, 0), c.row(k));
            row.compact();
            row.push(layout.q(k), -T::one());
            b.inequalities.push((row, T::zero()));
        }
    }
    for r in 0..layout.m_d {
        for sign in [T::one(), -T::one()] {
            let row = SparseRow::from_entries(vec![(layout.eps(r), sign), (layout.tau(r), -T::one())]);
            b.inequalities.push((row, T::zero()));
        }
    }
    let objective = (0..layout.m_d).map(|r| (layout.tau(r), T::one())).collect();
    (b, objective)
}

/// `A(p) = Σ p_j A^j` and `B(p) = Σ p_j B^j` of `M = [A¹..Aˢ B¹..Bˢ]`.
pub fn scheduled_matrices<T: Scalar>(m_mat: &Matrix<T>, p: &[T], n: usize, m: usize) -> (Matrix<T>, Matrix<T>) {
    let s = p.len();
    let a = Matrix::from_fn(n, n, |r, c| (0..s).map(|j| p[j] * m_mat[(r, j * n + c)]).sum());
    let b = Matrix::from_fn(n, m, |r, c| (0..s).map(|j| p[j] * m_mat[(r, n * s + j * m + c)]).sum());
    (a, b)
}

/// The row `C_k M z^{ij} ≤ q_k − d_k` for a fixed model `M`.
pub fn model_cut<T: Scalar>(
    t: &CcTemplate<T>,
    m_mat: &Matrix<T>,
    p: &[T],
    i: usize,
    k: usize,
    d_k: T,
    layout: &VarLayout,
) -> (SparseRow<T>, T) {
    let (a, b) = scheduled_matrices(m_mat, p, layout.n, layout.m);
    let c_k = t.c().row(k);
    let ga = a.tr_mul_vec(c_k);
    let gb = b.tr_mul_vec(c_k);
    let mut coef_q = t.v_maps()[i].tr_mul_vec(&ga);
    coef_q[k] -= T::one();
    let mut row = SparseRow::from_dense(layout.q(0), &coef_q);
    for (a_idx, &g) in gb.iter().enumerate() {
        row.push(layout.u(i, a_idx), g);
    }
    row.compact();
    (row, -d_k)
}

/// Invariance imposed directly for one known model.
pub fn assemble_model_invariance<T: Scalar>(
    t: &CcTemplate<T>,
    m_mat: &Matrix<T>,
    p_vertices: &[Vec<T>],
    d: &[T],
    layout: &VarLayout,
) -> ConstraintBlock<T> {
    let mut b = ConstraintBlock::new(ConstraintGroup::Invariance);
    for i in 0..layout.v_s {
        for p in p_vertices {
            for k in 0..layout.n_c {
                b.inequalities.push(model_cut(t, m_mat, p, i, k, d[k], layout));
            }
        }
    }
    b
}

/// Coefficients of `z^{ij}_a` as a linear form in `(q, u^i)`.
fn regressor_entry<T: Scalar>(t: &CcTemplate<T>, p: &[T], i: usize, a: usize, layout: &VarLayout) -> Vec<(usize, T)> {
    let (n, m) = (layout.n, layout.m);
    let ns = n * p.len();
    if a < ns {
        let (jj, r) = (a / n, a % n);
        if p[jj] == T::zero() {
            return Vec::new();
        }
        t.v_maps()[i]
            .row(r)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(col, &v)| (layout.q(col), p[jj] * v))
            .collect()
    } else {
        let (jj, r) = ((a - ns) / m, (a - ns) % m);
        if p[jj] == T::zero() {
            return Vec::new();
        }
        vec![(layout.u(i, r), p[jj])]
    }
}

/// Multiplier form of invariance: for each vertex pair `(i, j)`,
/// `Λ^{ij} h̄ ≤ q − d` and `Λ^{ij} H̄ = zᵀ ⊗ C` row by row, `Λ ≥ 0`.
///
/// Returns the block and the bounds `Λ ≥ 0` are left to the caller.
pub fn assemble_invariance_constraints<T: Scalar>(
    t: &CcTemplate<T>,
    f: &FeasibleModelSet<T>,
    p_vertices: &[Vec<T>],
    d: &[T],
    layout: &VarLayout,
) -> Result<ConstraintBlock<T>, SynthesisError> {
    let (h_bar, h_vec) = f.active_system();
    if h_bar.rows() != layout.lambda_cols {
        return Err(SynthesisError::InvalidProblem(
            "layout multiplier width differs from the model set".into(),
        ));
    }
    if h_bar.rows() == 0 {
        return Err(SynthesisError::EmptyModelSet);
    }
    let n = layout.n;
    let n_params = h_bar.cols();
    let h_cols: Vec<Vec<(usize, T)>> = (0..n_params)
        .map(|c| {
            (0..h_bar.rows())
                .filter(|&rho| h_bar[(rho, c)] != T::zero())
                .map(|rho| (rho, h_bar[(rho, c)]))
                .collect()
        })
        .collect();
    let pairs: Vec<(usize, usize)> = (0..layout.v_s)
        .flat_map(|i| (0..layout.v_p).map(move |j| (i, j)))
        .collect();
    let blocks: Vec<ConstraintBlock<T>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let p = &p_vertices[j];
            let mut b = ConstraintBlock::new(ConstraintGroup::Invariance);
            for k in 0..layout.n_c {
                let mut row = SparseRow::new();
                for (rho, &h) in h_vec.iter().enumerate() {
                    if h != T::zero() {
                        row.push(layout.lambda(i, j, k, rho), h);
                    }
                }
                row.push(layout.q(k), -T::one());
                b.inequalities.push((row, -d[k]));
            }
            let c = t.c();
            for k in 0..layout.n_c {
                for col in 0..n_params {
                    let (a, bb) = (col / n, col % n);
                    let mut row = SparseRow::new();
                    for &(rho, h) in &h_cols[col] {
                        row.push(layout.lambda(i, j, k, rho), h);
                    }
                    let ck = c[(k, bb)];
                    if ck != T::zero() {
                        for (var, coef) in regressor_entry(t, p, i, a, layout) {
                            row.push(var, -coef * ck);
                        }
                    }
                    row.compact();
                    b.equalities.push((row, T::zero()));
                }
            }
            b
        })
        .collect();
    let mut out = ConstraintBlock::new(ConstraintGroup::Invariance);
    for b in blocks {
        out.append(b);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Monolithic when the multiplier count is small, otherwise row generation.
    #[default]
    Auto,
    /// One LP holding every multiplier.
    Monolithic,
    /// Master LP over `(q, u, volume)` with invariance cuts from worst-case
    /// models; multipliers recovered from the separation LPs.
    RowGeneration,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default, deny_unknown_fields)]
pub struct SynthesisOptions<T> {
    pub strategy: Strategy,
    /// Largest multiplier count for which `Auto` picks the monolithic LP.
    pub monolithic_limit: usize,
    pub lp: LpOptions<T>,
    /// Separation violation above which a cut is added.
    pub cut_tol: T,
    pub max_rounds: usize,
    /// Plugin for the master / monolithic LP.
    pub solver: String,
}

impl<T: Scalar> Default for SynthesisOptions<T> {
    fn default() -> Self {
        Self {
            strategy: Strategy::Auto,
            monolithic_limit: 500,
            lp: LpOptions::default(),
            cut_tol: T::of(1e-9),
            max_rounds: 200,
            solver: EMBEDDED_ID.to_string(),
        }
    }
}

/// Nonzero entries of one `Λ^{ij}` (rows are facets, columns model-set rows).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct MultiplierBlock<T> {
    pub vertex: usize,
    pub schedule: usize,
    pub entries: Vec<(usize, usize, T)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub status: String,
    pub strategy: Option<Strategy>,
    pub solver: String,
    pub rounds: usize,
    pub cuts: usize,
    pub lp_iterations: usize,
    pub lp_rows: usize,
    pub lp_vars: usize,
    pub model_rows: usize,
    /// Wall time; not serialized so solution files stay reproducible.
    #[serde(skip)]
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct RciSolution<T: Scalar> {
    /// Facet normals `C` of `S(q)`.
    pub facets: Matrix<T>,
    pub q: Vec<T>,
    pub vertex_states: Vec<Vec<T>>,
    pub vertex_inputs: Vec<Vec<T>>,
    /// Tightening `d` used for invariance.
    pub tightening: Vec<T>,
    pub epsilon: Vec<T>,
    /// `‖ε‖₁`.
    pub objective: T,
    pub volume: Option<T>,
    /// Rows of `H̄` the multiplier columns refer to.
    #[serde(default)]
    pub model_rows: Vec<usize>,
    #[serde(default)]
    pub multipliers: Vec<MultiplierBlock<T>>,
    pub diagnostics: Diagnostics,
}

impl<T: Scalar> RciSolution<T> {
    pub fn set(&self) -> Result<Polytope<T>, PolytopeError> {
        Polytope::new(self.facets.clone(), self.q.clone())
    }

    pub fn contains(&self, x: &[T], tol: T) -> bool {
        (0..self.facets.rows()).all(|k| dot(self.facets.row(k), x) <= self.q[k] + tol)
    }

    /// `Λ^{ij}` as a dense `n_c × model_rows` matrix.
    pub fn multiplier_matrix(&self, i: usize, j: usize) -> Option<Matrix<T>> {
        let b = self.multipliers.iter().find(|b| b.vertex == i && b.schedule == j)?;
        let mut out = Matrix::zeros(self.q.len(), self.model_rows.len());
        for &(k, rho, v) in &b.entries {
            out[(k, rho)] = v;
        }
        Some(out)
    }
}

fn add_block<T: Scalar>(prog: &mut LinearProgram<T>, b: &ConstraintBlock<T>) {
    for (r, rhs) in &b.inequalities {
        prog.add_le(r.clone(), *rhs);
    }
    for (r, rhs) in &b.equalities {
        prog.add_eq(r.clone(), *rhs);
    }
}

fn build_program<T: Scalar>(
    num_vars: usize,
    blocks: &[&ConstraintBlock<T>],
    objective: &[(usize, T)],
    nonneg_from: usize,
) -> LinearProgram<T> {
    let mut prog = LinearProgram::new(num_vars);
    for v in nonneg_from..num_vars {
        prog.set_bounds(v, T::zero(), T::infinity());
    }
    for &(v, c) in objective {
        prog.set_objective(v, c);
    }
    for b in blocks {
        add_block(&mut prog, b);
    }
    prog
}

/// Elastic version of the blocks: each inequality group gets one shared
/// nonnegative slack, and the sum of slacks is minimized.
fn diagnose<T: Scalar>(
    num_vars: usize,
    blocks: &[&ConstraintBlock<T>],
    nonneg_from: usize,
    opts: &LpOptions<T>,
) -> InfeasibilityReport {
    let mut groups: Vec<ConstraintGroup> = Vec::new();
    for b in blocks {
        if !b.inequalities.is_empty() && !groups.contains(&b.group) {
            groups.push(b.group);
        }
    }
    let mut prog = LinearProgram::new(num_vars + groups.len());
    for v in nonneg_from..num_vars {
        prog.set_bounds(v, T::zero(), T::infinity());
    }
    for g in 0..groups.len() {
        prog.set_bounds(num_vars + g, T::zero(), T::infinity());
        prog.set_objective(num_vars + g, T::one());
    }
    for b in blocks {
        let g = groups.iter().position(|&x| x == b.group);
        for (r, rhs) in &b.inequalities {
            let mut row = r.clone();
            if let Some(g) = g {
                row.push(num_vars + g, -T::one());
            }
            prog.add_le(row, *rhs);
        }
        for (r, rhs) in &b.equalities {
            prog.add_eq(r.clone(), *rhs);
        }
    }
    let mut out = Vec::new();
    if let Ok(r) = lp::solve(&prog, opts) {
        if r.is_optimal() {
            for (g, &group) in groups.iter().enumerate() {
                let v = r.x[num_vars + g].as_f64();
                if v > 1e-9 {
                    out.push((group, v));
                }
            }
        }
    }
    InfeasibilityReport { groups: out }
}

fn solve_with<T: Scalar>(
    prog: &LinearProgram<T>,
    opts: &SynthesisOptions<T>,
) -> Result<lp::LpResult<T>, SynthesisError> {
    let registry = SolverRegistry::<T>::with_builtin();
    Ok(lp::solve_external(&registry, prog, &opts.solver, &opts.lp)?)
}

fn finish<T: Scalar>(
    prob: &SynthesisProblem<T>,
    layout: &VarLayout,
    x: &[T],
    d: Vec<T>,
    diagnostics: Diagnostics,
) -> RciSolution<T> {
    let t = &prob.template;
    let q: Vec<T> = (0..layout.n_c).map(|k| x[layout.q(k)]).collect();
    let vertex_states = t.vertices(&q);
    let vertex_inputs = (0..layout.v_s)
        .map(|i| (0..layout.m).map(|a| x[layout.u(i, a)]).collect())
        .collect();
    let epsilon: Vec<T> = (0..layout.m_d).map(|r| x[layout.eps(r)]).collect();
    let objective = epsilon.iter().map(|e| e.abs()).sum();
    let volume = if layout.n == 2 {
        let mut vs = VertexSet::default();
        for v in &vertex_states {
            vs.push_dedup(v.clone(), T::of(1e-9));
        }
        volume_2d(&vs).ok().or(Some(T::zero()))
    } else {
        None
    };
    RciSolution {
        facets: t.c().clone(),
        q,
        vertex_states,
        vertex_inputs,
        tightening: d,
        epsilon,
        objective,
        volume,
        model_rows: Vec::new(),
        multipliers: Vec::new(),
        diagnostics,
    }
}

fn status_error<T: Scalar>(
    status: LpStatus,
    layout_len: usize,
    blocks: &[&ConstraintBlock<T>],
    nonneg_from: usize,
    opts: &LpOptions<T>,
) -> SynthesisError {
    match status {
        LpStatus::Infeasible => SynthesisError::SynthesisInfeasible(diagnose(layout_len, blocks, nonneg_from, opts)),
        LpStatus::Unbounded => SynthesisError::NumericalBreakdown("synthesis LP reported unbounded".into()),
        LpStatus::IterationLimit => SynthesisError::NumericalBreakdown("iteration limit reached".into()),
        LpStatus::Optimal => unreachable!(),
    }
}

/// Invariance imposed for the single model `m_true`.
pub fn synthesize_model_based<T: Scalar>(
    prob: &SynthesisProblem<T>,
    m_true: &Matrix<T>,
    opts: &SynthesisOptions<T>,
) -> Result<RciSolution<T>, SynthesisError> {
    let start = Instant::now();
    let (n, m, s) = (prob.n(), prob.m(), prob.s());
    if m_true.shape() != (n, (n + m) * s) {
        return Err(SynthesisError::InvalidProblem(format!(
            "model has shape {:?}, expected ({n}, {})",
            m_true.shape(),
            (n + m) * s
        )));
    }
    let layout = VarLayout::for_problem(prob, 0);
    let d = prob.tightening()?;
    let config = assemble_config_constraints(&prob.template, &layout);
    let system = assemble_system_constraints(&prob.template, &prob.x_set, &prob.u_set, &layout);
    let (volume, objective) = assemble_volume_objective(&prob.template, &prob.d_mat, &prob.x_vertices, &layout);
    let inv = assemble_model_invariance(&prob.template, m_true, &prob.p_vertices, &d, &layout);
    let blocks = [&config, &system, &inv, &volume];
    let prog = build_program(layout.base_len(), &blocks, &objective, layout.base_len());
    let r = solve_with(&prog, opts)?;
    if !r.is_optimal() {
        return Err(status_error(
            r.status,
            layout.base_len(),
            &blocks,
            layout.base_len(),
            &opts.lp,
        ));
    }
    let diagnostics = Diagnostics {
        status: "optimal".into(),
        strategy: None,
        solver: opts.solver.clone(),
        rounds: 1,
        cuts: inv.inequalities.len(),
        lp_iterations: r.iterations,
        lp_rows: prog.inequalities().len() + prog.equalities().len(),
        lp_vars: prog.num_vars(),
        model_rows: 0,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(finish(prob, &layout, &r.x, d, diagnostics))
}

/// Invariance imposed for every model consistent with the data.
pub fn synthesize<T: Scalar>(
    prob: &SynthesisProblem<T>,
    opts: &SynthesisOptions<T>,
) -> Result<RciSolution<T>, SynthesisError> {
    let f = prob
        .model_set
        .as_ref()
        .ok_or_else(|| SynthesisError::InvalidProblem("data-driven synthesis needs a model set".into()))?;
    if f.feasible_point().is_err() {
        return Err(SynthesisError::EmptyModelSet);
    }
    let rows = f.active_rows().len();
    let layout = VarLayout::for_problem(prob, rows);
    let strategy = match opts.strategy {
        Strategy::Auto => {
            if layout.total_len() - layout.base_len() <= opts.monolithic_limit {
                Strategy::Monolithic
            } else {
                Strategy::RowGeneration
            }
        }
        s => s,
    };
    log::info!(
        "synthesis: n_c = {}, v_s = {}, v_p = {}, model rows = {rows}, strategy {strategy:?}",
        layout.n_c,
        layout.v_s,
        layout.v_p
    );
    match strategy {
        Strategy::Monolithic => synthesize_monolithic(prob, f, &layout, opts),
        _ => synthesize_row_generation(
            prob,
            f,
            &VarLayout {
                lambda_cols: 0,
                ..layout
            },
            opts,
        ),
    }
}

fn synthesize_monolithic<T: Scalar>(
    prob: &SynthesisProblem<T>,
    f: &FeasibleModelSet<T>,
    layout: &VarLayout,
    opts: &SynthesisOptions<T>,
) -> Result<RciSolution<T>, SynthesisError> {
    let start = Instant::now();
    let d = prob.tightening()?;
    let config = assemble_config_constraints(&prob.template, layout);
    let system = assemble_system_constraints(&prob.template, &prob.x_set, &prob.u_set, layout);
    let (volume, objective) = assemble_volume_objective(&prob.template, &prob.d_mat, &prob.x_vertices, layout);
    let inv = assemble_invariance_constraints(&prob.template, f, &prob.p_vertices, &d, layout)?;
    let blocks = [&config, &system, &inv, &volume];
    let prog = build_program(layout.total_len(), &blocks, &objective, layout.base_len());
    let r = solve_with(&prog, opts)?;
    if !r.is_optimal() {
        return Err(status_error(
            r.status,
            layout.total_len(),
            &blocks,
            layout.base_len(),
            &opts.lp,
        ));
    }
    let diagnostics = Diagnostics {
        status: "optimal".into(),
        strategy: Some(Strategy::Monolithic),
        solver: opts.solver.clone(),
        rounds: 1,
        cuts: 0,
        lp_iterations: r.iterations,
        lp_rows: prog.inequalities().len() + prog.equalities().len(),
        lp_vars: prog.num_vars(),
        model_rows: layout.lambda_cols,
        seconds: start.elapsed().as_secs_f64(),
    };
    let mut sol = finish(prob, layout, &r.x, d, diagnostics);
    sol.model_rows = f.active_rows();
    for i in 0..layout.v_s {
        for j in 0..layout.v_p {
            let mut entries = Vec::new();
            for k in 0..layout.n_c {
                for rho in 0..layout.lambda_cols {
                    let v = r.x[layout.lambda(i, j, k, rho)];
                    if v != T::zero() {
                        entries.push((k, rho, v));
                    }
                }
            }
            sol.multipliers.push(MultiplierBlock {
                vertex: i,
                schedule: j,
                entries,
            });
        }
    }
    Ok(sol)
}

/// Worst case of `C_k M z` over the model set, with maximizer and multipliers.
struct Separation<T> {
    value: T,
    model: Vec<T>,
    multipliers: Vec<T>,
}

fn separate<T: Scalar>(
    h_bar: &Matrix<T>,
    h_vec: &[T],
    z: &[T],
    c_k: &[T],
    opts: &LpOptions<T>,
) -> Result<Separation<T>, SynthesisError> {
    let n_params = h_bar.cols();
    let mut prog = LinearProgram::new(n_params);
    for rho in 0..h_bar.rows() {
        let mut row = SparseRow::from_dense(0, h_bar.row(rho));
        row.compact();
        prog.add_le(row, h_vec[rho]);
    }
    let n = c_k.len();
    let g: Vec<T> = (0..n_params).map(|col| -z[col / n] * c_k[col % n]).collect();
    prog.set_objective_dense(&g);
    let r = lp::solve(&prog, opts)?;
    match r.status {
        LpStatus::Optimal => Ok(Separation {
            value: -r.objective_value,
            multipliers: r.duals.map(|d| d.inequality).unwrap_or_default(),
            model: r.x,
        }),
        LpStatus::Infeasible => Err(SynthesisError::EmptyModelSet),
        LpStatus::Unbounded => Err(SynthesisError::InvalidProblem(
            "model set is unbounded; the data are not persistently exciting".into(),
        )),
        LpStatus::IterationLimit => Err(SynthesisError::NumericalBreakdown(
            "separation LP hit its iteration limit".into(),
        )),
    }
}

fn synthesize_row_generation<T: Scalar>(
    prob: &SynthesisProblem<T>,
    f: &FeasibleModelSet<T>,
    layout: &VarLayout,
    opts: &SynthesisOptions<T>,
) -> Result<RciSolution<T>, SynthesisError> {
    let start = Instant::now();
    let t = &prob.template;
    let (n, m) = (layout.n, layout.m);
    let d = prob.tightening()?;
    let (h_bar, h_vec) = f.active_system();
    let config = assemble_config_constraints(t, layout);
    let system = assemble_system_constraints(t, &prob.x_set, &prob.u_set, layout);
    let (volume, objective) = assemble_volume_objective(t, &prob.d_mat, &prob.x_vertices, layout);
    let seed = f.feasible_point().map_err(|_| SynthesisError::EmptyModelSet)?;
    let seed_model = unvec(&seed, n, (n + m) * prob.s());
    let mut cuts = assemble_model_invariance(t, &seed_model, &prob.p_vertices, &d, layout);
    let triples: Vec<(usize, usize, usize)> = (0..layout.v_s)
        .flat_map(|i| (0..layout.v_p).flat_map(move |j| (0..layout.n_c).map(move |k| (i, j, k))))
        .collect();
    let mut iterations = 0usize;
    for round in 1..=opts.max_rounds {
        let blocks = [&config, &system, &cuts, &volume];
        let prog = build_program(layout.base_len(), &blocks, &objective, layout.base_len());
        let r = solve_with(&prog, opts)?;
        iterations += r.iterations;
        if !r.is_optimal() {
            return Err(status_error(
                r.status,
                layout.base_len(),
                &blocks,
                layout.base_len(),
                &opts.lp,
            ));
        }
        let q: Vec<T> = (0..layout.n_c).map(|k| r.x[layout.q(k)]).collect();
        let zs: Vec<Vec<T>> = (0..layout.v_s)
            .flat_map(|i| {
                let xi = t.vertex(i, &q);
                let ui: Vec<T> = (0..m).map(|a| r.x[layout.u(i, a)]).collect();
                prob.p_vertices
                    .iter()
                    .map(move |p| regressor(p, &xi, &ui))
                    .collect::<Vec<_>>()
            })
            .collect();
        let seps: Vec<Separation<T>> = triples
            .par_iter()
            .map(|&(i, j, k)| separate(&h_bar, &h_vec, &zs[layout.pair(i, j)], t.c().row(k), &opts.lp))
            .collect::<Result<_, _>>()?;
        let mut added = 0usize;
        let mut worst = T::neg_infinity();
        for (&(i, j, k), sep) in triples.iter().zip(&seps) {
            let viol = sep.value - (q[k] - d[k]);
            worst = worst.max(viol);
            if viol > opts.cut_tol * (T::one() + q[k].abs()) {
                let model = unvec(&sep.model, n, (n + m) * prob.s());
                cuts.inequalities
                    .push(model_cut(t, &model, &prob.p_vertices[j], i, k, d[k], layout));
                added += 1;
            }
        }
        log::info!(
            "round {round}: objective {:.6}, worst violation {:.3e}, {added} cuts added",
            r.objective_value.as_f64(),
            worst.as_f64()
        );
        if added == 0 {
            let diagnostics = Diagnostics {
                status: "optimal".into(),
                strategy: Some(Strategy::RowGeneration),
                solver: opts.solver.clone(),
                rounds: round,
                cuts: cuts.inequalities.len(),
                lp_iterations: iterations,
                lp_rows: prog.inequalities().len() + prog.equalities().len(),
                lp_vars: prog.num_vars(),
                model_rows: h_bar.rows(),
                seconds: start.elapsed().as_secs_f64(),
            };
            let mut sol = finish(prob, layout, &r.x, d, diagnostics);
            sol.model_rows = f.active_rows();
            for i in 0..layout.v_s {
                for j in 0..layout.v_p {
                    let mut entries = Vec::new();
                    for k in 0..layout.n_c {
                        let sep = &seps[(layout.pair(i, j)) * layout.n_c + k];
                        for (rho, &v) in sep.multipliers.iter().enumerate() {
                            if v != T::zero() {
                                entries.push((k, rho, v));
                            }
                        }
                    }
                    sol.multipliers.push(MultiplierBlock {
                        vertex: i,
                        schedule: j,
                        entries,
                    });
                }
            }
            return Ok(sol);
        }
    }
    Err(SynthesisError::NumericalBreakdown(format!(
        "row generation did not converge in {} rounds",
        opts.max_rounds
    )))
}

/// Independent check of an [`RciSolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct VerificationReport<T> {
    /// Per facet `k`: `min over (i, j)` of `q_k − d_k − max_M C_k M z^{ij}`.
    pub facet_slack: Vec<T>,
    /// Vertex pair attaining each facet's worst slack.
    pub facet_worst_pair: Vec<(usize, usize)>,
    pub min_slack: T,
    pub worst_facet: usize,
    pub config_violation: T,
    pub state_violation: T,
    pub input_violation: T,
    pub min_multiplier: Option<T>,
    /// Largest residual of the multiplier equalities and inequalities.
    pub multiplier_residual: Option<T>,
    pub tol: T,
}

impl<T: Scalar> VerificationReport<T> {
    pub fn invariance_ok(&self) -> bool {
        self.min_slack >= -self.tol
    }

    pub fn certificate_ok(&self, tol: T) -> bool {
        self.config_violation <= tol
            && self.state_violation <= tol
            && self.input_violation <= tol
            && self.min_multiplier.is_none_or(|v| v >= -tol)
            && self.multiplier_residual.is_none_or(|v| v <= tol * T::of(100.0))
    }

    pub fn passed(&self) -> bool {
        self.invariance_ok() && self.certificate_ok(self.tol)
    }

    /// Facets whose slack is below `−tol`.
    pub fn failing_facets(&self) -> Vec<usize> {
        (0..self.facet_slack.len())
            .filter(|&k| self.facet_slack[k] < -self.tol)
            .collect()
    }
}

/// Checks `max_{M ∈ M_T} C_k M z^{ij} ≤ q_k − d_k` over every row of the
/// model set (reduction ignored) by one LP per `(i, j, k)`, together with
/// the configuration, state and input constraints and, when present, the
/// multiplier certificate.
pub fn verify_invariance<T: Scalar>(
    sol: &RciSolution<T>,
    prob: &SynthesisProblem<T>,
    model_set: &FeasibleModelSet<T>,
    tol: T,
) -> Result<VerificationReport<T>, SynthesisError> {
    let t = &prob.template;
    let n_c = t.num_facets();
    let v_s = t.num_vertices();
    let v_p = prob.p_vertices.len();
    if sol.q.len() != n_c || sol.vertex_inputs.len() != v_s {
        return Err(SynthesisError::InvalidProblem(
            "solution does not match the template".into(),
        ));
    }
    let d = prob.tightening()?;
    let h_bar = model_set.h_bar();
    let h_vec = model_set.h_bar_vec();
    let xs = t.vertices(&sol.q);
    let triples: Vec<(usize, usize, usize)> = (0..v_s)
        .flat_map(|i| (0..v_p).flat_map(move |j| (0..n_c).map(move |k| (i, j, k))))
        .collect();
    let opts = LpOptions::default();
    let slacks: Vec<T> = triples
        .par_iter()
        .map(|&(i, j, k)| {
            let z = regressor(&prob.p_vertices[j], &xs[i], &sol.vertex_inputs[i]);
            separate(h_bar, h_vec, &z, t.c().row(k), &opts).map(|s| sol.q[k] - d[k] - s.value)
        })
        .collect::<Result<_, _>>()?;
    let mut facet_slack = vec![T::infinity(); n_c];
    let mut facet_worst_pair = vec![(0, 0); n_c];
    for (&(i, j, k), &s) in triples.iter().zip(&slacks) {
        if s < facet_slack[k] {
            facet_slack[k] = s;
            facet_worst_pair[k] = (i, j);
        }
    }
    let (worst_facet, min_slack) = facet_slack
        .iter()
        .copied()
        .enumerate()
        .fold((0, T::infinity()), |acc, (k, s)| if s < acc.1 { (k, s) } else { acc });
    let config_violation = t.config_violation(&sol.q).max(T::zero());
    let state_violation = xs.iter().map(|x| prob.x_set.max_violation(x)).fold(T::zero(), T::max);
    let input_violation = sol
        .vertex_inputs
        .iter()
        .map(|u| prob.u_set.max_violation(u))
        .fold(T::zero(), T::max);
    let (min_multiplier, multiplier_residual) = if sol.multipliers.is_empty() {
        (None, None)
    } else {
        let (mn, res) = multiplier_check(sol, prob, model_set, &xs, &d)?;
        (Some(mn), Some(res))
    };
    Ok(VerificationReport {
        facet_slack,
        facet_worst_pair,
        min_slack,
        worst_facet,
        config_violation,
        state_violation,
        input_violation,
        min_multiplier,
        multiplier_residual,
        tol,
    })
}

/// Smallest multiplier and largest certificate residual
/// (`Λ_k h̄ − (q_k − d_k)` and `|Λ_k H̄ − zᵀ ⊗ C_k|`).
fn multiplier_check<T: Scalar>(
    sol: &RciSolution<T>,
    prob: &SynthesisProblem<T>,
    f: &FeasibleModelSet<T>,
    xs: &[Vec<T>],
    d: &[T],
) -> Result<(T, T), SynthesisError> {
    let rows = &sol.model_rows;
    if rows.iter().any(|&r| r >= f.h_bar().rows()) {
        return Err(SynthesisError::InvalidProblem(
            "multiplier rows exceed the model set".into(),
        ));
    }
    let h_bar = f.h_bar().select_rows(rows);
    let h_vec: Vec<T> = rows.iter().map(|&r| f.h_bar_vec()[r]).collect();
    let c = prob.template.c();
    let n = prob.n();
    let mut min_mult = T::infinity();
    let mut residual = T::zero();
    for b in &sol.multipliers {
        let lam = sol
            .multiplier_matrix(b.vertex, b.schedule)
            .ok_or_else(|| SynthesisError::InvalidProblem("missing multiplier block".into()))?;
        min_mult = min_mult.min(lam.as_slice().iter().copied().fold(T::infinity(), T::min));
        let z = regressor(
            &prob.p_vertices[b.schedule],
            &xs[b.vertex],
            &sol.vertex_inputs[b.vertex],
        );
        for k in 0..c.rows() {
            let lk = lam.row(k);
            residual = residual.max(dot(lk, &h_vec) - (sol.q[k] - d[k]));
            let lh = h_bar.tr_mul_vec(lk);
            for (col, &v) in lh.iter().enumerate() {
                residual = residual.max((v - z[col / n] * c[(k, col % n)]).abs());
            }
        }
    }
    Ok((min_mult, residual))
}
