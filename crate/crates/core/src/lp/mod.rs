//! Linear programming.
//!
//! Every LP in the toolkit goes through [`solve`]: the synthesis program, the
//! vertex-controller interpolation, and the many small support and
//! redundancy LPs. Problems are stated in a general row form
//!
//! ```text
//! min  cᵀx   s.t.  aᵢᵀx ≤ bᵢ (inequalities),  aₑᵀx = bₑ (equalities),  l ≤ x ≤ u
//! ```
//!
//! and solved by a two-phase bounded revised simplex. Because the engine keeps
//! a dense basis inverse, the front end picks whichever of the primal or the
//! Lagrangian dual has the smaller basis and maps the answer back, including
//! the multipliers.

mod mps;
mod plugin;
mod simplex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Scalar;

pub use mps::write_mps;
pub use plugin::{solve_external, LpPlugin, MinilpPlugin, SolverRegistry, EMBEDDED_ID, MINILP_ID};

use simplex::{solve_standard, EngineResult, EngineStatus, StandardForm};

/// Sparse linear form `Σ coef · x[idx]`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct SparseRow<T> {
    pub entries: Vec<(usize, T)>,
}

impl<T: Scalar> SparseRow<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn from_entries(entries: Vec<(usize, T)>) -> Self {
        Self { entries }
    }

    /// Row built from a dense slice placed at column `offset`; zeros are skipped.
    pub fn from_dense(offset: usize, dense: &[T]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != T::zero())
            .map(|(k, &v)| (offset + k, v))
            .collect();
        Self { entries }
    }

    pub fn push(&mut self, idx: usize, coef: T) {
        if coef != T::zero() {
            self.entries.push((idx, coef));
        }
    }

    pub fn eval(&self, x: &[T]) -> T {
        self.entries.iter().fold(T::zero(), |a, &(j, v)| a + v * x[j])
    }

    pub fn negated(&self) -> Self {
        Self {
            entries: self.entries.iter().map(|&(j, v)| (j, -v)).collect(),
        }
    }

    /// Merges repeated indices and drops exact zeros, keeping first-seen order.
    pub fn compact(&mut self) {
        let mut out: Vec<(usize, T)> = Vec::with_capacity(self.entries.len());
        for &(j, v) in &self.entries {
            match out.iter_mut().find(|(k, _)| *k == j) {
                Some(e) => e.1 += v,
                None => out.push((j, v)),
            }
        }
        out.retain(|(_, v)| *v != T::zero());
        self.entries = out;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Constraint<T> {
    pub row: SparseRow<T>,
    pub rhs: T,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LinearProgram<T> {
    num_vars: usize,
    objective: Vec<T>,
    inequalities: Vec<Constraint<T>>,
    equalities: Vec<Constraint<T>>,
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> LinearProgram<T> {
    /// New program with `num_vars` free variables and a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            num_vars,
            objective: vec![T::zero(); num_vars],
            inequalities: Vec::new(),
            equalities: Vec::new(),
            lower: vec![T::neg_infinity(); num_vars],
            upper: vec![T::infinity(); num_vars],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn add_var(&mut self, lower: T, upper: T) -> usize {
        self.num_vars += 1;
        self.objective.push(T::zero());
        self.lower.push(lower);
        self.upper.push(upper);
        self.num_vars - 1
    }

    pub fn set_objective(&mut self, var: usize, coef: T) {
        self.objective[var] = coef;
    }

    pub fn set_objective_dense(&mut self, c: &[T]) {
        assert_eq!(c.len(), self.num_vars);
        self.objective = c.to_vec();
    }

    pub fn objective(&self) -> &[T] {
        &self.objective
    }

    pub fn set_bounds(&mut self, var: usize, lower: T, upper: T) {
        self.lower[var] = lower;
        self.upper[var] = upper;
    }

    pub fn bounds(&self, var: usize) -> (T, T) {
        (self.lower[var], self.upper[var])
    }

    /// `row · x ≤ rhs`; returns the inequality index.
    pub fn add_le(&mut self, row: SparseRow<T>, rhs: T) -> usize {
        self.inequalities.push(Constraint { row, rhs });
        self.inequalities.len() - 1
    }

    /// `row · x ≥ rhs`, stored negated as an inequality.
    pub fn add_ge(&mut self, row: SparseRow<T>, rhs: T) -> usize {
        self.add_le(row.negated(), -rhs)
    }

    /// `row · x = rhs`; returns the equality index.
    pub fn add_eq(&mut self, row: SparseRow<T>, rhs: T) -> usize {
        self.equalities.push(Constraint { row, rhs });
        self.equalities.len() - 1
    }

    pub fn inequalities(&self) -> &[Constraint<T>] {
        &self.inequalities
    }

    pub fn equalities(&self) -> &[Constraint<T>] {
        &self.equalities
    }

    pub fn validate(&self) -> Result<(), LpError> {
        let rows = self.inequalities.iter().chain(&self.equalities);
        for (k, c) in rows.enumerate() {
            if c.rhs.is_nan() {
                return Err(LpError::InvalidProgram(format!("NaN right-hand side in row {k}")));
            }
            for &(j, v) in &c.row.entries {
                if j >= self.num_vars {
                    return Err(LpError::InvalidProgram(format!(
                        "row {k} references variable {j} of {}",
                        self.num_vars
                    )));
                }
                if !v.is_finite() {
                    return Err(LpError::InvalidProgram(format!("non-finite coefficient in row {k}")));
                }
            }
        }
        if self.objective.iter().any(|v| !v.is_finite()) {
            return Err(LpError::InvalidProgram("non-finite objective coefficient".into()));
        }
        for j in 0..self.num_vars {
            if self.lower[j].is_nan() || self.upper[j].is_nan() || self.lower[j] == T::infinity() {
                return Err(LpError::InvalidProgram(format!("bad bounds on variable {j}")));
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `x`.
    pub fn max_violation(&self, x: &[T]) -> T {
        let mut worst = T::zero();
        for c in &self.inequalities {
            worst = worst.max(c.row.eval(x) - c.rhs);
        }
        for c in &self.equalities {
            worst = worst.max((c.row.eval(x) - c.rhs).abs());
        }
        for j in 0..self.num_vars {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    pub fn objective_value(&self, x: &[T]) -> T {
        self.objective.iter().zip(x).fold(T::zero(), |a, (&c, &v)| a + c * v)
    }

    fn num_rows(&self) -> usize {
        self.inequalities.len() + self.equalities.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

/// Which problem the simplex engine works on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Smaller basis of the two.
    #[default]
    Auto,
    Primal,
    Dual,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(bound = "T: Scalar", default, deny_unknown_fields)]
pub struct LpOptions<T> {
    pub feas_tol: T,
    pub opt_tol: T,
    /// Defaults to `50 · (rows + vars)` when unset.
    pub max_iterations: Option<usize>,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
    pub refactor_every: usize,
    pub pivot_tol: T,
    /// Basis condition estimate beyond which the solve reports a breakdown.
    pub max_condition: T,
    pub orientation: Orientation,
}

impl<T: Scalar> Default for LpOptions<T> {
    fn default() -> Self {
        Self {
            feas_tol: T::of(1e-8),
            opt_tol: T::of(1e-8),
            max_iterations: None,
            bland_after: 500,
            refactor_every: 64,
            pivot_tol: T::of(1e-11),
            max_condition: T::of(1e15),
            orientation: Orientation::Auto,
        }
    }
}

/// Lagrange multipliers of an optimal solve, signed so that
/// `c + Σ λᵢ aᵢ + Σ μₑ aₑ − z = 0` with `λ ≥ 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Duals<T> {
    pub inequality: Vec<T>,
    pub equality: Vec<T>,
    /// Bound multipliers `z` (nonnegative at a lower bound, nonpositive at an upper one).
    pub reduced_costs: Vec<T>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LpResult<T> {
    pub status: LpStatus,
    pub x: Vec<T>,
    pub objective_value: T,
    pub iterations: usize,
    pub duals: Option<Duals<T>>,
}

impl<T: Scalar> LpResult<T> {
    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    /// Dual objective `−Σ λᵢ bᵢ − Σ μₑ bₑ + Σ z⁺ l − Σ z⁻ u` for the given program.
    pub fn dual_objective(&self, lp: &LinearProgram<T>) -> Option<T> {
        let d = self.duals.as_ref()?;
        let mut v = T::zero();
        for (c, &l) in lp.inequalities.iter().zip(&d.inequality) {
            v -= l * c.rhs;
        }
        for (c, &m) in lp.equalities.iter().zip(&d.equality) {
            v -= m * c.rhs;
        }
        for j in 0..lp.num_vars {
            let z = d.reduced_costs[j];
            if z > T::zero() {
                v += z * lp.lower[j];
            } else if z < T::zero() {
                v += z * lp.upper[j];
            }
        }
        Some(v)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical breakdown: {reason}")]
    NumericalBreakdown { reason: String },
    #[error("invalid program: {0}")]
    InvalidProgram(String),
    #[error("solver plugin `{0}` is not available")]
    PluginUnavailable(String),
}

/// Solves `lp` with the embedded simplex.
pub fn solve<T: Scalar>(lp: &LinearProgram<T>, opts: &LpOptions<T>) -> Result<LpResult<T>, LpError> {
    lp.validate()?;
    if lp.num_vars == 0 {
        return Ok(solve_empty(lp, opts));
    }
    let max_iter = opts.max_iterations.unwrap_or(50 * (lp.num_rows() + lp.num_vars).max(1));
    let use_dual = match opts.orientation {
        Orientation::Primal => false,
        Orientation::Dual => true,
        Orientation::Auto => lp.num_vars < lp.num_rows(),
    };
    if use_dual {
        solve_via_dual(lp, opts, max_iter)
    } else {
        solve_primal(lp, opts, max_iter)
    }
}

fn solve_empty<T: Scalar>(lp: &LinearProgram<T>, opts: &LpOptions<T>) -> LpResult<T> {
    let ok = lp.inequalities.iter().all(|c| c.rhs >= -opts.feas_tol)
        && lp.equalities.iter().all(|c| c.rhs.abs() <= opts.feas_tol);
    LpResult {
        status: if ok { LpStatus::Optimal } else { LpStatus::Infeasible },
        x: Vec::new(),
        objective_value: T::zero(),
        iterations: 0,
        duals: ok.then(|| Duals {
            inequality: vec![T::zero(); lp.inequalities.len()],
            equality: vec![T::zero(); lp.equalities.len()],
            reduced_costs: Vec::new(),
        }),
    }
}

fn map_status(s: EngineStatus) -> LpStatus {
    match s {
        EngineStatus::Optimal => LpStatus::Optimal,
        EngineStatus::Infeasible => LpStatus::Infeasible,
        EngineStatus::Unbounded => LpStatus::Unbounded,
        EngineStatus::IterationLimit => LpStatus::IterationLimit,
    }
}

/// Columns are the original variables followed by one slack per inequality.
fn solve_primal<T: Scalar>(
    lp: &LinearProgram<T>,
    opts: &LpOptions<T>,
    max_iter: usize,
) -> Result<LpResult<T>, LpError> {
    let n = lp.num_vars;
    let mi = lp.inequalities.len();
    let me = lp.equalities.len();
    let mut columns: Vec<Vec<(usize, T)>> = vec![Vec::new(); n + mi];
    let mut rhs = Vec::with_capacity(mi + me);
    for (r, c) in lp.inequalities.iter().chain(&lp.equalities).enumerate() {
        let mut row = c.row.clone();
        row.compact();
        for &(j, v) in &row.entries {
            columns[j].push((r, v));
        }
        rhs.push(c.rhs);
    }
    let mut slack_of_row = vec![None; mi + me];
    for r in 0..mi {
        columns[n + r].push((r, T::one()));
        slack_of_row[r] = Some(n + r);
    }
    let mut cost = lp.objective.clone();
    cost.extend(std::iter::repeat_n(T::zero(), mi));
    let mut lower = lp.lower.clone();
    lower.extend(std::iter::repeat_n(T::zero(), mi));
    let mut upper = lp.upper.clone();
    upper.extend(std::iter::repeat_n(T::infinity(), mi));
    let sf = StandardForm {
        rows: mi + me,
        columns,
        cost,
        lower,
        upper,
        rhs,
        slack_of_row,
    };
    let res = solve_standard(&sf, opts, max_iter)?;
    let x = res.x[..n].to_vec();
    let status = map_status(res.status);
    let duals = (status == LpStatus::Optimal).then(|| Duals {
        inequality: res.row_duals[..mi].iter().map(|&y| (-y).max(T::zero())).collect(),
        equality: res.row_duals[mi..].iter().map(|&y| -y).collect(),
        reduced_costs: res.reduced_costs[..n].to_vec(),
    });
    Ok(LpResult {
        status,
        objective_value: lp.objective_value(&x),
        x,
        iterations: res.iterations,
        duals,
    })
}

/// What each column of the dual program stands for.
#[derive(Clone, Copy)]
enum DualColumn {
    Inequality(usize),
    Equality(usize),
    Lower(usize),
    Upper(usize),
    Fixed(usize),
}

/// Builds the Lagrangian dual
/// `min g'ᵀλ + aᵀμ  s.t.  G'ᵀλ + Aᵀμ = −c,  λ ≥ 0`,
/// where `G'` stacks the inequalities and the finite variable bounds.
fn dual_standard_form<T: Scalar>(lp: &LinearProgram<T>, cost: &[T]) -> (StandardForm<T>, Vec<DualColumn>) {
    let n = lp.num_vars;
    let mut columns = Vec::new();
    let mut kinds = Vec::new();
    let mut dcost = Vec::new();
    let mut lower = Vec::new();
    let mut upper = Vec::new();
    let mut push = |col: Vec<(usize, T)>, c: T, free: bool, kind: DualColumn| {
        columns.push(col);
        dcost.push(c);
        lower.push(if free { T::neg_infinity() } else { T::zero() });
        upper.push(T::infinity());
        kinds.push(kind);
    };
    for (k, c) in lp.inequalities.iter().enumerate() {
        let mut row = c.row.clone();
        row.compact();
        push(row.entries, c.rhs, false, DualColumn::Inequality(k));
    }
    for (k, c) in lp.equalities.iter().enumerate() {
        let mut row = c.row.clone();
        row.compact();
        push(row.entries, c.rhs, true, DualColumn::Equality(k));
    }
    for j in 0..n {
        let (l, u) = (lp.lower[j], lp.upper[j]);
        if l.is_finite() && u.is_finite() && l == u {
            push(vec![(j, T::one())], l, true, DualColumn::Fixed(j));
            continue;
        }
        if l.is_finite() {
            push(vec![(j, -T::one())], -l, false, DualColumn::Lower(j));
        }
        if u.is_finite() {
            push(vec![(j, T::one())], u, false, DualColumn::Upper(j));
        }
    }
    let sf = StandardForm {
        rows: n,
        slack_of_row: vec![None; n],
        columns,
        cost: dcost,
        lower,
        upper,
        rhs: cost.iter().map(|&c| -c).collect(),
    };
    (sf, kinds)
}

fn solve_via_dual<T: Scalar>(
    lp: &LinearProgram<T>,
    opts: &LpOptions<T>,
    max_iter: usize,
) -> Result<LpResult<T>, LpError> {
    let n = lp.num_vars;
    let (sf, kinds) = dual_standard_form(lp, &lp.objective);
    let res: EngineResult<T> = solve_standard(&sf, opts, max_iter)?;
    let status = match res.status {
        EngineStatus::Optimal => LpStatus::Optimal,
        EngineStatus::Unbounded => LpStatus::Infeasible,
        EngineStatus::IterationLimit => LpStatus::IterationLimit,
        EngineStatus::Infeasible => {
            // Dual infeasible: the primal is unbounded or infeasible. A
            // zero-objective dual is always feasible and is unbounded exactly
            // when the primal is infeasible.
            let (sf0, _) = dual_standard_form(lp, &vec![T::zero(); n]);
            let probe = solve_standard(&sf0, opts, max_iter)?;
            match probe.status {
                EngineStatus::Unbounded => LpStatus::Infeasible,
                EngineStatus::Optimal => LpStatus::Unbounded,
                EngineStatus::IterationLimit => LpStatus::IterationLimit,
                EngineStatus::Infeasible => {
                    return Err(LpError::NumericalBreakdown {
                        reason: "zero-cost dual reported infeasible".into(),
                    })
                }
            }
        }
    };
    // Primal point: simplex multipliers of the dual's equality rows.
    let x = if status == LpStatus::Optimal {
        res.row_duals.clone()
    } else {
        vec![T::zero(); n]
    };
    let duals = (status == LpStatus::Optimal).then(|| {
        let mut d = Duals {
            inequality: vec![T::zero(); lp.inequalities.len()],
            equality: vec![T::zero(); lp.equalities.len()],
            reduced_costs: vec![T::zero(); n],
        };
        for (kind, &v) in kinds.iter().zip(&res.x) {
            match *kind {
                DualColumn::Inequality(k) => d.inequality[k] = v.max(T::zero()),
                DualColumn::Equality(k) => d.equality[k] = v,
                DualColumn::Lower(j) => d.reduced_costs[j] += v,
                DualColumn::Upper(j) => d.reduced_costs[j] -= v,
                DualColumn::Fixed(j) => d.reduced_costs[j] -= v,
            }
        }
        d
    });
    Ok(LpResult {
        status,
        objective_value: if status == LpStatus::Optimal {
            lp.objective_value(&x)
        } else {
            T::zero()
        },
        x,
        iterations: res.iterations,
        duals,
    })
}
