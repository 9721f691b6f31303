//! Bounded-variable revised simplex on the standard form
//! `min cᵀx  s.t.  A x = b,  l ≤ x ≤ u`.
//!
//! The basis inverse is kept as an explicit dense matrix updated by
//! elementary row operations and rebuilt from an LU factorization every
//! `refactor_every` pivots. That is the right trade-off for the basis sizes
//! produced by [`super::solve`], which always orients the problem so that the
//! basis dimension is the smaller of (rows, variables).

use crate::linops::{inverse_with_tol, Matrix};
use crate::scalar::Scalar;

use super::{LpError, LpOptions};

/// Column-sparse standard-form problem.
#[derive(Clone, Debug)]
pub(crate) struct StandardForm<T> {
    pub rows: usize,
    pub columns: Vec<Vec<(usize, T)>>,
    pub cost: Vec<T>,
    pub lower: Vec<T>,
    pub upper: Vec<T>,
    pub rhs: Vec<T>,
    /// Per row, a column with a single `+1` entry in that row and bounds `[0, ∞)`.
    pub slack_of_row: Vec<Option<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum EngineStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
}

#[derive(Clone, Debug)]
pub(crate) struct EngineResult<T> {
    pub status: EngineStatus,
    pub x: Vec<T>,
    /// Simplex multipliers `y` with reduced costs `d = c − Aᵀ y`.
    pub row_duals: Vec<T>,
    pub reduced_costs: Vec<T>,
    pub iterations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Nonbasic free variable parked at zero.
    Free,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Phase {
    One,
    Two,
}

struct Engine<'a, T> {
    sf: &'a StandardForm<T>,
    opts: &'a LpOptions<T>,
    /// Structural columns followed by one artificial per row.
    n_struct: usize,
    lower: Vec<T>,
    upper: Vec<T>,
    x: Vec<T>,
    state: Vec<VarState>,
    basis: Vec<usize>,
    binv: Matrix<T>,
    col_scale: Vec<T>,
    art_sign: Vec<T>,
    iterations: usize,
    since_refactor: usize,
    degenerate_run: usize,
    bland: bool,
    max_iterations: usize,
    repairs: usize,
    /// Columns whose last ratio test found no blocking row; skipped in
    /// pricing until the next basis change.
    rejected: Vec<bool>,
    any_rejected: bool,
}

const MAX_REPAIRS: usize = 8;

enum RunOutcome {
    Done(EngineStatus),
    Repaired,
}

impl<'a, T: Scalar> Engine<'a, T> {
    fn new(sf: &'a StandardForm<T>, opts: &'a LpOptions<T>, max_iterations: usize) -> Self {
        let m = sf.rows;
        let n_struct = sf.columns.len();
        let mut lower = sf.lower.clone();
        let mut upper = sf.upper.clone();
        lower.extend(std::iter::repeat_n(T::zero(), m));
        upper.extend(std::iter::repeat_n(T::infinity(), m));
        let col_scale = sf
            .columns
            .iter()
            .map(|c| (T::one() + c.iter().fold(T::zero(), |a, &(_, v)| a + v * v)).sqrt())
            .chain(std::iter::repeat_n(T::one(), m))
            .collect();
        Self {
            sf,
            opts,
            n_struct,
            lower,
            upper,
            x: vec![T::zero(); n_struct + m],
            state: vec![VarState::AtLower; n_struct + m],
            basis: Vec::with_capacity(m),
            binv: Matrix::identity(m),
            col_scale,
            art_sign: vec![T::one(); m],
            iterations: 0,
            since_refactor: 0,
            degenerate_run: 0,
            bland: false,
            max_iterations,
            repairs: 0,
            rejected: vec![false; n_struct + m],
            any_rejected: false,
        }
    }

    fn m(&self) -> usize {
        self.sf.rows
    }

    fn is_artificial(&self, j: usize) -> bool {
        j >= self.n_struct
    }

    /// Column `j` as sparse entries; artificials carry `±1` depending on the
    /// sign they were created with (stored in `art_sign`).
    fn column(&self, j: usize) -> ColumnRef<'_, T> {
        let art_sign = &self.art_sign;
        if j < self.n_struct {
            ColumnRef::Sparse(&self.sf.columns[j])
        } else {
            let r = j - self.n_struct;
            ColumnRef::Unit(r, art_sign[r])
        }
    }

    fn initial_basis(&mut self) {
        let m = self.m();
        for j in 0..self.n_struct {
            let (l, u) = (self.lower[j], self.upper[j]);
            let (st, v) = if l.is_finite() {
                (VarState::AtLower, l)
            } else if u.is_finite() {
                (VarState::AtUpper, u)
            } else {
                (VarState::Free, T::zero())
            };
            self.state[j] = st;
            self.x[j] = v;
        }
        let mut resid = self.sf.rhs.clone();
        for j in 0..self.n_struct {
            let v = self.x[j];
            if v != T::zero() {
                for &(i, a) in &self.sf.columns[j] {
                    resid[i] -= a * v;
                }
            }
        }
        let mut art_sign = vec![T::one(); m];
        self.basis.clear();
        for i in 0..m {
            let slack = self.sf.slack_of_row[i].filter(|&s| self.x[s] == T::zero());
            match slack {
                Some(s) if resid[i] >= T::zero() => {
                    self.basis.push(s);
                    self.state[s] = VarState::Basic(i);
                    self.x[s] = resid[i];
                    let a = self.n_struct + i;
                    self.state[a] = VarState::AtLower;
                    self.x[a] = T::zero();
                }
                _ => {
                    let a = self.n_struct + i;
                    art_sign[i] = if resid[i] < T::zero() { -T::one() } else { T::one() };
                    self.basis.push(a);
                    self.state[a] = VarState::Basic(i);
                    self.x[a] = resid[i].abs();
                }
            }
        }
        // B is diagonal with entries ±1 (slacks are +1).
        let mut binv = Matrix::zeros(m, m);
        for i in 0..m {
            let b = self.basis[i];
            binv[(i, i)] = if self.is_artificial(b) { art_sign[i] } else { T::one() };
        }
        self.binv = binv;
        self.art_sign = art_sign;
    }

    fn basic_cost(&self, cost: &[T]) -> Vec<T> {
        self.basis.iter().map(|&j| cost[j]).collect()
    }

    /// `y = (c_B)ᵀ B⁻¹`.
    fn duals(&self, cost: &[T]) -> Vec<T> {
        let cb = self.basic_cost(cost);
        self.binv.tr_mul_vec(&cb)
    }

    fn reduced_cost(&self, j: usize, cost: &[T], y: &[T]) -> T {
        cost[j] - self.column(j).dot(y)
    }

    /// `B⁻¹ a_j`.
    fn ftran(&self, j: usize) -> Vec<T> {
        let m = self.m();
        let mut out = vec![T::zero(); m];
        match self.column(j) {
            ColumnRef::Sparse(col) => {
                for &(r, a) in col {
                    for (i, o) in out.iter_mut().enumerate() {
                        *o += self.binv[(i, r)] * a;
                    }
                }
            }
            ColumnRef::Unit(r, s) => {
                for (i, o) in out.iter_mut().enumerate() {
                    *o = self.binv[(i, r)] * s;
                }
            }
        }
        out
    }

    fn basis_matrix(&self) -> Matrix<T> {
        let m = self.m();
        let mut b = Matrix::zeros(m, m);
        for (k, &j) in self.basis.iter().enumerate() {
            match self.column(j) {
                ColumnRef::Sparse(col) => {
                    for &(r, a) in col {
                        b[(r, k)] = a;
                    }
                }
                ColumnRef::Unit(r, s) => b[(r, k)] = s,
            }
        }
        b
    }

    /// Refactors, repairing a singular basis with artificials. Returns `false`
    /// when a repair happened and phase one has to run again.
    fn refactor_or_repair(&mut self) -> Result<bool, LpError> {
        match self.refactor() {
            Ok(()) => Ok(true),
            Err(LpError::NumericalBreakdown { .. }) if self.repairs < MAX_REPAIRS => {
                self.repairs += 1;
                self.repair()?;
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    /// Swaps dependent basic columns for artificials of uncovered rows, then
    /// swaps basic structurals lying outside their bounds for artificials too.
    fn repair(&mut self) -> Result<(), LpError> {
        let m = self.m();
        let mut w = self.basis_matrix();
        let scale = w.max_abs().max(T::min_positive_value());
        let tol = T::of(1e-9) * scale;
        let mut used = vec![false; m];
        let mut deficient = Vec::new();
        for k in 0..m {
            let best = (0..m)
                .filter(|&i| !used[i])
                .map(|i| (i, w[(i, k)].abs()))
                .fold(None::<(usize, T)>, |b, c| match b {
                    Some(bb) if bb.1 >= c.1 => Some(bb),
                    _ => Some(c),
                });
            match best {
                Some((r, v)) if v > tol => {
                    used[r] = true;
                    let pr: Vec<T> = w.row(r).to_vec();
                    let d = pr[k];
                    for i in 0..m {
                        if used[i] {
                            continue;
                        }
                        let f = w[(i, k)] / d;
                        if f != T::zero() {
                            for (c, &p) in w.row_mut(i).iter_mut().zip(&pr) {
                                *c -= f * p;
                            }
                        }
                    }
                }
                _ => deficient.push(k),
            }
        }
        let free_rows: Vec<usize> = (0..m).filter(|&i| !used[i]).collect();
        for j in self.n_struct..self.x.len() {
            self.upper[j] = T::infinity();
        }
        for (&k, &r) in deficient.iter().zip(&free_rows) {
            let old = self.basis[k];
            self.park(old);
            let a = self.n_struct + r;
            if let VarState::Basic(slot) = self.state[a] {
                // Artificial of an uncovered row cannot already be basic in a
                // nonsingular slot; drop it from the other slot as well.
                self.basis[slot] = a;
            }
            self.basis[k] = a;
            self.state[a] = VarState::Basic(k);
            self.x[a] = T::zero();
        }
        log::debug!("simplex basis repair replaced {} columns", deficient.len());
        self.refactor()?;
        self.fix_artificial_signs();
        // Basic structurals outside their bounds leave for artificials.
        let feas = self.opts.feas_tol;
        for _ in 0..m {
            let bad = (0..m).find(|&k| {
                let b = self.basis[k];
                !self.is_artificial(b) && (self.x[b] < self.lower[b] - feas || self.x[b] > self.upper[b] + feas)
            });
            let Some(k) = bad else { break };
            let r = (0..m)
                .filter(|&r| !matches!(self.state[self.n_struct + r], VarState::Basic(_)))
                .map(|r| (r, self.binv[(k, r)].abs()))
                .fold(None::<(usize, T)>, |b, c| match b {
                    Some(bb) if bb.1 >= c.1 => Some(bb),
                    _ => Some(c),
                });
            let Some((r, v)) = r.filter(|&(_, v)| v > T::of(1e-12)) else {
                return Err(LpError::NumericalBreakdown {
                    reason: "singular basis".into(),
                });
            };
            let _ = v;
            let old = self.basis[k];
            self.park(old);
            let a = self.n_struct + r;
            self.basis[k] = a;
            self.state[a] = VarState::Basic(k);
            self.refactor()?;
            self.fix_artificial_signs();
        }
        Ok(())
    }

    /// Moves a leaving basic variable to its nearest bound.
    fn park(&mut self, j: usize) {
        let (l, u, v) = (self.lower[j], self.upper[j], self.x[j]);
        let (st, val) = match (l.is_finite(), u.is_finite()) {
            (true, true) => {
                if (v - l).abs() <= (u - v).abs() {
                    (VarState::AtLower, l)
                } else {
                    (VarState::AtUpper, u)
                }
            }
            (true, false) => (VarState::AtLower, l),
            (false, true) => (VarState::AtUpper, u),
            (false, false) => (VarState::Free, T::zero()),
        };
        self.state[j] = st;
        self.x[j] = val;
    }

    /// Flips artificial columns so that basic artificials are nonnegative.
    fn fix_artificial_signs(&mut self) {
        let m = self.m();
        for k in 0..m {
            let b = self.basis[k];
            if self.is_artificial(b) && self.x[b] < T::zero() {
                let r = b - self.n_struct;
                self.art_sign[r] = -self.art_sign[r];
                self.x[b] = -self.x[b];
                for v in self.binv.row_mut(k) {
                    *v = -*v;
                }
            }
        }
    }

    fn refactor(&mut self) -> Result<(), LpError> {
        let m = self.m();
        if m == 0 {
            return Ok(());
        }
        let b = self.basis_matrix();
        let binv = inverse_with_tol(&b, T::EPS).ok_or(LpError::NumericalBreakdown {
            reason: "singular basis".into(),
        })?;
        let cond = norm1(&b) * norm1(&binv);
        if !(cond <= self.opts.max_condition) {
            return Err(LpError::NumericalBreakdown {
                reason: format!("basis condition estimate {:e} exceeds limit", cond.as_f64()),
            });
        }
        self.binv = binv;
        self.since_refactor = 0;
        self.recompute_basic_values();
        Ok(())
    }

    fn recompute_basic_values(&mut self) {
        let m = self.m();
        let mut resid = self.sf.rhs.clone();
        for j in 0..self.x.len() {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.x[j];
            if v == T::zero() {
                continue;
            }
            match self.column(j) {
                ColumnRef::Sparse(col) => {
                    for &(i, a) in col {
                        resid[i] -= a * v;
                    }
                }
                ColumnRef::Unit(i, s) => resid[i] -= s * v,
            }
        }
        let xb = self.binv.mul_vec(&resid);
        for i in 0..m {
            self.x[self.basis[i]] = xb[i];
        }
    }

    fn eligible(&self, j: usize, d: T) -> Option<T> {
        let tol = self.opts.opt_tol;
        match self.state[j] {
            VarState::Basic(_) => None,
            VarState::AtLower if d < -tol && self.upper[j] > self.lower[j] => Some(T::one()),
            VarState::AtUpper if d > tol && self.upper[j] > self.lower[j] => Some(-T::one()),
            VarState::Free if d < -tol => Some(T::one()),
            VarState::Free if d > tol => Some(-T::one()),
            _ => None,
        }
    }

    /// Returns the entering column and its direction, or `None` at optimality.
    fn price(&self, cost: &[T], y: &[T], phase: Phase) -> Option<(usize, T)> {
        let mut best: Option<(usize, T, T)> = None;
        let n = self.x.len();
        for j in 0..n {
            if phase == Phase::Two && self.is_artificial(j) {
                continue;
            }
            if matches!(self.state[j], VarState::Basic(_)) || self.rejected[j] {
                continue;
            }
            let d = self.reduced_cost(j, cost, y);
            if let Some(dir) = self.eligible(j, d) {
                if self.bland {
                    return Some((j, dir));
                }
                let score = d.abs() / self.col_scale[j];
                if best.is_none_or(|(_, _, s)| score > s) {
                    best = Some((j, dir, score));
                }
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    /// Runs simplex iterations for `cost` until optimality, unboundedness, or the
    /// iteration limit.
    fn run(&mut self, cost: &[T], phase: Phase) -> Result<RunOutcome, LpError> {
        let m = self.m();
        let feas = self.opts.feas_tol;
        let mut best = T::infinity();
        loop {
            let pivot_tol = self.opts.pivot_tol;
            if self.iterations >= self.max_iterations {
                return Ok(RunOutcome::Done(EngineStatus::IterationLimit));
            }
            let refactor_every = self.opts.refactor_every.max(m / 8);
            if self.since_refactor >= refactor_every && !self.refactor_or_repair()? {
                return Ok(RunOutcome::Repaired);
            }
            let y = self.duals(cost);
            let Some((q, dir)) = self.price(cost, &y, phase) else {
                return Ok(RunOutcome::Done(EngineStatus::Optimal));
            };
            let alpha = self.ftran(q);

            // Harris two-pass ratio test; Bland mode uses the textbook test
            // with smallest-index tie breaking.
            let alpha_max = alpha.iter().fold(T::zero(), |a, v| a.max(v.abs()));
            let pivot_tol = pivot_tol.max(T::of(1e-9) * alpha_max);
            let flip = self.upper[q] - self.lower[q];
            let mut theta_max = if flip.is_finite() { flip } else { T::infinity() };
            if !self.bland {
                for i in 0..m {
                    let delta = dir * alpha[i];
                    if delta.abs() <= pivot_tol {
                        continue;
                    }
                    let b = self.basis[i];
                    let xb = self.x[b];
                    let bound = if delta > T::zero() {
                        (xb - self.lower[b] + feas) / delta
                    } else {
                        (self.upper[b] - xb + feas) / (-delta)
                    };
                    if bound.is_finite() && bound < theta_max {
                        theta_max = bound;
                    }
                }
            }
            let mut leave: Option<(usize, T)> = None;
            let mut best_mag = T::zero();
            for i in 0..m {
                let delta = dir * alpha[i];
                if delta.abs() <= pivot_tol {
                    continue;
                }
                let b = self.basis[i];
                let xb = self.x[b];
                let ratio = if delta > T::zero() {
                    (xb - self.lower[b]) / delta
                } else {
                    (self.upper[b] - xb) / (-delta)
                };
                if !ratio.is_finite() {
                    continue;
                }
                let ratio = ratio.max(T::zero());
                if self.bland {
                    let better = match leave {
                        None => ratio < theta_max,
                        Some((li, lr)) => ratio < lr || (ratio == lr && self.basis[i] < self.basis[li]),
                    };
                    if better {
                        leave = Some((i, ratio));
                    }
                } else if ratio <= theta_max && delta.abs() > best_mag {
                    best_mag = delta.abs();
                    leave = Some((i, ratio));
                }
            }

            let theta = match leave {
                Some((_, r)) if !(flip.is_finite() && flip <= r) => r,
                _ if flip.is_finite() => flip,
                _ => {
                    if phase == Phase::Two {
                        return Ok(RunOutcome::Done(EngineStatus::Unbounded));
                    }
                    // The phase-one objective is bounded, so a ray here is
                    // roundoff: refresh the inverse, then reject the column.
                    if self.since_refactor > 0 {
                        if !self.refactor_or_repair()? {
                            return Ok(RunOutcome::Repaired);
                        }
                    } else {
                        self.rejected[q] = true;
                        self.any_rejected = true;
                    }
                    continue;
                }
            };
            self.iterations += 1;
            for i in 0..m {
                let b = self.basis[i];
                self.x[b] -= theta * dir * alpha[i];
            }
            let pivot_row = match leave {
                Some((r, ratio)) if !(flip.is_finite() && flip <= ratio) => Some(r),
                _ => None,
            };
            match pivot_row {
                None => {
                    // Bound flip of the entering variable; basis unchanged.
                    let (st, v) = if dir > T::zero() {
                        (VarState::AtUpper, self.upper[q])
                    } else {
                        (VarState::AtLower, self.lower[q])
                    };
                    self.state[q] = st;
                    self.x[q] = v;
                }
                Some(r) => {
                    let piv = alpha[r];
                    if piv.abs() <= pivot_tol {
                        return Err(LpError::NumericalBreakdown {
                            reason: "vanishing pivot".into(),
                        });
                    }
                    let out = self.basis[r];
                    let delta = dir * piv;
                    let (st, v) = if delta > T::zero() {
                        (VarState::AtLower, self.lower[out])
                    } else {
                        (VarState::AtUpper, self.upper[out])
                    };
                    // Free basic variables never block, so `v` is finite.
                    self.state[out] = if v.is_finite() { st } else { VarState::Free };
                    self.x[out] = if v.is_finite() { v } else { T::zero() };
                    self.x[q] += theta * dir;
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic(r);
                    self.pivot_binv(r, &alpha);
                    self.since_refactor += 1;
                    if self.any_rejected {
                        self.rejected.iter_mut().for_each(|v| *v = false);
                        self.any_rejected = false;
                    }
                }
            }
            // Progress is judged on the best objective so far: the tiny
            // steps the Harris test allows can otherwise cycle forever.
            let obj = (0..self.x.len()).fold(T::zero(), |a, j| a + cost[j] * self.x[j]);
            if obj < best - T::of(1e-11) * (T::one() + best.abs()) {
                best = obj;
                self.degenerate_run = 0;
                self.bland = false;
            } else {
                self.degenerate_run += 1;
                if self.degenerate_run > self.opts.bland_after {
                    self.bland = true;
                }
            }
        }
    }

    fn pivot_binv(&mut self, r: usize, alpha: &[T]) {
        let m = self.m();
        let piv = alpha[r];
        let inv = T::one() / piv;
        for v in self.binv.row_mut(r) {
            *v *= inv;
        }
        let pivot_row: Vec<T> = self.binv.row(r).to_vec();
        for i in 0..m {
            if i == r {
                continue;
            }
            let f = alpha[i];
            if f == T::zero() {
                continue;
            }
            for (v, &p) in self.binv.row_mut(i).iter_mut().zip(&pivot_row) {
                *v -= f * p;
            }
        }
    }

    fn infeasibility(&self) -> T {
        let mut worst = T::zero();
        for &b in &self.basis {
            let v = self.x[b];
            worst = worst.max(self.lower[b] - v).max(v - self.upper[b]);
        }
        worst
    }

    fn artificial_sum(&self) -> T {
        (self.n_struct..self.x.len()).fold(T::zero(), |a, j| a + self.x[j].max(T::zero()))
    }
}

enum ColumnRef<'a, T> {
    Sparse(&'a [(usize, T)]),
    Unit(usize, T),
}

impl<T: Scalar> ColumnRef<'_, T> {
    fn dot(&self, y: &[T]) -> T {
        match self {
            ColumnRef::Sparse(col) => col.iter().fold(T::zero(), |a, &(i, v)| a + v * y[i]),
            ColumnRef::Unit(i, s) => *s * y[*i],
        }
    }
}

fn norm1<T: Scalar>(a: &Matrix<T>) -> T {
    let mut best = T::zero();
    for j in 0..a.cols() {
        let s = (0..a.rows()).fold(T::zero(), |acc, i| acc + a[(i, j)].abs());
        best = best.max(s);
    }
    best
}

pub(crate) fn solve_standard<T: Scalar>(
    sf: &StandardForm<T>,
    opts: &LpOptions<T>,
    max_iterations: usize,
) -> Result<EngineResult<T>, LpError> {
    let m = sf.rows;
    let n = sf.columns.len();
    let mut eng = Engine::new(sf, opts, max_iterations);
    eng.initial_basis();
    let rhs_scale = T::one() + sf.rhs.iter().fold(T::zero(), |a, v| a.max(v.abs()));

    let mut phase1_cost = vec![T::zero(); n + m];
    for c in phase1_cost.iter_mut().skip(n) {
        *c = T::one();
    }
    let mut phase2_cost = sf.cost.clone();
    phase2_cost.extend(std::iter::repeat_n(T::zero(), m));

    let finish = |eng: &Engine<T>, status: EngineStatus, cost: &[T]| {
        let y = eng.duals(cost);
        let d = (0..n).map(|j| eng.reduced_cost(j, cost, &y)).collect();
        EngineResult {
            status,
            x: eng.x[..n].to_vec(),
            row_duals: y,
            reduced_costs: d,
            iterations: eng.iterations,
        }
    };

    // A few rounds guard against drift: phase 2 may end slightly infeasible
    // after a refactorization, in which case phase 1 is re-entered.
    for _round in 0..4 + MAX_REPAIRS {
        if eng.artificial_sum() > T::zero() {
            match eng.run(&phase1_cost, Phase::One)? {
                RunOutcome::Repaired => continue,
                RunOutcome::Done(EngineStatus::IterationLimit) => {
                    return Ok(finish(&eng, EngineStatus::IterationLimit, &phase1_cost));
                }
                RunOutcome::Done(_) => {}
            }
            if !eng.refactor_or_repair()? {
                continue;
            }
            if eng.artificial_sum() > opts.feas_tol * rhs_scale {
                return Ok(finish(&eng, EngineStatus::Infeasible, &phase1_cost));
            }
        }
        // Artificials are pinned at zero from here on.
        for j in n..n + m {
            eng.upper[j] = T::zero();
            if !matches!(eng.state[j], VarState::Basic(_)) {
                eng.x[j] = T::zero();
                eng.state[j] = VarState::AtLower;
            }
        }
        eng.bland = false;
        eng.degenerate_run = 0;
        match eng.run(&phase2_cost, Phase::Two)? {
            RunOutcome::Repaired => continue,
            RunOutcome::Done(EngineStatus::Optimal) => {}
            RunOutcome::Done(st) => return Ok(finish(&eng, st, &phase2_cost)),
        }
        if !eng.refactor_or_repair()? {
            continue;
        }
        if eng.infeasibility() <= opts.feas_tol * rhs_scale {
            // Clamp the tiny residual bound violations the Harris test allows.
            for &b in &eng.basis {
                let v = eng.x[b].max(eng.lower[b]).min(eng.upper[b]);
                eng.x[b] = v;
            }
            // Re-price after refactoring; continue if drift made a column attractive.
            let y = eng.duals(&phase2_cost);
            if eng.price(&phase2_cost, &y, Phase::Two).is_none() {
                return Ok(finish(&eng, EngineStatus::Optimal, &phase2_cost));
            }
        }
        // Re-open artificials for another phase-one pass.
        for j in n..n + m {
            eng.upper[j] = T::infinity();
        }
        let drift = eng.infeasibility();
        if drift > T::zero() {
            // Basic structurals outside their bounds: restart from scratch is
            // the most robust response.
            log::debug!("simplex drift {:e}; restarting phase one", drift.as_f64());
            let spent = eng.iterations;
            eng = Engine::new(sf, opts, max_iterations);
            eng.iterations = spent;
            eng.initial_basis();
        }
    }
    Err(LpError::NumericalBreakdown {
        reason: "simplex failed to stabilize".into(),
    })
}
