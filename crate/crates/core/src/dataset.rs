//! Measured trajectories and the set of models consistent with them.

use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linops::{kron, kron_vec, numerical_rank, Matrix};
use crate::lp::{self, LinearProgram, LpError, LpOptions, LpStatus, SparseRow};
use crate::polytope::Polytope;
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DatasetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("trajectory lengths disagree: {states} states, {inputs} inputs, {schedules} schedules")]
    LengthMismatch {
        states: usize,
        inputs: usize,
        schedules: usize,
    },
    #[error("non-finite sample at t = {0}")]
    NonFinite(usize),
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("io: {0}")]
    Io(String),
    #[error("disturbance set is not of the form −h ≤ Hw ≤ h")]
    AsymmetricDisturbanceSet,
    #[error("feasible model set is empty")]
    Empty,
    #[error("schedule p_{t} lies outside the scheduling set")]
    ScheduleOutsideSet { t: usize },
    #[error(transparent)]
    Lp(#[from] LpError),
}

/// States `x_0..x_T`, inputs `u_0..u_{T−1}`, schedules `p_0..p_{T−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TrajectoryData<T> {
    states: Vec<Vec<T>>,
    inputs: Vec<Vec<T>>,
    schedules: Vec<Vec<T>>,
}

impl<T: Scalar> TrajectoryData<T> {
    pub fn new(states: Vec<Vec<T>>, inputs: Vec<Vec<T>>, schedules: Vec<Vec<T>>) -> Result<Self, DatasetError> {
        if states.is_empty() || inputs.len() + 1 != states.len() || schedules.len() != inputs.len() {
            return Err(DatasetError::LengthMismatch {
                states: states.len(),
                inputs: inputs.len(),
                schedules: schedules.len(),
            });
        }
        let width = |v: &[Vec<T>], what: &str| -> Result<usize, DatasetError> {
            let w = v.first().map_or(0, Vec::len);
            if v.iter().any(|r| r.len() != w) {
                return Err(DatasetError::ShapeMismatch(format!(
                    "{what} samples have differing lengths"
                )));
            }
            Ok(w)
        };
        width(&states, "state")?;
        width(&inputs, "input")?;
        width(&schedules, "schedule")?;
        for (t, x) in states.iter().enumerate() {
            let finite = |v: Option<&Vec<T>>| v.is_none_or(|v| v.iter().all(|a| a.is_finite()));
            if !finite(Some(x)) || !finite(inputs.get(t)) || !finite(schedules.get(t)) {
                return Err(DatasetError::NonFinite(t));
            }
        }
        Ok(Self {
            states,
            inputs,
            schedules,
        })
    }

    /// Number of transitions `T`.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states[0].len()
    }

    pub fn m(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }

    pub fn s(&self) -> usize {
        self.schedules.first().map_or(0, Vec::len)
    }

    pub fn states(&self) -> &[Vec<T>] {
        &self.states
    }

    pub fn inputs(&self) -> &[Vec<T>] {
        &self.inputs
    }

    pub fn schedules(&self) -> &[Vec<T>] {
        &self.schedules
    }

    /// The first `t` transitions.
    pub fn prefix(&self, t: usize) -> Self {
        let t = t.min(self.len());
        Self {
            states: self.states[..=t].to_vec(),
            inputs: self.inputs[..t].to_vec(),
            schedules: self.schedules[..t].to_vec(),
        }
    }

    /// Checks every `p_t` against `ConvHull(p_vertices)`.
    pub fn validate_schedules(&self, p_vertices: &[Vec<T>], tol: T) -> Result<(), DatasetError> {
        for (t, p) in self.schedules.iter().enumerate() {
            if !in_convex_hull(p_vertices, p, tol)? {
                return Err(DatasetError::ScheduleOutsideSet { t });
            }
        }
        Ok(())
    }
}

/// Whether some convex weights `α` give `|Σ α_j v_j − p| ≤ tol`.
pub fn in_convex_hull<T: Scalar>(vertices: &[Vec<T>], p: &[T], tol: T) -> Result<bool, DatasetError> {
    if vertices.is_empty() {
        return Ok(false);
    }
    if vertices.iter().any(|v| v.len() != p.len()) {
        return Err(DatasetError::ShapeMismatch("schedule dimension".into()));
    }
    let k = vertices.len();
    let mut prog = LinearProgram::new(k);
    for j in 0..k {
        prog.set_bounds(j, T::zero(), T::one());
    }
    prog.add_eq(SparseRow::from_dense(0, &vec![T::one(); k]), T::one());
    for (i, &pi) in p.iter().enumerate() {
        let row = SparseRow::from_entries(vertices.iter().enumerate().map(|(j, v)| (j, v[i])).collect());
        prog.add_le(row.clone(), pi + tol);
        prog.add_ge(row, pi - tol);
    }
    Ok(lp::solve(&prog, &LpOptions::default())?.status == LpStatus::Optimal)
}

/// `X⁺` (`n × T`) and `X^p_u` (`(n+m)s × T`), column `t` being
/// `[p_t ⊗ x_t; p_t ⊗ u_t]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DataMatrices<T: Scalar> {
    pub x_plus: Matrix<T>,
    pub x_pu: Matrix<T>,
    pub n: usize,
    pub m: usize,
    pub s: usize,
}

/// `[p ⊗ x; p ⊗ u]`.
pub fn regressor<T: Scalar>(p: &[T], x: &[T], u: &[T]) -> Vec<T> {
    let mut z = kron_vec(p, x);
    z.extend(kron_vec(p, u));
    z
}

pub fn build_data_matrices<T: Scalar>(traj: &TrajectoryData<T>) -> Result<DataMatrices<T>, DatasetError> {
    let (n, m, s, t) = (traj.n(), traj.m(), traj.s(), traj.len());
    if t == 0 || s == 0 {
        return Err(DatasetError::ShapeMismatch("trajectory has no transitions".into()));
    }
    let x_plus = Matrix::from_fn(n, t, |i, k| traj.states[k + 1][i]);
    let cols: Vec<Vec<T>> = (0..t)
        .map(|k| regressor(&traj.schedules[k], &traj.states[k], &traj.inputs[k]))
        .collect();
    let x_pu = Matrix::from_fn((n + m) * s, t, |i, k| cols[k][i]);
    Ok(DataMatrices { x_plus, x_pu, n, m, s })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExcitationReport {
    pub rank_x_pu: usize,
    pub required_rank: usize,
    pub rank_h_w: usize,
    pub n: usize,
    pub ok: bool,
}

impl std::fmt::Display for ExcitationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "rank {}/{} {}",
            self.rank_x_pu,
            self.required_rank,
            if self.ok { "OK" } else { "FAIL" }
        )?;
        if self.rank_h_w < self.n {
            write!(f, " (H_w has column rank {} < {})", self.rank_h_w, self.n)?;
        }
        Ok(())
    }
}

pub fn excitation_report<T: Scalar>(d: &DataMatrices<T>, h_w: &Matrix<T>, tol: T) -> ExcitationReport {
    let required_rank = (d.n + d.m) * d.s;
    let rank_x_pu = numerical_rank(&d.x_pu, tol);
    let rank_h_w = numerical_rank(h_w, tol);
    ExcitationReport {
        rank_x_pu,
        required_rank,
        rank_h_w,
        n: d.n,
        ok: rank_x_pu == required_rank && rank_h_w == d.n,
    }
}

/// `X^p_u` has full row rank and `H_w` full column rank.
pub fn excitation_check<T: Scalar>(d: &DataMatrices<T>, h_w: &Matrix<T>, tol: T) -> bool {
    excitation_report(d, h_w, tol).ok
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n: usize,
    pub m: usize,
    pub s: usize,
    pub t: usize,
    pub n_w: usize,
}

impl ModelDims {
    /// Length of `vec(M)`.
    pub fn num_params(&self) -> usize {
        self.n * (self.n + self.m) * self.s
    }
}

/// `{vec(M) : H̄ vec(M) ≤ h̄}`, optionally with an irredundant subset of rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct FeasibleModelSet<T: Scalar> {
    h_bar: Matrix<T>,
    h_bar_vec: Vec<T>,
    reduced_rows: Option<Vec<usize>>,
    dims: ModelDims,
}

pub fn build_feasible_model_set<T: Scalar>(
    d: &DataMatrices<T>,
    w: &Polytope<T>,
) -> Result<FeasibleModelSet<T>, DatasetError> {
    let (h_w, h_w_vec) = w
        .as_symmetric(T::zero())
        .ok_or(DatasetError::AsymmetricDisturbanceSet)?;
    if h_w.cols() != d.n {
        return Err(DatasetError::ShapeMismatch(
            "disturbance dimension differs from state".into(),
        ));
    }
    let t = d.x_plus.cols();
    let n_w = h_w.rows();
    let h_m = kron(&d.x_pu.transpose(), &h_w);
    let mut upper = Vec::with_capacity(t * n_w);
    let mut lower = Vec::with_capacity(t * n_w);
    for k in 0..t {
        let hx = h_w.mul_vec(&d.x_plus.col(k));
        for (i, v) in hx.into_iter().enumerate() {
            upper.push(h_w_vec[i] + v);
            lower.push(h_w_vec[i] - v);
        }
    }
    upper.extend(lower);
    Ok(FeasibleModelSet {
        h_bar: h_m.vstack(&h_m.scaled(-T::one())),
        h_bar_vec: upper,
        reduced_rows: None,
        dims: ModelDims {
            n: d.n,
            m: d.m,
            s: d.s,
            t,
            n_w,
        },
    })
}

impl<T: Scalar> FeasibleModelSet<T> {
    /// `{vec(M_true)}` written as `[I; −I] v ≤ [vec M; −vec M]`.
    pub fn singleton(m_true: &Matrix<T>, n: usize, m: usize, s: usize) -> Result<Self, DatasetError> {
        if m_true.shape() != (n, (n + m) * s) {
            return Err(DatasetError::ShapeMismatch("model matrix shape".into()));
        }
        let v = crate::linops::vec(m_true);
        let k = v.len();
        let eye = Matrix::identity(k);
        let mut rhs = v.clone();
        rhs.extend(v.iter().map(|&x| -x));
        Ok(Self {
            h_bar: eye.vstack(&eye.scaled(-T::one())),
            h_bar_vec: rhs,
            reduced_rows: None,
            dims: ModelDims { n, m, s, t: 0, n_w: 0 },
        })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn h_bar(&self) -> &Matrix<T> {
        &self.h_bar
    }

    pub fn h_bar_vec(&self) -> &[T] {
        &self.h_bar_vec
    }

    pub fn reduced_rows(&self) -> Option<&[usize]> {
        self.reduced_rows.as_deref()
    }

    /// Rows in use: the reduced subset when present, otherwise all.
    pub fn active_rows(&self) -> Vec<usize> {
        match &self.reduced_rows {
            Some(r) => r.clone(),
            None => (0..self.h_bar.rows()).collect(),
        }
    }

    pub fn active_system(&self) -> (Matrix<T>, Vec<T>) {
        let rows = self.active_rows();
        let h = rows.iter().map(|&i| self.h_bar_vec[i]).collect();
        (self.h_bar.select_rows(&rows), h)
    }

    /// Whether `T·n_w` is large enough that reduction is on by default.
    pub fn reduction_recommended(&self) -> bool {
        self.dims.t * self.dims.n_w > 60
    }

    pub fn contains(&self, vec_m: &[T], tol: T) -> bool {
        self.h_bar
            .mul_vec(vec_m)
            .iter()
            .zip(&self.h_bar_vec)
            .all(|(&a, &b)| a <= b + tol)
    }

    pub fn contains_matrix(&self, m: &Matrix<T>, tol: T) -> bool {
        self.contains(&crate::linops::vec(m), tol)
    }

    fn program(&self, rows: &[usize]) -> LinearProgram<T> {
        let mut prog = LinearProgram::new(self.dims.num_params());
        for &i in rows {
            prog.add_le(SparseRow::from_dense(0, self.h_bar.row(i)), self.h_bar_vec[i]);
        }
        prog
    }

    /// `max dir·vec(M)` over the active rows, with a maximizer.
    pub fn support(&self, dir: &[T]) -> Result<(T, Vec<T>), DatasetError> {
        let mut prog = self.program(&self.active_rows());
        prog.set_objective_dense(&dir.iter().map(|&v| -v).collect::<Vec<_>>());
        let r = lp::solve(&prog, &LpOptions::default())?;
        match r.status {
            LpStatus::Optimal => Ok((-r.objective_value, r.x)),
            LpStatus::Infeasible => Err(DatasetError::Empty),
            LpStatus::Unbounded => Ok((T::infinity(), r.x)),
            LpStatus::IterationLimit => Err(DatasetError::Lp(LpError::NumericalBreakdown {
                reason: "iteration limit in support LP".into(),
            })),
        }
    }

    /// Some point of the set.
    pub fn feasible_point(&self) -> Result<Vec<T>, DatasetError> {
        let r = lp::solve(&self.program(&self.active_rows()), &LpOptions::default())?;
        match r.status {
            LpStatus::Optimal => Ok(r.x),
            _ => Err(DatasetError::Empty),
        }
    }

    fn row_redundant(&self, i: usize, among: &[usize], tol: T) -> Result<bool, DatasetError> {
        let others: Vec<usize> = among.iter().copied().filter(|&r| r != i).collect();
        let mut prog = self.program(&others);
        prog.set_objective_dense(&self.h_bar.row(i).iter().map(|&v| -v).collect::<Vec<_>>());
        let r = lp::solve(&prog, &LpOptions::default())?;
        Ok(match r.status {
            LpStatus::Optimal => -r.objective_value <= self.h_bar_vec[i] + tol,
            _ => false,
        })
    }
}

/// Drops rows implied by the remaining ones.
///
/// A parallel screen tests each row against all others; only rows that pass
/// are re-tested sequentially against the rows still retained, so that one
/// of two duplicates survives.
pub fn reduce_model_set<T: Scalar>(f: &FeasibleModelSet<T>, tol: T) -> Result<FeasibleModelSet<T>, DatasetError> {
    f.feasible_point()?;
    let all = f.active_rows();
    let screened: Vec<bool> = all
        .par_iter()
        .map(|&i| f.row_redundant(i, &all, tol))
        .collect::<Result<_, _>>()?;
    let mut retained = all.clone();
    for (&i, &candidate) in all.iter().zip(&screened) {
        if candidate && f.row_redundant(i, &retained, tol)? {
            retained.retain(|&r| r != i);
        }
    }
    log::debug!("model set reduced from {} to {} rows", all.len(), retained.len());
    let mut out = f.clone();
    out.reduced_rows = Some(retained);
    Ok(out)
}

fn header(n: usize, m: usize, s: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=n).map(|i| format!("x{i}")));
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=s).map(|i| format!("p{i}")));
    h
}

fn fmt_num<T: Scalar>(v: T) -> String {
    format!("{:.16e}", v.as_f64())
}

pub fn write_trajectory<T: Scalar, W: Write>(traj: &TrajectoryData<T>, out: W) -> Result<(), DatasetError> {
    let (n, m, s) = (traj.n(), traj.m(), traj.s());
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| DatasetError::Io(e.to_string());
    w.write_record(header(n, m, s)).map_err(io)?;
    for (t, x) in traj.states.iter().enumerate() {
        let mut rec = vec![t.to_string()];
        rec.extend(x.iter().map(|&v| fmt_num(v)));
        match (traj.inputs.get(t), traj.schedules.get(t)) {
            (Some(u), Some(p)) => {
                rec.extend(u.iter().map(|&v| fmt_num(v)));
                rec.extend(p.iter().map(|&v| fmt_num(v)));
            }
            _ => rec.extend(std::iter::repeat_n(String::new(), m + s)),
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| DatasetError::Io(e.to_string()))
}

pub fn read_trajectory<T: Scalar, R: Read>(input: R) -> Result<TrajectoryData<T>, DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let perr = |line: u64, message: String| DatasetError::ParseError { line, message };
    let hdr = rdr.headers().map_err(|e| perr(1, e.to_string()))?.clone();
    let names: Vec<&str> = hdr.iter().map(str::trim).collect();
    if names.first() != Some(&"t") {
        return Err(perr(1, "first column must be `t`".into()));
    }
    let count = |prefix: char| names.iter().filter(|h| h.starts_with(prefix)).count();
    let (n, m, s) = (count('x'), count('u'), count('p'));
    if names != header(n, m, s).iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(perr(
            1,
            format!("expected header t,x1..xn,u1..um,p1..ps, got {}", names.join(",")),
        ));
    }
    let mut states = Vec::new();
    let mut inputs = Vec::new();
    let mut schedules = Vec::new();
    let mut ended = false;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != 1 + n + m + s {
            return Err(perr(
                line,
                format!("expected {} fields, got {}", 1 + n + m + s, rec.len()),
            ));
        }
        if ended {
            return Err(DatasetError::LengthMismatch {
                states: states.len() + 1,
                inputs: inputs.len(),
                schedules: schedules.len(),
            });
        }
        let parse = |f: &str| -> Result<T, DatasetError> {
            f.trim()
                .parse::<f64>()
                .map(T::of)
                .map_err(|e| perr(line, format!("`{f}`: {e}")))
        };
        let fields: Vec<&str> = rec.iter().collect();
        states.push(fields[1..=n].iter().map(|f| parse(f)).collect::<Result<Vec<_>, _>>()?);
        let tail = &fields[1 + n..];
        if tail.iter().all(|f| f.trim().is_empty()) {
            ended = true;
            continue;
        }
        if tail.iter().any(|f| f.trim().is_empty()) {
            return Err(perr(line, "input/schedule fields partly empty".into()));
        }
        inputs.push(tail[..m].iter().map(|f| parse(f)).collect::<Result<Vec<_>, _>>()?);
        schedules.push(tail[m..].iter().map(|f| parse(f)).collect::<Result<Vec<_>, _>>()?);
    }
    if states.is_empty() {
        return Err(perr(1, "no samples after the header".into()));
    }
    TrajectoryData::new(states, inputs, schedules)
}

pub fn save_trajectory<T: Scalar>(traj: &TrajectoryData<T>, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let f = std::fs::File::create(path).map_err(|e| DatasetError::Io(e.to_string()))?;
    write_trajectory(traj, std::io::BufWriter::new(f))
}

pub fn load_trajectory<T: Scalar>(path: impl AsRef<Path>) -> Result<TrajectoryData<T>, DatasetError> {
    let f = std::fs::File::open(path).map_err(|e| DatasetError::Io(e.to_string()))?;
    read_trajectory(std::io::BufReader::new(f))
}
