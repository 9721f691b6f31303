//! Vertex-interpolation control and closed-loop simulation.

use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cc_template::TemplateSpec;
use crate::dataset::TrajectoryData;
use crate::linops::Matrix;
use crate::lp::{self, LinearProgram, LpOptions, LpStatus, SparseRow};
use crate::polytope::{enumerate_vertices, Polytope, PolytopeError, VertexOptions};
use crate::scalar::Scalar;
use crate::synthesis::RciSolution;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuntimeError {
    #[error("state lies outside the invariant set")]
    StateOutsideSet,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("unknown plant `{0}`")]
    UnknownPlant(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Lp(#[from] lp::LpError),
}

/// `x⁺ = Σ_j p_j (A^j x + B^j u) + w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PlantModel<T: Scalar> {
    a_blocks: Vec<Matrix<T>>,
    b_blocks: Vec<Matrix<T>>,
}

impl<T: Scalar> PlantModel<T> {
    pub fn new(a_blocks: Vec<Matrix<T>>, b_blocks: Vec<Matrix<T>>) -> Result<Self, RuntimeError> {
        if a_blocks.is_empty() || a_blocks.len() != b_blocks.len() {
            return Err(RuntimeError::Shape("need one A and one B per scheduling entry".into()));
        }
        let n = a_blocks[0].rows();
        let m = b_blocks[0].cols();
        if a_blocks.iter().any(|a| a.shape() != (n, n)) || b_blocks.iter().any(|b| b.shape() != (n, m)) {
            return Err(RuntimeError::Shape("inconsistent block shapes".into()));
        }
        Ok(Self { a_blocks, b_blocks })
    }

    pub fn n(&self) -> usize {
        self.a_blocks[0].rows()
    }

    pub fn m(&self) -> usize {
        self.b_blocks[0].cols()
    }

    pub fn s(&self) -> usize {
        self.a_blocks.len()
    }

    pub fn a_blocks(&self) -> &[Matrix<T>] {
        &self.a_blocks
    }

    pub fn b_blocks(&self) -> &[Matrix<T>] {
        &self.b_blocks
    }

    /// `M = [A¹ … Aˢ B¹ … Bˢ]`.
    pub fn model_matrix(&self) -> Matrix<T> {
        let mut out = self.a_blocks[0].clone();
        for a in &self.a_blocks[1..] {
            out = out.hstack(a);
        }
        for b in &self.b_blocks {
            out = out.hstack(b);
        }
        out
    }

    pub fn step(&self, x: &[T], u: &[T], p: &[T], w: &[T]) -> Vec<T> {
        let mut next = w.to_vec();
        for (j, &pj) in p.iter().enumerate() {
            let ax = self.a_blocks[j].mul_vec(x);
            let bu = self.b_blocks[j].mul_vec(u);
            for i in 0..next.len() {
                next[i] += pj * (ax[i] + bu[i]);
            }
        }
        next
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExamplePlant {
    DoubleIntegrator,
    VanDerPol,
}

impl FromStr for ExamplePlant {
    type Err = RuntimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "double-integrator" | "double_integrator" => Ok(Self::DoubleIntegrator),
            "van-der-pol" | "van_der_pol" => Ok(Self::VanDerPol),
            other => Err(RuntimeError::UnknownPlant(other.to_string())),
        }
    }
}

/// How `p_t` is produced.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulingLaw {
    /// Uniformly distributed convex weights over the scheduling vertices.
    RandomConvex,
    /// `p₁ = 1 − μ T_s (1 − x₁²)`, `p₂ = 1 − p₁`, clipped to the scheduling set.
    VanDerPol { mu: f64, ts: f64 },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceSampler {
    #[default]
    Uniform,
    /// A uniformly chosen vertex of `W`.
    VertexExtreme,
}

/// A plant together with the sets of its experiment.
#[derive(Clone, Debug)]
pub struct ExampleSetup<T: Scalar> {
    pub plant: PlantModel<T>,
    pub x_set: Polytope<T>,
    pub u_set: Polytope<T>,
    pub w_set: Polytope<T>,
    pub p_vertices: Vec<Vec<T>>,
    pub template: TemplateSpec,
    pub scheduling: SchedulingLaw,
}

pub fn build_example_plant<T: Scalar>(which: ExamplePlant) -> ExampleSetup<T> {
    let m = |rows: &[&[f64]]| {
        let r: Vec<Vec<T>> = rows.iter().map(|r| r.iter().map(|&v| T::of(v)).collect()).collect();
        Matrix::from_rows(&r).expect("literal matrix")
    };
    let v = |xs: &[f64]| xs.iter().map(|&x| T::of(x)).collect::<Vec<T>>();
    match which {
        ExamplePlant::DoubleIntegrator => ExampleSetup {
            plant: PlantModel::new(
                vec![m(&[&[1.25, 1.25], &[0.0, 1.25]]), m(&[&[0.75, 0.75], &[0.0, 0.75]])],
                vec![m(&[&[0.0], &[1.25]]), m(&[&[0.0], &[0.75]])],
            )
            .expect("literal plant"),
            x_set: Polytope::symmetric_box(&v(&[5.0, 5.0])),
            u_set: Polytope::symmetric_box(&v(&[1.0])),
            w_set: Polytope::symmetric_box(&v(&[0.25, 0.0])),
            p_vertices: vec![v(&[1.0, 0.0]), v(&[0.0, 1.0])],
            template: TemplateSpec::Circular { n_c: 50 },
            scheduling: SchedulingLaw::RandomConvex,
        },
        ExamplePlant::VanDerPol => {
            let (ts, mu) = (0.1, 2.0);
            ExampleSetup {
                plant: PlantModel::new(
                    vec![m(&[&[1.0, ts], &[-ts, 1.0]]), m(&[&[1.0, ts], &[-ts, 2.0]])],
                    vec![m(&[&[0.0], &[ts]]), m(&[&[0.0], &[ts]])],
                )
                .expect("literal plant"),
                x_set: Polytope::symmetric_box(&v(&[1.0, 1.0])),
                u_set: Polytope::symmetric_box(&v(&[1.0])),
                w_set: Polytope::symmetric_box(&v(&[1e-3, 1e-3])),
                p_vertices: vec![v(&[1.0, 0.0]), v(&[1.0 - mu * ts, mu * ts])],
                template: TemplateSpec::Circular { n_c: 30 },
                scheduling: SchedulingLaw::VanDerPol { mu, ts },
            }
        }
    }
}

/// Draws `p_t` and `w_t`.
pub struct Sampler<T: Scalar> {
    rng: ChaCha8Rng,
    scheduling: SchedulingLaw,
    p_vertices: Vec<Vec<T>>,
    disturbance: DisturbanceSampler,
    w_box: Option<(Vec<T>, Vec<T>)>,
    w_set: Polytope<T>,
    w_vertices: Vec<Vec<T>>,
    clips: usize,
}

#[derive(Clone, Debug)]
pub struct SamplerSpec<T: Scalar> {
    pub scheduling: SchedulingLaw,
    pub p_vertices: Vec<Vec<T>>,
    pub disturbance: DisturbanceSampler,
    pub w_set: Polytope<T>,
    pub seed: u64,
}

impl<T: Scalar> SamplerSpec<T> {
    pub fn for_example(setup: &ExampleSetup<T>, seed: u64) -> Self {
        Self {
            scheduling: setup.scheduling,
            p_vertices: setup.p_vertices.clone(),
            disturbance: DisturbanceSampler::Uniform,
            w_set: setup.w_set.clone(),
            seed,
        }
    }

    pub fn sampler(&self) -> Result<Sampler<T>, RuntimeError> {
        let w_vertices = match self.disturbance {
            DisturbanceSampler::VertexExtreme => enumerate_vertices(&self.w_set, &VertexOptions::default())?.points,
            DisturbanceSampler::Uniform => Vec::new(),
        };
        Ok(Sampler {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            scheduling: self.scheduling,
            p_vertices: self.p_vertices.clone(),
            disturbance: self.disturbance,
            w_box: self.w_set.box_bounds(),
            w_set: self.w_set.clone(),
            w_vertices,
            clips: 0,
        })
    }
}

/// Uniform point of the probability simplex with `k` entries.
fn simplex_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let e: Vec<f64> = (0..k).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

fn combine<T: Scalar>(vertices: &[Vec<T>], weights: &[f64]) -> Vec<T> {
    let mut p = vec![T::zero(); vertices[0].len()];
    for (v, &a) in vertices.iter().zip(weights) {
        for (pi, &vi) in p.iter_mut().zip(v) {
            *pi += T::of(a) * vi;
        }
    }
    p
}

/// Nearest point of `ConvHull(vertices)` (Euclidean on segments, `ℓ₁` otherwise).
pub fn project_to_hull<T: Scalar>(vertices: &[Vec<T>], p: &[T]) -> Vec<T> {
    if vertices.len() == 1 {
        return vertices[0].clone();
    }
    if vertices.len() == 2 {
        let (a, b) = (&vertices[0], &vertices[1]);
        let ab: Vec<T> = b.iter().zip(a).map(|(&x, &y)| x - y).collect();
        let ap: Vec<T> = p.iter().zip(a).map(|(&x, &y)| x - y).collect();
        let den = crate::linops::dot(&ab, &ab);
        let t = if den > T::zero() {
            (crate::linops::dot(&ap, &ab) / den).max(T::zero()).min(T::one())
        } else {
            T::zero()
        };
        return a.iter().zip(&ab).map(|(&x, &d)| x + t * d).collect();
    }
    let k = vertices.len();
    let s = p.len();
    let mut prog = LinearProgram::new(k + s);
    for j in 0..k {
        prog.set_bounds(j, T::zero(), T::one());
    }
    prog.add_eq(SparseRow::from_dense(0, &vec![T::one(); k]), T::one());
    for i in 0..s {
        prog.set_bounds(k + i, T::zero(), T::infinity());
        prog.set_objective(k + i, T::one());
        let mut row = SparseRow::from_entries(vertices.iter().enumerate().map(|(j, v)| (j, v[i])).collect());
        row.push(k + i, -T::one());
        prog.add_le(row.clone(), p[i]);
        let mut neg = row.negated();
        neg.entries.last_mut().expect("slack entry").1 = -T::one();
        prog.add_le(neg, -p[i]);
    }
    match lp::solve(&prog, &LpOptions::default()) {
        Ok(r) if r.is_optimal() => {
            let w: Vec<f64> = r.x[..k].iter().map(|v| v.as_f64()).collect();
            combine(vertices, &w)
        }
        _ => vertices[0].clone(),
    }
}

impl<T: Scalar> Sampler<T> {
    pub fn schedule(&mut self, x: &[T]) -> Vec<T> {
        match self.scheduling {
            SchedulingLaw::RandomConvex => {
                let w = simplex_weights(&mut self.rng, self.p_vertices.len());
                combine(&self.p_vertices, &w)
            }
            SchedulingLaw::VanDerPol { mu, ts } => {
                let x1 = x[0].as_f64();
                let p1 = 1.0 - mu * ts * (1.0 - x1 * x1);
                let raw = vec![T::of(p1), T::of(1.0 - p1)];
                let inside = crate::dataset::in_convex_hull(&self.p_vertices, &raw, T::of(1e-12)).unwrap_or(false);
                if inside {
                    raw
                } else {
                    self.clips += 1;
                    log::debug!("scheduling sample p1 = {p1} clipped to the scheduling set");
                    project_to_hull(&self.p_vertices, &raw)
                }
            }
        }
    }

    pub fn disturbance(&mut self) -> Vec<T> {
        match self.disturbance {
            DisturbanceSampler::VertexExtreme => {
                let i = self.rng.gen_range(0..self.w_vertices.len());
                self.w_vertices[i].clone()
            }
            DisturbanceSampler::Uniform => match &self.w_box {
                Some((lo, hi)) => lo.iter().zip(hi).map(|(&l, &h)| uniform(&mut self.rng, l, h)).collect(),
                None => self.rejection_sample(),
            },
        }
    }

    fn rejection_sample(&mut self) -> Vec<T> {
        let n = self.w_set.dim();
        let bounds: Vec<(T, T)> = (0..n)
            .map(|j| {
                let mut e = vec![T::zero(); n];
                e[j] = T::one();
                let hi = self.w_set.support(&e).unwrap_or(T::zero());
                e[j] = -T::one();
                let lo = -self.w_set.support(&e).unwrap_or(T::zero());
                (lo, hi)
            })
            .collect();
        loop {
            let w: Vec<T> = bounds.iter().map(|&(l, h)| uniform(&mut self.rng, l, h)).collect();
            if self.w_set.contains(&w, T::zero()) {
                return w;
            }
        }
    }

    pub fn input(&mut self, lo: T, hi: T) -> T {
        uniform(&mut self.rng, lo, hi)
    }

    /// Number of scheduling samples moved back into the scheduling set.
    pub fn clips(&self) -> usize {
        self.clips
    }
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, lo: T, hi: T) -> T {
    let (l, h) = (lo.as_f64(), hi.as_f64());
    T::of(if h > l { rng.gen_range(l..=h) } else { l })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerMode {
    /// `Σ λ_i x^i = x`, `Σ λ_i = 1`, `0 ≤ λ ≤ 1`.
    #[default]
    Convex,
    /// `min Σ λ_i` s.t. `Σ λ_i x^i = x`, `0 ≤ λ ≤ 1`.
    Unnormalized,
}

/// Interpolates the vertex inputs at `x`; returns `(u, λ)`.
pub fn vertex_controller<T: Scalar>(
    x: &[T],
    sol: &RciSolution<T>,
    mode: ControllerMode,
) -> Result<(Vec<T>, Vec<T>), RuntimeError> {
    let v = sol.vertex_states.len();
    let n = x.len();
    if v == 0 || sol.vertex_states[0].len() != n {
        return Err(RuntimeError::Shape("state dimension differs from the solution".into()));
    }
    let scale = T::one() + crate::linops::norm_inf(x);
    let tol = T::of(1e-7) * scale;
    let mut prog = LinearProgram::new(v);
    for i in 0..v {
        prog.set_bounds(i, T::zero(), T::one());
    }
    for a in 0..n {
        let row = SparseRow::from_entries((0..v).map(|i| (i, sol.vertex_states[i][a])).collect());
        prog.add_le(row.clone(), x[a] + tol);
        prog.add_ge(row, x[a] - tol);
    }
    match mode {
        ControllerMode::Convex => {
            prog.add_eq(SparseRow::from_dense(0, &vec![T::one(); v]), T::one());
        }
        ControllerMode::Unnormalized => prog.set_objective_dense(&vec![T::one(); v]),
    }
    let r = lp::solve(&prog, &LpOptions::default())?;
    if r.status != LpStatus::Optimal {
        return Err(RuntimeError::StateOutsideSet);
    }
    let lambda: Vec<T> = r.x.iter().map(|&l| l.max(T::zero())).collect();
    let m = sol.vertex_inputs.first().map_or(0, Vec::len);
    let mut u = vec![T::zero(); m];
    for (l, ui) in lambda.iter().zip(&sol.vertex_inputs) {
        for (ua, &va) in u.iter_mut().zip(ui) {
            *ua += *l * va;
        }
    }
    Ok((u, lambda))
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ClosedLoopTrace<T> {
    pub states: Vec<Vec<T>>,
    pub inputs: Vec<Vec<T>>,
    pub schedules: Vec<Vec<T>>,
    pub disturbances: Vec<Vec<T>>,
    /// Per state `x_t ∉ S(q)`.
    pub state_violations: Vec<bool>,
    /// Per input `u_t ∉ U`.
    pub input_violations: Vec<bool>,
    /// Per step: the controller found no interpolation and applied `u = 0`.
    pub controller_failures: Vec<bool>,
}

impl<T: Scalar> ClosedLoopTrace<T> {
    pub fn violations(&self) -> usize {
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        count(&self.state_violations) + count(&self.input_violations) + count(&self.controller_failures)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), RuntimeError> {
        let io = |e: csv::Error| RuntimeError::Io(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, Vec::len);
        let m = self.inputs.first().map_or(0, Vec::len);
        let s = self.schedules.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        header.extend((1..=s).map(|i| format!("p{i}")));
        header.extend((1..=n).map(|i| format!("w{i}")));
        header.extend(["state_violation", "input_violation", "controller_failure"].map(String::from));
        w.write_record(&header).map_err(io)?;
        let f = |v: &T| format!("{:.16e}", v.as_f64());
        for t in 0..self.states.len() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.states[t].iter().map(f));
            let step = t < self.inputs.len();
            let pad = |v: Option<&Vec<T>>, k: usize| match v {
                Some(v) => v.iter().map(f).collect::<Vec<_>>(),
                None => vec![String::new(); k],
            };
            rec.extend(pad(self.inputs.get(t), m));
            rec.extend(pad(self.schedules.get(t), s));
            rec.extend(pad(self.disturbances.get(t), n));
            let flag = |v: &[bool]| v.get(t).map_or(String::new(), |&b| u8::from(b).to_string());
            rec.push(flag(&self.state_violations));
            rec.push(if step {
                flag(&self.input_violations)
            } else {
                String::new()
            });
            rec.push(if step {
                flag(&self.controller_failures)
            } else {
                String::new()
            });
            w.write_record(&rec).map_err(io)?;
        }
        w.flush().map_err(|e| RuntimeError::Io(e.to_string()))
    }
}

/// Tolerance for the membership flags of a trace.
pub const VIOLATION_TOL: f64 = 1e-6;

pub fn simulate_closed_loop<T: Scalar>(
    plant: &PlantModel<T>,
    sol: &RciSolution<T>,
    u_set: &Polytope<T>,
    x0: &[T],
    steps: usize,
    sampler: &SamplerSpec<T>,
    mode: ControllerMode,
) -> Result<ClosedLoopTrace<T>, RuntimeError> {
    let tol = T::of(VIOLATION_TOL);
    let mut smp = sampler.sampler()?;
    let mut tr = ClosedLoopTrace::default();
    let mut x = x0.to_vec();
    tr.state_violations.push(!sol.contains(&x, tol));
    tr.states.push(x.clone());
    for _ in 0..steps {
        let p = smp.schedule(&x);
        let (u, failed) = match vertex_controller(&x, sol, mode) {
            Ok((u, _)) => (u, false),
            Err(RuntimeError::StateOutsideSet) => (vec![T::zero(); plant.m()], true),
            Err(e) => return Err(e),
        };
        let w = smp.disturbance();
        tr.input_violations.push(!u_set.contains(&u, tol));
        tr.controller_failures.push(failed);
        x = plant.step(&x, &u, &p, &w);
        tr.state_violations.push(!sol.contains(&x, tol));
        tr.states.push(x.clone());
        tr.inputs.push(u);
        tr.schedules.push(p);
        tr.disturbances.push(w);
    }
    Ok(tr)
}

/// `runs` closed-loop simulations, run `r` starting from vertex `r mod v_s`
/// with seed `seed + r`.
pub fn simulate_from_vertices<T: Scalar>(
    plant: &PlantModel<T>,
    sol: &RciSolution<T>,
    u_set: &Polytope<T>,
    runs: usize,
    steps: usize,
    sampler: &SamplerSpec<T>,
    mode: ControllerMode,
) -> Result<Vec<ClosedLoopTrace<T>>, RuntimeError> {
    let v = sol.vertex_states.len();
    (0..runs)
        .into_par_iter()
        .map(|r| {
            let spec = SamplerSpec {
                seed: sampler.seed.wrapping_add(r as u64),
                ..sampler.clone()
            };
            simulate_closed_loop(plant, sol, u_set, &sol.vertex_states[r % v], steps, &spec, mode)
        })
        .collect()
}

/// Open-loop experiment with inputs uniform in `input_range` and `x_0`
/// uniform in the bounding box of `X`.
pub fn generate_experiment_data<T: Scalar>(
    setup: &ExampleSetup<T>,
    t_len: usize,
    input_range: (f64, f64),
    seed: u64,
) -> Result<TrajectoryData<T>, RuntimeError> {
    let spec = SamplerSpec::for_example(setup, seed);
    let mut smp = spec.sampler()?;
    let n = setup.plant.n();
    let x_box: Vec<(T, T)> = (0..n)
        .map(|j| {
            let mut e = vec![T::zero(); n];
            e[j] = T::one();
            let hi = setup.x_set.support(&e)?;
            e[j] = -T::one();
            Ok((-setup.x_set.support(&e)?, hi))
        })
        .collect::<Result<_, PolytopeError>>()?;
    let x0: Vec<T> = x_box.iter().map(|&(l, h)| smp.input(l, h)).collect();
    let (ulo, uhi) = (T::of(input_range.0), T::of(input_range.1));
    let mut states = vec![x0];
    let mut inputs = Vec::with_capacity(t_len);
    let mut schedules = Vec::with_capacity(t_len);
    for _ in 0..t_len {
        let x = states.last().expect("nonempty").clone();
        let u: Vec<T> = (0..setup.plant.m()).map(|_| smp.input(ulo, uhi)).collect();
        let p = smp.schedule(&x);
        let w = smp.disturbance();
        states.push(setup.plant.step(&x, &u, &p, &w));
        inputs.push(u);
        schedules.push(p);
    }
    if smp.clips() > 0 {
        log::info!("{} scheduling samples clipped to the scheduling set", smp.clips());
    }
    TrajectoryData::new(states, inputs, schedules).map_err(|e| RuntimeError::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linops::Matrix;
    use crate::synthesis::Diagnostics;

    fn square_solution() -> RciSolution<f64> {
        let c = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]]).unwrap();
        RciSolution {
            facets: c,
            q: vec![1.0; 4],
            vertex_states: vec![vec![1.0, 1.0], vec![1.0, -1.0], vec![-1.0, 1.0], vec![-1.0, -1.0]],
            vertex_inputs: vec![vec![-0.5], vec![0.25], vec![0.5], vec![1.0]],
            tightening: vec![0.0; 4],
            epsilon: vec![],
            objective: 0.0,
            volume: Some(4.0),
            model_rows: vec![],
            multipliers: vec![],
            diagnostics: Diagnostics::default(),
        }
    }

    #[test]
    fn vertex_is_its_own_combination() {
        let sol = square_solution();
        let (u, l) = vertex_controller(&[1.0, 1.0], &sol, ControllerMode::Convex).unwrap();
        assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!((u[0] + 0.5).abs() < 1e-7);
    }

    #[test]
    fn centre_interpolates() {
        let sol = square_solution();
        for mode in [ControllerMode::Convex, ControllerMode::Unnormalized] {
            let (u, l) = vertex_controller(&[0.0, 0.0], &sol, mode).unwrap();
            let mut x = [0.0f64; 2];
            for (li, v) in l.iter().zip(&sol.vertex_states) {
                x[0] += li * v[0];
                x[1] += li * v[1];
            }
            assert!(x[0].abs() < 2e-7 && x[1].abs() < 2e-7);
            if mode == ControllerMode::Convex {
                assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!((-0.5..=1.0).contains(&u[0]));
            }
        }
    }

    #[test]
    fn outside_rejected() {
        let sol = square_solution();
        assert_eq!(
            vertex_controller(&[1.5, 0.0], &sol, ControllerMode::Convex),
            Err(RuntimeError::StateOutsideSet)
        );
    }

    #[test]
    fn example_matrices() {
        let di = build_example_plant::<f64>(ExamplePlant::DoubleIntegrator);
        assert_eq!(di.plant.b_blocks()[0], Matrix::column(&[0.0, 1.25]));
        assert_eq!(di.plant.b_blocks()[1], Matrix::column(&[0.0, 0.75]));
        assert_eq!(di.plant.model_matrix().shape(), (2, 6));
        let vdp = build_example_plant::<f64>(ExamplePlant::VanDerPol);
        assert!((vdp.p_vertices[1][0] - 0.8).abs() < 1e-15 && (vdp.p_vertices[1][1] - 0.2).abs() < 1e-15);
        assert_eq!(vdp.w_set.box_bounds().unwrap().1, vec![1e-3, 1e-3]);
    }

    #[test]
    fn plant_step_is_scheduled_combination() {
        let di = build_example_plant::<f64>(ExamplePlant::DoubleIntegrator);
        let x = di.plant.step(&[1.0, 2.0], &[1.0], &[0.5, 0.5], &[0.1, 0.0]);
        assert!((x[0] - 3.1).abs() < 1e-12 && (x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn data_generation_is_reproducible() {
        let di = build_example_plant::<f64>(ExamplePlant::DoubleIntegrator);
        let a = generate_experiment_data(&di, 20, (-1.0, 1.0), 9).unwrap();
        let b = generate_experiment_data(&di, 20, (-1.0, 1.0), 9).unwrap();
        assert_eq!(a, b);
        assert!(a.validate_schedules(&di.p_vertices, 1e-9).is_ok());
    }

    #[test]
    fn van_der_pol_schedules_stay_in_set() {
        let vdp = build_example_plant::<f64>(ExamplePlant::VanDerPol);
        let d = generate_experiment_data(&vdp, 100, (-1.0, 1.0), 4).unwrap();
        assert!(d.validate_schedules(&vdp.p_vertices, 1e-9).is_ok());
    }

    #[test]
    fn segment_projection() {
        let v: Vec<Vec<f64>> = vec![vec![1.0, 0.0], vec![0.8, 0.2]];
        let p = project_to_hull(&v, &[1.1, -0.1]);
        assert!((p[0] - 1.0).abs() < 1e-12 && p[1].abs() < 1e-12);
        let p = project_to_hull(&v, &[0.5, 0.5]);
        assert!((p[0] - 0.8).abs() < 1e-12);
    }
}
