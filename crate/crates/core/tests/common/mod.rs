//! Brute-force oracle for the robust-inequality / multiplier equivalence.

use ddrci::cc_template::{build_cc_machinery, CcTemplate};
use ddrci::dataset::{build_data_matrices, build_feasible_model_set, regressor, FeasibleModelSet, TrajectoryData};
use ddrci::linops::{unvec, Matrix};
use ddrci::lp::{self, LinearProgram, LpOptions, LpStatus};
use ddrci::polytope::{enumerate_vertices, Polytope, VertexOptions};
use ddrci::runtime::PlantModel;
use ddrci::synthesis::{assemble_invariance_constraints, SynthesisProblem, VarLayout};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct DualityCase {
    /// Multipliers exist for the pinned `q` and vertex inputs.
    pub multipliers_exist: bool,
    /// `min (q_k − d_k − max_M C_k M z)` over vertex pairs and facets, the
    /// maximum taken over the enumerated vertices of the model polytope.
    pub vertex_margin: f64,
}

pub fn interval_template() -> CcTemplate<f64> {
    build_cc_machinery(&Matrix::from_rows(&[[1.0], [-1.0]]).unwrap(), &[1.0, 1.0]).unwrap()
}

fn certificate_feasible(prob: &SynthesisProblem<f64>, f: &FeasibleModelSet<f64>, q: &[f64], u: &[f64]) -> bool {
    let layout = VarLayout::for_problem(prob, f.active_rows().len());
    let d = prob.tightening().unwrap();
    let block = assemble_invariance_constraints(&prob.template, f, &prob.p_vertices, &d, &layout).unwrap();
    let mut lp = LinearProgram::new(layout.total_len());
    for (k, &qk) in q.iter().enumerate() {
        lp.set_bounds(layout.q(k), qk, qk);
    }
    for (i, &ui) in u.iter().enumerate() {
        lp.set_bounds(layout.u(i, 0), ui, ui);
    }
    for v in layout.base_len()..layout.total_len() {
        lp.set_bounds(v, 0.0, f64::INFINITY);
    }
    for (row, rhs) in block.inequalities {
        lp.add_le(row, rhs);
    }
    for (row, rhs) in block.equalities {
        lp.add_eq(row, rhs);
    }
    match lp::solve(&lp, &LpOptions::default()).unwrap().status {
        LpStatus::Optimal => true,
        LpStatus::Infeasible => false,
        s => panic!("unexpected status {s:?}"),
    }
}

/// Random scalar LPV instance with two scheduling vertices and six samples.
/// `None` when the model set is unbounded or the margin is too close to zero
/// to decide.
pub fn duality_case(seed: u64) -> Option<DualityCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coeffs: Vec<f64> = (0..4).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let scalar = |v: f64| Matrix::from_rows(&[[v]]).unwrap();
    let plant = PlantModel::new(
        vec![scalar(coeffs[0]), scalar(coeffs[1])],
        vec![scalar(coeffs[2]), scalar(coeffs[3])],
    )
    .unwrap();
    let mut states = vec![vec![rng.gen_range(-5.0..5.0)]];
    let (mut inputs, mut schedules) = (Vec::new(), Vec::new());
    for _ in 0..6 {
        let a: f64 = rng.gen_range(0.0..1.0);
        let p = vec![a, 1.0 - a];
        let u = vec![rng.gen_range(-5.0..5.0)];
        let w = vec![rng.gen_range(-0.1..0.1)];
        states.push(plant.step(states.last().unwrap(), &u, &p, &w));
        inputs.push(u);
        schedules.push(p);
    }
    let traj = TrajectoryData::new(states, inputs, schedules).unwrap();
    let w_set = Polytope::symmetric_box(&[0.1]);
    let f = build_feasible_model_set(&build_data_matrices(&traj).unwrap(), &w_set).unwrap();
    assert_eq!(f.h_bar().rows(), 12);
    let poly = Polytope::new(f.h_bar().clone(), f.h_bar_vec().to_vec()).unwrap();
    let models = enumerate_vertices(&poly, &VertexOptions::default()).ok()?;
    let prob = SynthesisProblem::new(
        interval_template(),
        Polytope::symmetric_box(&[10.0]),
        Polytope::symmetric_box(&[1.0]),
        w_set,
        vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        Some(f.clone()),
        None,
    )
    .unwrap();
    let q = [rng.gen_range(0.2..3.0), rng.gen_range(0.2..3.0)];
    let u = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
    let d = prob.tightening().unwrap();
    let c = prob.template.c();
    let mut margin = f64::INFINITY;
    for (i, &ui) in u.iter().enumerate() {
        let x = prob.template.vertex(i, &q);
        for p in &prob.p_vertices {
            let z = regressor(p, &x, &[ui]);
            for k in 0..2 {
                let worst = models
                    .iter()
                    .map(|v| c[(k, 0)] * unvec(v, 1, 4).mul_vec(&z)[0])
                    .fold(f64::NEG_INFINITY, f64::max);
                margin = margin.min(q[k] - d[k] - worst);
            }
        }
    }
    if margin.abs() < 1e-5 {
        return None;
    }
    Some(DualityCase {
        multipliers_exist: certificate_feasible(&prob, &f, &q, &u),
        vertex_margin: margin,
    })
}
