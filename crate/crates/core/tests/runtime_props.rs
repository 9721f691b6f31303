use std::sync::OnceLock;

use ddrci::dataset::{build_data_matrices, build_feasible_model_set, reduce_model_set};
use ddrci::runtime::{
    build_example_plant, generate_experiment_data, project_to_hull, simulate_closed_loop, simulate_from_vertices,
    vertex_controller, ControllerMode, DisturbanceSampler, ExamplePlant, ExampleSetup, SamplerSpec, SchedulingLaw,
    VIOLATION_TOL,
};
use ddrci::synthesis::{synthesize, RciSolution, SynthesisOptions, SynthesisProblem};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    setup: ExampleSetup<f64>,
    sol: RciSolution<f64>,
}

fn fixture(which: ExamplePlant) -> &'static Fixture {
    static DI: OnceLock<Fixture> = OnceLock::new();
    static VDP: OnceLock<Fixture> = OnceLock::new();
    let cell = match which {
        ExamplePlant::DoubleIntegrator => &DI,
        ExamplePlant::VanDerPol => &VDP,
    };
    cell.get_or_init(|| {
        let setup = build_example_plant::<f64>(which);
        let traj = generate_experiment_data(&setup, 100, (-1.0, 1.0), 1).unwrap();
        let f = build_feasible_model_set(&build_data_matrices(&traj).unwrap(), &setup.w_set).unwrap();
        let f = reduce_model_set(&f, 1e-9).unwrap();
        let prob = SynthesisProblem::new(
            setup.template.build().unwrap(),
            setup.x_set.clone(),
            setup.u_set.clone(),
            setup.w_set.clone(),
            setup.p_vertices.clone(),
            Some(f),
            None,
        )
        .unwrap();
        let sol = synthesize(&prob, &SynthesisOptions::default()).unwrap();
        Fixture { setup, sol }
    })
}

fn sample_inside(sol: &RciSolution<f64>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = sol.vertex_states[0].len();
    let lo: Vec<f64> = (0..n)
        .map(|a| sol.vertex_states.iter().map(|v| v[a]).fold(f64::INFINITY, f64::min))
        .collect();
    let hi: Vec<f64> = (0..n)
        .map(|a| sol.vertex_states.iter().map(|v| v[a]).fold(f64::NEG_INFINITY, f64::max))
        .collect();
    loop {
        let x: Vec<f64> = (0..n).map(|a| rng.gen_range(lo[a]..=hi[a])).collect();
        if sol.contains(&x, 0.0) {
            return x;
        }
    }
}

fn random_schedule(vertices: &[Vec<f64>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let a: f64 = rng.gen_range(0.0..=1.0);
    (0..vertices[0].len())
        .map(|j| a * vertices[0][j] + (1.0 - a) * vertices[1][j])
        .collect()
}

#[test]
fn controller_interpolates_inside_the_set() {
    for which in [ExamplePlant::DoubleIntegrator, ExamplePlant::VanDerPol] {
        let fx = fixture(which);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..500 {
            let x = sample_inside(&fx.sol, &mut rng);
            for mode in [ControllerMode::Convex, ControllerMode::Unnormalized] {
                let (u, lambda) = vertex_controller(&x, &fx.sol, mode).unwrap();
                assert!(lambda.iter().all(|&l| (-1e-12..=1.0 + 1e-9).contains(&l)));
                if mode == ControllerMode::Convex {
                    assert!((lambda.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                }
                for a in 0..x.len() {
                    let rec: f64 = lambda.iter().zip(&fx.sol.vertex_states).map(|(l, v)| l * v[a]).sum();
                    assert!((rec - x[a]).abs() <= 1e-6, "{rec} vs {}", x[a]);
                }
                if mode == ControllerMode::Convex {
                    assert!(fx.setup.u_set.contains(&u, 1e-9), "u = {u:?}");
                }
            }
        }
    }
}

#[test]
fn controller_rejects_states_outside() {
    let fx = fixture(ExamplePlant::VanDerPol);
    assert!(vertex_controller(&[5.0, 5.0], &fx.sol, ControllerMode::Convex).is_err());
}

#[test]
fn one_step_invariance_under_true_plant() {
    for which in [ExamplePlant::DoubleIntegrator, ExamplePlant::VanDerPol] {
        let fx = fixture(which);
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let w_box = fx.setup.w_set.box_bounds().unwrap();
        for _ in 0..500 {
            let x = sample_inside(&fx.sol, &mut rng);
            let p = random_schedule(&fx.setup.p_vertices, &mut rng);
            let w: Vec<f64> = w_box
                .0
                .iter()
                .zip(&w_box.1)
                .map(|(&l, &h)| if h > l { rng.gen_range(l..=h) } else { l })
                .collect();
            let (u, _) = vertex_controller(&x, &fx.sol, ControllerMode::Convex).unwrap();
            let next = fx.setup.plant.step(&x, &u, &p, &w);
            assert!(fx.sol.contains(&next, VIOLATION_TOL), "{which:?}: {x:?} -> {next:?}");
        }
    }
}

#[test]
fn traces_replay_through_the_plant() {
    let fx = fixture(ExamplePlant::VanDerPol);
    let spec = SamplerSpec::for_example(&fx.setup, 4);
    let x0 = fx.sol.vertex_states[3].clone();
    let tr = simulate_closed_loop(
        &fx.setup.plant,
        &fx.sol,
        &fx.setup.u_set,
        &x0,
        150,
        &spec,
        ControllerMode::Convex,
    )
    .unwrap();
    assert_eq!(tr.states.len(), 151);
    assert_eq!(tr.inputs.len(), 150);
    assert_eq!(tr.state_violations.len(), 151);
    for t in 0..150 {
        let next = fx
            .setup
            .plant
            .step(&tr.states[t], &tr.inputs[t], &tr.schedules[t], &tr.disturbances[t]);
        assert_eq!(next, tr.states[t + 1]);
        assert_eq!(
            tr.state_violations[t + 1],
            !fx.sol.contains(&tr.states[t + 1], VIOLATION_TOL)
        );
        assert!(fx.setup.w_set.contains(&tr.disturbances[t], 1e-12));
        let p = &tr.schedules[t];
        assert!(p.iter().all(|&v| v >= -1e-12) && (p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }
    assert_eq!(tr.violations(), 0);

    let mut buf = Vec::new();
    tr.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 152);
    assert!(text.starts_with("t,x1,x2,u1,p1,p2,w1,w2,state_violation,input_violation,controller_failure\n"));
}

#[test]
fn vertex_runs_stay_inside_and_are_reproducible() {
    for which in [ExamplePlant::DoubleIntegrator, ExamplePlant::VanDerPol] {
        let fx = fixture(which);
        for disturbance in [DisturbanceSampler::Uniform, DisturbanceSampler::VertexExtreme] {
            let spec = SamplerSpec {
                disturbance,
                ..SamplerSpec::for_example(&fx.setup, 7)
            };
            let a = simulate_from_vertices(
                &fx.setup.plant,
                &fx.sol,
                &fx.setup.u_set,
                6,
                100,
                &spec,
                ControllerMode::Convex,
            )
            .unwrap();
            let b = simulate_from_vertices(
                &fx.setup.plant,
                &fx.sol,
                &fx.setup.u_set,
                6,
                100,
                &spec,
                ControllerMode::Convex,
            )
            .unwrap();
            assert_eq!(a, b);
            for (r, tr) in a.iter().enumerate() {
                assert_eq!(tr.states[0], fx.sol.vertex_states[r % fx.sol.vertex_states.len()]);
                assert_eq!(tr.violations(), 0, "{which:?} {disturbance:?} run {r}");
            }
        }
    }
}

#[test]
fn van_der_pol_schedule_stays_on_its_segment() {
    let setup = build_example_plant::<f64>(ExamplePlant::VanDerPol);
    assert!(matches!(setup.scheduling, SchedulingLaw::VanDerPol { .. }));
    let mut smp = SamplerSpec::for_example(&setup, 1).sampler().unwrap();
    for x1 in [-3.0, -1.0, -0.5, 0.0, 0.5, 1.0, 3.0] {
        let p = smp.schedule(&[x1, 0.0]);
        let back = project_to_hull(&setup.p_vertices, &p);
        assert!(
            (p[0] - back[0]).abs() <= 1e-12 && (p[1] - back[1]).abs() <= 1e-12,
            "x1 = {x1}: {p:?}"
        );
    }
    let p = smp.schedule(&[0.5, 0.0]);
    assert!((p[0] - (1.0 - 0.2 * 0.75)).abs() <= 1e-12);
    assert!(smp.clips() >= 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hull_projection_is_idempotent(a in 0.0..1.0f64, b in 0.0..1.0f64, px in -2.0..2.0f64, py in -2.0..2.0f64) {
        let verts = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        let inside = vec![a * (1.0 - b), b * (1.0 - a)];
        let q = project_to_hull(&verts, &inside);
        prop_assert!((q[0] - inside[0]).abs() <= 1e-9 && (q[1] - inside[1]).abs() <= 1e-9);
        let q = project_to_hull(&verts, &[px, py]);
        prop_assert!(q[0] >= -1e-9 && q[1] >= -1e-9 && q[0] + q[1] <= 1.0 + 1e-9);
        let again = project_to_hull(&verts, &q);
        prop_assert!((again[0] - q[0]).abs() <= 1e-9 && (again[1] - q[1]).abs() <= 1e-9);
    }

    #[test]
    fn plant_step_is_affine_in_the_disturbance(x1 in -1.0..1.0f64, x2 in -1.0..1.0f64, u in -1.0..1.0f64, a in 0.0..1.0f64, w1 in -1e-3..1e-3f64) {
        let setup = build_example_plant::<f64>(ExamplePlant::VanDerPol);
        let p = vec![a, 1.0 - a];
        let base = setup.plant.step(&[x1, x2], &[u], &p, &[0.0, 0.0]);
        let moved = setup.plant.step(&[x1, x2], &[u], &p, &[w1, 0.0]);
        prop_assert!((moved[0] - base[0] - w1).abs() <= 1e-15 && moved[1] == base[1]);
    }
}
