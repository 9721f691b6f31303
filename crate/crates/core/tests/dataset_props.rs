use ddrci::dataset::{
    build_data_matrices, build_feasible_model_set, excitation_check, read_trajectory, reduce_model_set, regressor,
    write_trajectory, FeasibleModelSet, TrajectoryData,
};
use ddrci::linops::{unvec, vec, Matrix};
use ddrci::polytope::Polytope;
use ddrci::runtime::{build_example_plant, generate_experiment_data, ExamplePlant, ExampleSetup};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(vdp: bool) -> ExampleSetup<f64> {
    build_example_plant(if vdp {
        ExamplePlant::VanDerPol
    } else {
        ExamplePlant::DoubleIntegrator
    })
}

fn model_set(traj: &TrajectoryData<f64>, w: &Polytope<f64>) -> FeasibleModelSet<f64> {
    build_feasible_model_set(&build_data_matrices(traj).unwrap(), w).unwrap()
}

fn random_dir(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn feasible_models_explain_every_sample(vdp in any::<bool>(), t in 8usize..40, seed in 0u64..1000) {
        let s = setup(vdp);
        let traj = generate_experiment_data(&s, t, (-1.0, 1.0), seed).unwrap();
        let f = model_set(&traj, &s.w_set);
        let (n, m, ns) = (traj.n(), traj.m(), traj.s());
        prop_assert!(f.contains_matrix(&s.plant.model_matrix(), 1e-9));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..5 {
            let (val, x) = f.support(&random_dir(&mut rng, f.dims().num_params())).unwrap();
            prop_assert!(val.is_finite() || !excitation_check(&build_data_matrices(&traj).unwrap(), &Matrix::identity(n), 1e-9));
            if !val.is_finite() {
                continue;
            }
            let mm = unvec(&x, n, (n + m) * ns);
            for k in 0..t {
                let z = regressor(&traj.schedules()[k], &traj.states()[k], &traj.inputs()[k]);
                let pred = mm.mul_vec(&z);
                let w: Vec<f64> = traj.states()[k + 1].iter().zip(&pred).map(|(a, b)| a - b).collect();
                prop_assert!(s.w_set.contains(&w, 1e-7), "residual {:?} outside W at t = {}", w, k);
            }
        }
    }

    #[test]
    fn model_set_shrinks_with_data(vdp in any::<bool>(), t in 10usize..30, seed in 0u64..1000) {
        let s = setup(vdp);
        let traj = generate_experiment_data(&s, t + 1, (-1.0, 1.0), seed).unwrap();
        let short = model_set(&traj.prefix(t), &s.w_set);
        let long = model_set(&traj, &s.w_set);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        for _ in 0..8 {
            let d = random_dir(&mut rng, short.dims().num_params());
            let (a, _) = short.support(&d).unwrap();
            let (b, _) = long.support(&d).unwrap();
            prop_assert!(b <= a + 1e-7 * (1.0 + a.abs()), "{} > {}", b, a);
        }
    }

    #[test]
    fn vectorized_and_matrix_membership_agree(vdp in any::<bool>(), t in 5usize..20, seed in 0u64..1000, scale in 0.0..0.2f64) {
        let s = setup(vdp);
        let traj = generate_experiment_data(&s, t, (-1.0, 1.0), seed).unwrap();
        let dm = build_data_matrices(&traj).unwrap();
        let f = build_feasible_model_set(&dm, &s.w_set).unwrap();
        let (hw, hw_vec) = s.w_set.as_symmetric(0.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m0 = s.plant.model_matrix();
        let mm = Matrix::from_fn(m0.rows(), m0.cols(), |i, j| m0[(i, j)] + scale * rng.gen_range(-1.0..1.0));
        let resid = dm.x_plus.sub(&mm.matmul(&dm.x_pu));
        let hr = hw.matmul(&resid);
        let margin = (0..hr.rows())
            .flat_map(|i| (0..hr.cols()).map(move |k| (i, k)))
            .map(|(i, k)| hw_vec[i] - hr[(i, k)].abs())
            .fold(f64::INFINITY, f64::min);
        prop_assume!(margin.abs() > 1e-9);
        let vec_m = vec(&mm);
        let slack = f
            .h_bar()
            .mul_vec(&vec_m)
            .iter()
            .zip(f.h_bar_vec())
            .map(|(a, b)| b - a)
            .fold(f64::INFINITY, f64::min);
        prop_assert_eq!(margin >= 0.0, f.contains(&vec_m, 0.0));
        prop_assert!((slack - margin).abs() <= 1e-9 * (1.0 + margin.abs()), "{} vs {}", slack, margin);
    }

    #[test]
    fn reduction_keeps_support(seed in 0u64..1000) {
        let s = setup(true);
        let traj = generate_experiment_data(&s, 40, (-1.0, 1.0), seed).unwrap();
        let f = model_set(&traj, &s.w_set);
        let r = reduce_model_set(&f, 1e-9).unwrap();
        prop_assert!(r.active_rows().len() < f.h_bar().rows());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..10 {
            let d = random_dir(&mut rng, f.dims().num_params());
            let (a, _) = f.support(&d).unwrap();
            let (b, _) = r.support(&d).unwrap();
            prop_assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn csv_round_trip_is_exact(vdp in any::<bool>(), t in 1usize..30, seed in 0u64..1000) {
        let s = setup(vdp);
        let traj = generate_experiment_data(&s, t, (-1.0, 1.0), seed).unwrap();
        let mut buf = Vec::new();
        write_trajectory(&traj, &mut buf).unwrap();
        let back: TrajectoryData<f64> = read_trajectory(buf.as_slice()).unwrap();
        prop_assert_eq!(back, traj);
    }
}

#[test]
fn example_one_excitation() {
    let s = setup(false);
    let traj = generate_experiment_data(&s, 100, (-1.0, 1.0), 1).unwrap();
    let dm = build_data_matrices(&traj).unwrap();
    assert!(excitation_check(&dm, &Matrix::identity(2), 1e-9));
    let short = build_data_matrices(&traj.prefix(2)).unwrap();
    assert!(!excitation_check(&short, &Matrix::identity(2), 1e-9));
}

#[test]
fn csv_header_and_final_row() {
    let s = setup(false);
    let traj = generate_experiment_data(&s, 3, (-1.0, 1.0), 7).unwrap();
    let mut buf = Vec::new();
    write_trajectory(&traj, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "t,x1,x2,u1,p1,p2");
    assert_eq!(lines.len(), 5);
    assert!(lines[4].ends_with(",,,"));
}
