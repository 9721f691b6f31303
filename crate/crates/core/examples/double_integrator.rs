//! Synthesize an RCI set for the double integrator from 100 samples and
//! check it against the reduced model set.
use ddrci::dataset::{build_data_matrices, build_feasible_model_set, reduce_model_set};
use ddrci::runtime::{build_example_plant, generate_experiment_data, ExamplePlant};
use ddrci::synthesis::{synthesize, verify_invariance, SynthesisOptions, SynthesisProblem};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let setup = build_example_plant::<f64>(ExamplePlant::DoubleIntegrator);
    let data = generate_experiment_data(&setup, 100, (-1.0, 1.0), 1)?;
    let f = build_feasible_model_set(&build_data_matrices(&data)?, &setup.w_set)?;
    let f = reduce_model_set(&f, 1e-9)?;
    println!("model set: {} of {} rows kept", f.active_rows().len(), f.h_bar().rows());

    let prob = SynthesisProblem::new(
        setup.template.build()?,
        setup.x_set.clone(),
        setup.u_set.clone(),
        setup.w_set.clone(),
        setup.p_vertices.clone(),
        Some(f.clone()),
        None,
    )?;
    let sol = synthesize(&prob, &SynthesisOptions::default())?;
    println!("d_X = {:.4}, volume = {:?}", sol.objective, sol.volume);
    println!("{} template vertices", sol.vertex_states.len());
    let rep = verify_invariance(&sol, &prob, &f, 1e-6)?;
    println!("min slack {:e}, passed {}", rep.min_slack, rep.passed());
    Ok(())
}
