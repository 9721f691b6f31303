//! Subcommand implementations.

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use ddrci::dataset::{
    build_data_matrices, build_feasible_model_set, excitation_report, load_trajectory, reduce_model_set,
    save_trajectory, DatasetError, FeasibleModelSet, TrajectoryData,
};
use ddrci::polytope::Polytope;
use ddrci::runtime::{generate_experiment_data, simulate_from_vertices, ControllerMode, ExamplePlant, SamplerSpec};
use ddrci::synthesis::{
    synthesize, synthesize_model_based, verify_invariance, RciSolution, Strategy, SynthesisProblem,
};

use crate::config::{ProblemConfig, SCHEMA_VERSION};
use crate::{report, write_file, CliError, SolutionFile, SynthMode};

/// Where the problem comes from: a config file, a built-in plant, or both
/// (the plant then replaces the config's system).
#[derive(Args, Debug, Clone)]
pub struct ProblemArgs {
    /// JSON problem configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in plant: double-integrator or van-der-pol.
    #[arg(long)]
    pub plant: Option<ExamplePlant>,
}

impl ProblemArgs {
    pub fn load(&self) -> Result<ProblemConfig, CliError> {
        match (&self.config, self.plant) {
            (Some(path), plant) => {
                let mut cfg = ProblemConfig::load(path)?;
                if plant.is_some() {
                    cfg.plant = plant;
                    cfg.model = None;
                }
                Ok(cfg)
            }
            (None, Some(p)) => {
                let mut cfg = ProblemConfig::for_example(p);
                if let Ok(id) = std::env::var(crate::config::SOLVER_ENV) {
                    cfg.synthesis.solver = id;
                }
                Ok(cfg)
            }
            (None, None) => Err(CliError::Input("give --config or --plant".into())),
        }
    }
}

fn h_w_half(w: &Polytope<f64>) -> Result<ddrci::linops::Matrix<f64>, CliError> {
    w.as_symmetric(0.0)
        .map(|(h, _)| h)
        .ok_or_else(|| CliError::Input("W must be symmetric".into()))
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Number of transitions.
    #[arg(long = "T")]
    pub t: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "trajectory.csv")]
    pub out: PathBuf,
}

pub fn gen_data(a: &GenDataArgs) -> Result<(), CliError> {
    if a.t == 0 {
        return Err(CliError::Input("T must be at least 1".into()));
    }
    let cfg = a.problem.load()?;
    let setup = cfg.setup()?;
    let range = (cfg.data.input_range[0], cfg.data.input_range[1]);
    let traj = generate_experiment_data(&setup, a.t, range, a.seed).map_err(|e| CliError::Input(e.to_string()))?;
    save_trajectory(&traj, &a.out).map_err(|e| CliError::Input(e.to_string()))?;
    let dm = build_data_matrices(&traj).map_err(|e| CliError::Input(e.to_string()))?;
    let rep = excitation_report(&dm, &h_w_half(&setup.w_set)?, 1e-9);
    println!("wrote {} samples to {}", a.t, a.out.display());
    println!("excitation: {rep}");
    if !rep.ok {
        return Err(CliError::Input(format!(
            "data are not persistently exciting: regressor rank {} of {} required",
            rep.rank_x_pu, rep.required_rank
        )));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Trajectory CSV (data mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SynthMode::Data)]
    pub mode: SynthMode,
    /// Use only the first T transitions of the trajectory.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// LP plugin id (overrides config and environment).
    #[arg(long)]
    pub solver: Option<String>,
    #[arg(long, value_enum)]
    pub strategy: Option<StrategyArg>,
    /// Skip redundancy reduction of the model set.
    #[arg(long)]
    pub no_reduce: bool,
    #[arg(long, default_value = "solution.json")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum StrategyArg {
    Auto,
    Monolithic,
    RowGeneration,
}

impl From<StrategyArg> for Strategy {
    fn from(s: StrategyArg) -> Self {
        match s {
            StrategyArg::Auto => Strategy::Auto,
            StrategyArg::Monolithic => Strategy::Monolithic,
            StrategyArg::RowGeneration => Strategy::RowGeneration,
        }
    }
}

fn load_data(path: &Path, t: Option<usize>, cfg: &ProblemConfig) -> Result<TrajectoryData<f64>, CliError> {
    let traj = load_trajectory::<f64>(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    let traj = match t {
        Some(t) if t > traj.len() => {
            return Err(CliError::Input(format!(
                "T = {t} exceeds the {} samples in {}",
                traj.len(),
                path.display()
            )));
        }
        Some(t) => traj.prefix(t),
        None => traj,
    };
    traj.validate_schedules(&cfg.p_vertices, 1e-9)
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok(traj)
}

fn model_set(traj: &TrajectoryData<f64>, w: &Polytope<f64>) -> Result<FeasibleModelSet<f64>, CliError> {
    let dm = build_data_matrices(traj).map_err(|e| CliError::Input(e.to_string()))?;
    let rep = excitation_report(&dm, &h_w_half(w)?, 1e-9);
    if !rep.ok {
        log::warn!("data are not persistently exciting ({rep}); the model set is unbounded in some directions");
    }
    build_feasible_model_set(&dm, w).map_err(|e| CliError::Input(e.to_string()))
}

fn problem(cfg: &ProblemConfig, model_set: Option<FeasibleModelSet<f64>>) -> Result<SynthesisProblem<f64>, CliError> {
    let r = cfg.resolve()?;
    let template = cfg
        .template
        .build::<f64>()
        .map_err(|e| CliError::Input(format!("template: {e}")))?;
    Ok(SynthesisProblem::new(
        template,
        r.x_set,
        r.u_set,
        r.w_set,
        cfg.p_vertices.clone(),
        model_set,
        cfg.d_matrix()?,
    )?)
}

pub fn synth(a: &SynthArgs) -> Result<(), CliError> {
    let cfg = a.problem.load()?;
    let mut opts = cfg.synthesis.clone();
    if let Some(s) = &a.solver {
        opts.solver = s.clone();
    }
    if let Some(s) = a.strategy {
        opts.strategy = s.into();
    }
    let start = Instant::now();
    let (sol, samples) = match a.mode {
        SynthMode::Model => {
            let plant = cfg
                .plant_model()?
                .ok_or_else(|| CliError::Input("model mode needs a `plant` or `model` in the config".into()))?;
            let prob = problem(&cfg, None)?;
            (synthesize_model_based(&prob, &plant.model_matrix(), &opts)?, None)
        }
        SynthMode::Data => {
            let path = a
                .data
                .as_ref()
                .ok_or_else(|| CliError::Input("data mode needs --data".into()))?;
            let traj = load_data(path, a.t, &cfg)?;
            let w = cfg.w.polytope("W")?;
            let mut f = model_set(&traj, &w)?;
            if cfg.data.reduce && !a.no_reduce {
                let before = f.h_bar().rows();
                f = reduce_model_set(&f, cfg.data.reduce_tol).map_err(|e| match e {
                    DatasetError::Empty => CliError::Infeasible(e.to_string()),
                    other => CliError::Input(other.to_string()),
                })?;
                println!(
                    "model set: {} of {before} rows kept after reduction",
                    f.active_rows().len()
                );
            }
            let prob = problem(&cfg, Some(f))?;
            (synthesize(&prob, &opts)?, Some(traj.len()))
        }
    };
    let secs = start.elapsed().as_secs_f64();
    println!("objective {:.6}", sol.objective);
    match sol.volume {
        Some(v) => println!("volume {v:.6}"),
        None => println!("volume n/a"),
    }
    let d = &sol.diagnostics;
    println!(
        "lp: {} rows, {} vars, {} iterations, {} rounds, {} cuts, solver {}",
        d.lp_rows, d.lp_vars, d.lp_iterations, d.rounds, d.cuts, d.solver
    );
    println!("wall time {secs:.2} s");
    SolutionFile {
        schema: SCHEMA_VERSION,
        mode: a.mode,
        samples,
        solution: sol,
    }
    .save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub solution: PathBuf,
    /// Trajectory CSV the solution was synthesized from (data mode).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
}

pub fn verify(a: &VerifyArgs) -> Result<(), CliError> {
    let cfg = a.problem.load()?;
    let file = SolutionFile::load(&a.solution)?;
    let prob = problem(&cfg, None)?;
    let f = match file.mode {
        SynthMode::Model => {
            let plant = cfg.plant_model()?.ok_or_else(|| {
                CliError::Input("model-mode solution needs a `plant` or `model` in the config".into())
            })?;
            FeasibleModelSet::singleton(&plant.model_matrix(), prob.n(), prob.m(), prob.s())
                .map_err(|e| CliError::Input(e.to_string()))?
        }
        SynthMode::Data => {
            let path = a
                .data
                .as_ref()
                .ok_or_else(|| CliError::Input("data-mode solution needs --data".into()))?;
            let traj = load_data(path, file.samples, &cfg)?;
            model_set(&traj, &prob.w_set)?
        }
    };
    let rep = verify_invariance(&file.solution, &prob, &f, a.tol)?;
    let (i, j) = rep.facet_worst_pair.get(rep.worst_facet).copied().unwrap_or((0, 0));
    println!(
        "min slack {:.3e} at facet {} (vertex {}, schedule vertex {})",
        rep.min_slack, rep.worst_facet, i, j
    );
    println!(
        "configuration {:.1e}, state {:.1e}, input {:.1e}",
        rep.config_violation, rep.state_violation, rep.input_violation
    );
    if let (Some(mn), Some(res)) = (rep.min_multiplier, rep.multiplier_residual) {
        println!("multipliers: min {mn:.1e}, residual {res:.1e}");
    }
    if rep.passed() {
        println!("PASS");
        Ok(())
    } else {
        let facets = rep.failing_facets();
        println!("FAIL");
        Err(CliError::Verification(if facets.is_empty() {
            "certificate residuals exceed tolerance".into()
        } else {
            format!("negative slack on facets {facets:?}")
        }))
    }
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    #[arg(long)]
    pub solution: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Run with `w = 0`.
    #[arg(long)]
    pub zero_disturbance: bool,
    #[arg(long, value_enum)]
    pub controller: Option<ControllerArg>,
    /// Directory for per-run trace CSVs.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum ControllerArg {
    Convex,
    Unnormalized,
}

pub fn simulate(a: &SimulateArgs) -> Result<(), CliError> {
    let cfg = a.problem.load()?;
    let setup = cfg.setup()?;
    let file = SolutionFile::load(&a.solution)?;
    let sol: &RciSolution<f64> = &file.solution;
    if sol.vertex_states.first().map(Vec::len) != Some(setup.plant.n()) {
        return Err(CliError::Input("solution and plant disagree in state dimension".into()));
    }
    let mut sampler = SamplerSpec::for_example(&setup, a.seed);
    sampler.disturbance = cfg.simulation.disturbance;
    if a.zero_disturbance {
        sampler.w_set = Polytope::symmetric_box(&vec![0.0; setup.plant.n()]);
    }
    let mode = match a.controller {
        Some(ControllerArg::Convex) => ControllerMode::Convex,
        Some(ControllerArg::Unnormalized) => ControllerMode::Unnormalized,
        None => cfg.simulation.controller,
    };
    let traces = simulate_from_vertices(&setup.plant, sol, &setup.u_set, a.runs, a.steps, &sampler, mode)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    if let Some(dir) = &a.out_dir {
        for (r, tr) in traces.iter().enumerate() {
            let mut buf = Vec::new();
            tr.write_csv(&mut buf).map_err(|e| CliError::Input(e.to_string()))?;
            write_file(&dir.join(format!("trace_{r:03}.csv")), &buf)?;
        }
    }
    let count = |f: fn(&ddrci::runtime::ClosedLoopTrace<f64>) -> &Vec<bool>| {
        traces
            .iter()
            .map(|t| f(t).iter().filter(|&&b| b).count())
            .sum::<usize>()
    };
    let states = count(|t| &t.state_violations);
    let inputs = count(|t| &t.input_violations);
    let failures = count(|t| &t.controller_failures);
    println!(
        "runs {} steps {}: state violations {states}, input violations {inputs}, controller failures {failures}",
        a.runs, a.steps
    );
    if states + inputs + failures > 0 {
        return Err(CliError::Verification(format!(
            "{} violations in closed loop",
            states + inputs + failures
        )));
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    #[command(flatten)]
    pub problem: ProblemArgs,
    /// Solution files written by `synth`.
    #[arg(required = true)]
    pub solutions: Vec<PathBuf>,
    /// Trace CSVs written by `simulate`, drawn as polylines.
    #[arg(long)]
    pub traces: Vec<PathBuf>,
    #[arg(long, default_value = "report")]
    pub out_dir: PathBuf,
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let x_set = match (&a.problem.config, a.problem.plant) {
        (None, None) => None,
        _ => Some(a.problem.load()?.x.polytope("X")?),
    };
    let files = a
        .solutions
        .iter()
        .map(|p| SolutionFile::load(p).map(|f| (p.clone(), f)))
        .collect::<Result<Vec<_>, _>>()?;
    let table = report::table_csv(&files);
    write_file(&a.out_dir.join("table.csv"), table.as_bytes())?;
    println!("{}", table.trim_end());
    let traces = a
        .traces
        .iter()
        .map(|p| report::read_trace_xy(p))
        .collect::<Result<Vec<_>, _>>()?;
    match report::sets_svg(x_set.as_ref(), &files, &traces)? {
        Some(svg) => {
            write_file(&a.out_dir.join("sets.svg"), svg.as_bytes())?;
            println!("wrote {}", a.out_dir.join("sets.svg").display());
        }
        None => println!("SVG skipped: sets are not planar"),
    }
    Ok(())
}
