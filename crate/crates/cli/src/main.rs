use clap::{Parser, Subcommand};
use ddrci_cli::commands::{self, GenDataArgs, ReportArgs, SimulateArgs, SynthArgs, VerifyArgs};

/// Data-driven robust control invariant sets for LPV systems.
#[derive(Parser, Debug)]
#[command(name = "ddrci", version)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate an open-loop experiment and write the trajectory CSV.
    GenData(GenDataArgs),
    /// Synthesize an RCI set from data or from the true model.
    Synth(SynthArgs),
    /// Re-check a solution's invariance certificate.
    Verify(VerifyArgs),
    /// Closed-loop runs from the vertices of a solution.
    Simulate(SimulateArgs),
    /// Tables and SVG overlays for a set of solutions.
    Report(ReportArgs),
}

fn main() {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Synth(a) => commands::synth(a),
        Command::Verify(a) => commands::verify(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
