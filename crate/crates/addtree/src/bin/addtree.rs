//! Command-line entry point: run Bayesian optimization over a tree spec
//! against a built-in or external objective and write CSV/plot artifacts.
//! Everything here is a thin layer over the `addtree` library; see the
//! crate examples for the full API surface.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use addtree::cli::{self, CliError, ObjectiveSelector, RunConfig};

#[derive(Parser)]
#[command(name = "addtree", version, about = "Bayesian optimization for tree-structured spaces")]
struct Cli {
    #[command(subcommand)]
    command: Commands,
}

#[derive(Subcommand)]
enum Commands {
    /// Run an optimization experiment and emit traces, summary, plot and manifest.
    Run(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to the tree spec file (JSON).
    #[arg(long, required_unless_present = "from_manifest")]
    spec: Option<PathBuf>,

    /// Objective selector: `builtin:<name>` (jenatton, example) or
    /// `external:<command>` (a process speaking the line protocol).
    #[arg(long, required_unless_present = "from_manifest")]
    objective: Option<String>,

    /// Optimization strategy: addtree, independent, random or onehot.
    #[arg(long, default_value = "addtree")]
    algo: String,

    /// Iterations per repetition.
    #[arg(long, default_value_t = 80)]
    iters: usize,

    /// Independent repetitions (seeds seed..seed+reps).
    #[arg(long, default_value_t = 10)]
    reps: usize,

    /// Base seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Output directory for traces, summary, plot and manifest.
    #[arg(long, default_value = "runs/out")]
    out: PathBuf,

    /// Add Gaussian observation noise to objective values.
    #[arg(long)]
    noise: bool,

    /// Extend the tree kernel with ancestor-descendant interaction terms.
    #[arg(long)]
    interactions: bool,

    /// Per-evaluation timeout for external objectives, in seconds.
    #[arg(long, default_value_t = cli::DEFAULT_TIMEOUT_SECS)]
    timeout: u64,

    /// Re-run the configuration recorded in a previous run's manifest
    /// (explicit flags above are ignored except --out).
    #[arg(long)]
    from_manifest: Option<PathBuf>,
}

fn build_config(args: &RunArgs) -> Result<RunConfig, CliError> {
    if let Some(manifest_path) = &args.from_manifest {
        let manifest = cli::load_manifest(manifest_path)?;
        let mut config = manifest.config;
        config.out_dir = args.out.clone();
        return Ok(config);
    }
    Ok(RunConfig {
        spec_path: args.spec.clone().expect("clap enforces --spec"),
        objective: ObjectiveSelector::parse(args.objective.as_deref().expect("clap enforces"))?,
        algo: args.algo.clone(),
        iters: args.iters,
        reps: args.reps,
        seed: args.seed,
        out_dir: args.out.clone(),
        noise: args.noise,
        interactions: args.interactions,
        timeout_secs: args.timeout,
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let Commands::Run(args) = cli.command;
    let result = build_config(&args).and_then(|config| cli::run_command(&config));
    match result {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("addtree: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
