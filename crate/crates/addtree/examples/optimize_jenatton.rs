//! Minimize the built-in synthetic tree objective with the tree-kernel GP
//! and per-vertex parallel GP-UCB.
//!
//! ```bash
//! cargo run --release -p addtree --example optimize_jenatton -- [iters] [seed]
//! ```

use addtree::baselines::StrategyKind;
use addtree::bench::{run_bo_experiment, BoExperimentConfig, BuiltinObjective};

fn main() {
    let mut args = std::env::args().skip(1);
    let iters: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(60);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(7);

    let objective = BuiltinObjective::Jenatton;
    let spec = objective.spec().into_shared();
    let cfg = BoExperimentConfig::new(StrategyKind::AddTree, iters, 1, seed);

    let started = std::time::Instant::now();
    let (traces, summary) = run_bo_experiment(&objective, &spec, &cfg).expect("run completes");
    let elapsed = started.elapsed();

    let trace = &traces[0];
    println!("iter  proposed_y  best_so_far  path");
    for row in &trace.rows {
        println!(
            "{:>4}  {:>10.6}  {:>11.6}  {:>4}",
            row.t, row.proposed_y, row.best_so_far, row.path
        );
    }
    let best = trace.final_best().unwrap();
    println!();
    println!(
        "best objective {best:.8} (known minimum {}), regret {:.2e}",
        objective.known_minimum(),
        best - objective.known_minimum()
    );
    println!(
        "final log10 regret: {:.3}",
        summary.mean_log10_regret.last().unwrap()
    );
    println!("wall time: {elapsed:.2?}");
}
