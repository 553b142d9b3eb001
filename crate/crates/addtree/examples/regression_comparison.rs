//! Sample-efficiency comparison in a regression setting: fit the tree-kernel
//! GP and independent per-leaf GPs on uniform draws of the synthetic tree
//! objective and report test MSE against training-set size.
//!
//! ```bash
//! cargo run --release -p addtree --example regression_comparison
//! ```

use addtree::bench::{run_regression_experiment, BuiltinObjective, RegressionConfig};

fn main() {
    let objective = BuiltinObjective::Jenatton;
    let spec = objective.spec().into_shared();
    let cfg = RegressionConfig::default();

    println!(
        "test size {}, {} repetitions, seeds {}..{}",
        cfg.test_size,
        cfg.repetitions,
        cfg.base_seed,
        cfg.base_seed + cfg.repetitions as u64
    );
    println!("train_n  model        median MSE    mean log10 MSE  +/- 2 std");
    let cells = run_regression_experiment(&spec, &|p| objective.eval(p), &cfg);
    for cell in &cells {
        println!(
            "{:>7}  {:<11}  {:>11.3e}  {:>14.3}  {:>9.3}",
            cell.train_size, cell.model, cell.median_mse, cell.mean_log10_mse, cell.two_std_log10_mse
        );
    }

    // Headline numbers: sample efficiency at small n.
    let at = |n: usize, model: &str| {
        cells
            .iter()
            .find(|c| c.train_size == n && c.model == model)
            .map(|c| c.median_mse)
    };
    if let (Some(tree), Some(indep)) = (at(20, "addtree"), at(20, "independent")) {
        println!();
        println!("at n=20: independent / addtree MSE ratio = {:.1}", indep / tree);
    }
}
