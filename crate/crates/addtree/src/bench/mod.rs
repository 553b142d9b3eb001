//! Benchmark harness: built-in objectives, optimization and regression
//! experiments, run summaries and the Wilcoxon signed-rank comparison.
//!
//! Repetitions run concurrently with independent seeded generators; each
//! run's loop is sequential in `t`. Summaries sort before accumulating so
//! they are exactly permutation-invariant in seed order, and all CSV
//! serialization uses shortest-roundtrip float formatting, so identical
//! configurations produce byte-identical outputs.

mod experiment;
mod objectives;
mod plot;
mod wilcoxon;

pub use experiment::{
    run_bo_experiment, run_regression_experiment, summarize, BenchError, BoExperimentConfig,
    RegressionCell, RegressionConfig,
};
pub use objectives::{example_tree_eval, jenatton_eval, BuiltinObjective};
pub use plot::{render_convergence_svg, write_convergence_svg, CurveSeries};
pub use wilcoxon::{wilcoxon_one_sided, PValueMethod, WilcoxonError, WilcoxonOutcome};

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Duration;

use thiserror::Error;

use crate::baselines::StrategyKind;
use crate::tree_space::StructuredPoint;

/// Errors from evaluating a black-box objective.
#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error("failed to start objective process: {0}")]
    Spawn(String),
    #[error("objective evaluation timed out after {0:?}")]
    Timeout(Duration),
    #[error("malformed objective response: {0:?}")]
    MalformedResponse(String),
    #[error("objective process exited with status {status}; stderr: {stderr:?}")]
    ProcessExit { status: i32, stderr: String },
    #[error("i/o error talking to objective process: {0}")]
    Io(#[from] std::io::Error),
    #[error("unknown builtin objective {name:?}; valid names: {valid}")]
    UnknownBuiltin { name: String, valid: String },
}

/// A black-box objective. `spawn` produces one evaluator per repetition so
/// concurrent repetitions own their resources (e.g. subprocesses).
pub trait BlackBox: Sync {
    fn spawn(&self) -> Result<Box<dyn Evaluator>, ObjectiveError>;
    /// Known global minimum, when available, for regret reporting.
    fn minimum(&self) -> Option<f64>;
}

/// Per-repetition evaluation handle.
pub trait Evaluator: Send {
    fn eval(&mut self, point: &StructuredPoint) -> Result<f64, ObjectiveError>;
}

impl<F> Evaluator for F
where
    F: FnMut(&StructuredPoint) -> f64 + Send,
{
    fn eval(&mut self, point: &StructuredPoint) -> Result<f64, ObjectiveError> {
        Ok(self(point))
    }
}

/// One iteration of a Bayesian-optimization run.
#[derive(Debug, Clone)]
pub struct TraceRow {
    pub t: usize,
    pub proposed_y: f64,
    pub best_so_far: f64,
    pub path: usize,
    /// Wall-clock seconds spent on this iteration (not serialized).
    pub wall_secs: f64,
}

/// Per-run record: every iteration's proposal, observation and incumbent,
/// plus the final fitted hyperparameters for the manifest.
#[derive(Debug, Clone)]
pub struct BOTrace {
    pub strategy: StrategyKind,
    pub seed: u64,
    pub rows: Vec<TraceRow>,
    pub final_params: Option<BTreeMap<String, f64>>,
}

impl BOTrace {
    pub fn best_at(&self, t: usize) -> Option<f64> {
        self.rows.get(t.checked_sub(1)?).map(|r| r.best_so_far)
    }

    pub fn final_best(&self) -> Option<f64> {
        self.rows.last().map(|r| r.best_so_far)
    }
}

/// Per-iteration mean and twice the standard deviation of log10 regret
/// across repetitions (the median is carried along for robust thresholds).
#[derive(Debug, Clone)]
pub struct ExperimentSummary {
    pub repetitions: usize,
    pub mean_log10_regret: Vec<f64>,
    pub two_std: Vec<f64>,
    pub median_log10_regret: Vec<f64>,
}

/// Regret floor keeping log plots finite when a run hits the exact optimum.
pub const REGRET_FLOOR: f64 = 1e-12;

/// Serialize a trace to the run CSV schema:
/// `iter,proposed_y,best_so_far,path,seed,strategy`.
pub fn trace_csv(trace: &BOTrace) -> String {
    let mut out = String::from("iter,proposed_y,best_so_far,path,seed,strategy\n");
    for row in &trace.rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            row.t,
            row.proposed_y,
            row.best_so_far,
            row.path,
            trace.seed,
            trace.strategy.name()
        );
    }
    out
}

/// Serialize a summary to the experiment CSV schema:
/// `iter,mean_log10_regret,two_std`.
pub fn summary_csv(summary: &ExperimentSummary) -> String {
    let mut out = String::from("iter,mean_log10_regret,two_std\n");
    for (i, (mean, ts)) in summary
        .mean_log10_regret
        .iter()
        .zip(&summary.two_std)
        .enumerate()
    {
        let _ = writeln!(out, "{},{},{}", i + 1, mean, ts);
    }
    out
}

pub(crate) fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}
