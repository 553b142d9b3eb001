//! Optimization and regression experiments.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::baselines::{Strategy, StrategyError, StrategyKind, StrategyOptions};
use crate::gp::{fit, Dataset, FitConfig, FittedGP, NoiseModel};
use crate::tree_space::{sample_uniform, StructuredPoint, TreeSpec};

use super::{
    median_of, BOTrace, BlackBox, ExperimentSummary, ObjectiveError, TraceRow, REGRET_FLOOR,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("strategy error in repetition {rep} (seed {seed}): {source}")]
    Strategy {
        rep: usize,
        seed: u64,
        source: StrategyError,
    },
    #[error("objective failed in repetition {rep} (seed {seed}) at iteration {iter}: {source}")]
    ObjectiveFailure {
        rep: usize,
        seed: u64,
        iter: usize,
        source: ObjectiveError,
        /// Rows completed before the failure, for persistence.
        partial: Box<BOTrace>,
        /// Traces of repetitions that completed.
        completed: Vec<BOTrace>,
    },
    #[error("objective could not be spawned: {0}")]
    Spawn(ObjectiveError),
}

/// Configuration of one optimization experiment. Repetition `r` uses seed
/// `base_seed + r`.
#[derive(Debug, Clone)]
pub struct BoExperimentConfig {
    pub strategy: StrategyKind,
    pub iters: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub options: StrategyOptions,
    /// Standard deviation of additive Gaussian observation noise (off by
    /// default).
    pub noise_std: Option<f64>,
    /// Overrides the objective's declared minimum for regret reporting.
    pub known_minimum: Option<f64>,
}

impl BoExperimentConfig {
    pub fn new(strategy: StrategyKind, iters: usize, repetitions: usize, base_seed: u64) -> Self {
        Self {
            strategy,
            iters,
            repetitions,
            base_seed,
            options: StrategyOptions::default(),
            noise_std: None,
            known_minimum: None,
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64)
            .map(|r| self.base_seed + r)
            .collect()
    }
}

/// Run `repetitions` independent propose-evaluate-observe loops and
/// summarize them. Repetitions run concurrently; each owns its strategy
/// state, evaluator and noise stream, so the result does not depend on
/// scheduling.
pub fn run_bo_experiment(
    objective: &dyn BlackBox,
    spec: &Arc<TreeSpec>,
    cfg: &BoExperimentConfig,
) -> Result<(Vec<BOTrace>, ExperimentSummary), BenchError> {
    let results: Vec<Result<BOTrace, BenchError>> = cfg
        .seeds()
        .into_par_iter()
        .enumerate()
        .map(|(rep, seed)| run_single(objective, spec, cfg, rep, seed))
        .collect();

    let mut traces = Vec::with_capacity(results.len());
    let mut failure = None;
    for r in results {
        match r {
            Ok(t) => traces.push(t),
            Err(e) => failure = Some(e),
        }
    }
    if let Some(e) = failure {
        // Attach whatever completed so callers can persist partial output.
        return Err(match e {
            BenchError::ObjectiveFailure {
                rep,
                seed,
                iter,
                source,
                partial,
                ..
            } => BenchError::ObjectiveFailure {
                rep,
                seed,
                iter,
                source,
                partial,
                completed: traces,
            },
            other => other,
        });
    }

    let f_min = cfg.known_minimum.or_else(|| objective.minimum());
    let summary = summarize(&traces, f_min);
    Ok((traces, summary))
}

fn run_single(
    objective: &dyn BlackBox,
    spec: &Arc<TreeSpec>,
    cfg: &BoExperimentConfig,
    rep: usize,
    seed: u64,
) -> Result<BOTrace, BenchError> {
    let mut strategy = Strategy::new(cfg.strategy, spec.clone(), seed, cfg.options.clone())
        .map_err(|source| BenchError::Strategy { rep, seed, source })?;
    let mut evaluator = objective.spawn().map_err(BenchError::Spawn)?;
    let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6e6f697365); // distinct noise stream
    let noise = cfg
        .noise_std
        .map(|s| Normal::new(0.0, s).expect("positive noise std"));

    let mut rows = Vec::with_capacity(cfg.iters);
    let mut best = f64::INFINITY;
    for t in 1..=cfg.iters {
        let started = Instant::now();
        let point = strategy
            .propose(t)
            .map_err(|source| BenchError::Strategy { rep, seed, source })?;
        let path = spec.path_of_point(&point).expect("proposals are valid");
        let y = match evaluator.eval(&point) {
            Ok(y) => y + noise.as_ref().map_or(0.0, |n| n.sample(&mut noise_rng)),
            Err(source) => {
                return Err(BenchError::ObjectiveFailure {
                    rep,
                    seed,
                    iter: t,
                    source,
                    partial: Box::new(BOTrace {
                        strategy: cfg.strategy,
                        seed,
                        rows,
                        final_params: strategy.fitted_params(),
                    }),
                    completed: Vec::new(),
                });
            }
        };
        strategy
            .observe(point, y)
            .map_err(|source| BenchError::Strategy { rep, seed, source })?;
        best = best.min(y);
        rows.push(TraceRow {
            t,
            proposed_y: y,
            best_so_far: best,
            path,
            wall_secs: started.elapsed().as_secs_f64(),
        });
    }
    Ok(BOTrace {
        strategy: cfg.strategy,
        seed,
        rows,
        final_params: strategy.fitted_params(),
    })
}

/// Per-iteration mean, twice the standard deviation, and median of log10
/// regret across repetitions. With no known minimum the raw best-so-far
/// values are summarized instead. Values are sorted before accumulation so
/// the summary is exactly permutation-invariant in seed order.
pub fn summarize(traces: &[BOTrace], f_min: Option<f64>) -> ExperimentSummary {
    let iters = traces.iter().map(|t| t.rows.len()).max().unwrap_or(0);
    let reps = traces.len();
    let mut mean = Vec::with_capacity(iters);
    let mut two_std = Vec::with_capacity(iters);
    let mut median = Vec::with_capacity(iters);
    for t in 1..=iters {
        let mut values: Vec<f64> = traces
            .iter()
            .filter_map(|tr| tr.best_at(t))
            .map(|best| match f_min {
                Some(m) => ((best - m).max(REGRET_FLOOR)).log10(),
                None => best,
            })
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = values.len() as f64;
        let m = values.iter().sum::<f64>() / n;
        let var = if values.len() > 1 {
            values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        mean.push(m);
        two_std.push(2.0 * var.sqrt());
        median.push(median_of(values));
    }
    ExperimentSummary {
        repetitions: reps,
        mean_log10_regret: mean,
        two_std,
        median_log10_regret: median,
    }
}

/// One cell of the regression comparison: a model fitted at one training
/// size, over all repetitions.
#[derive(Debug, Clone)]
pub struct RegressionCell {
    pub train_size: usize,
    pub model: &'static str,
    /// Test mean squared errors, one per successful repetition.
    pub mses: Vec<f64>,
    pub mean_log10_mse: f64,
    pub two_std_log10_mse: f64,
    pub median_mse: f64,
    pub fit_failures: usize,
}

#[derive(Debug, Clone)]
pub struct RegressionConfig {
    pub train_sizes: Vec<usize>,
    pub test_size: usize,
    pub repetitions: usize,
    pub base_seed: u64,
    pub fit_restarts: usize,
    /// Share one variance and one lengthscale per model (the isotropic
    /// kernel); the pooled parameters are what keep small-sample fits from
    /// overfitting the decomposition.
    pub tied_params: bool,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            train_sizes: vec![8, 12, 16, 20, 24, 28, 32],
            test_size: 50,
            repetitions: 10,
            base_seed: 0,
            fit_restarts: 5,
            tied_params: true,
        }
    }
}

/// Compare the tree-kernel GP against independent per-leaf GPs in a
/// regression setting: draw uniform training sets of each size, fit both
/// models, report test MSE statistics over the repetitions. Training sets
/// are nested per repetition (a larger size extends a smaller one).
pub fn run_regression_experiment(
    spec: &Arc<TreeSpec>,
    objective: &(dyn Fn(&StructuredPoint) -> f64 + Sync),
    cfg: &RegressionConfig,
) -> Vec<RegressionCell> {
    let max_n = cfg.train_sizes.iter().copied().max().unwrap_or(0);

    struct RepData {
        train: Vec<StructuredPoint>,
        train_y: Vec<f64>,
        test: Vec<StructuredPoint>,
        test_y: Vec<f64>,
    }

    let reps: Vec<RepData> = (0..cfg.repetitions as u64)
        .map(|r| {
            let seed = cfg.base_seed + r;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let train: Vec<_> = (0..max_n).map(|_| sample_uniform(spec, &mut rng)).collect();
            let train_y = train.iter().map(|p| objective(p)).collect();
            let mut test_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465737473657421);
            let test: Vec<_> = (0..cfg.test_size)
                .map(|_| sample_uniform(spec, &mut test_rng))
                .collect();
            let test_y = test.iter().map(|p| objective(p)).collect();
            RepData {
                train,
                train_y,
                test,
                test_y,
            }
        })
        .collect();

    let mut cells = Vec::new();
    for &n in &cfg.train_sizes {
        let per_rep: Vec<(Option<f64>, Option<f64>)> = reps
            .par_iter()
            .enumerate()
            .map(|(r, data)| {
                let seed = cfg.base_seed + r as u64;
                let train = &data.train[..n];
                let train_y = &data.train_y[..n];
                let fit_template = FitConfig {
                    restarts: cfg.fit_restarts,
                    tied: cfg.tied_params,
                    ..FitConfig::default()
                };
                let tree_mse = fit_and_score_addtree(
                    spec,
                    train,
                    train_y,
                    &data.test,
                    &data.test_y,
                    seed,
                    &fit_template,
                );
                let indep_mse = fit_and_score_independent(
                    spec,
                    train,
                    train_y,
                    &data.test,
                    &data.test_y,
                    seed,
                    &fit_template,
                );
                (tree_mse, indep_mse)
            })
            .collect();

        for (model, idx) in [("addtree", 0usize), ("independent", 1usize)] {
            let values: Vec<f64> = per_rep
                .iter()
                .filter_map(|pair| if idx == 0 { pair.0 } else { pair.1 })
                .collect();
            let failures = cfg.repetitions - values.len();
            let mut logs: Vec<f64> = values.iter().map(|m| m.max(1e-300).log10()).collect();
            logs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let count = logs.len().max(1) as f64;
            let mean = logs.iter().sum::<f64>() / count;
            let var = if logs.len() > 1 {
                logs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (count - 1.0)
            } else {
                0.0
            };
            cells.push(RegressionCell {
                train_size: n,
                model,
                median_mse: median_of(values.clone()),
                mses: values,
                mean_log10_mse: mean,
                two_std_log10_mse: 2.0 * var.sqrt(),
                fit_failures: failures,
            });
        }
    }
    cells
}

fn fit_and_score_addtree(
    spec: &Arc<TreeSpec>,
    train: &[StructuredPoint],
    train_y: &[f64],
    test: &[StructuredPoint],
    test_y: &[f64],
    seed: u64,
    fit_template: &FitConfig,
) -> Option<f64> {
    let data = Dataset::new(
        spec.clone(),
        train.to_vec(),
        train_y.to_vec(),
        NoiseModel::Learn,
    )
    .ok()?;
    let gp = fit(
        data,
        &FitConfig {
            seed,
            ..fit_template.clone()
        },
    )
    .ok()?;
    mse_of(&gp, test, test_y)
}

fn fit_and_score_independent(
    spec: &Arc<TreeSpec>,
    train: &[StructuredPoint],
    train_y: &[f64],
    test: &[StructuredPoint],
    test_y: &[f64],
    seed: u64,
    fit_template: &FitConfig,
) -> Option<f64> {
    use crate::baselines::leaf_models_for_regression;
    let models = leaf_models_for_regression(spec, train, train_y, seed, fit_template).ok()?;
    let mut se = 0.0;
    for (p, &y) in test.iter().zip(test_y) {
        let leaf = spec.path_of_point(p).ok()?;
        let pred = models[leaf].predict(p)?;
        se += (pred - y) * (pred - y);
    }
    Some(se / test.len() as f64)
}

fn mse_of(gp: &FittedGP, test: &[StructuredPoint], test_y: &[f64]) -> Option<f64> {
    let mut se = 0.0;
    for (p, &y) in test.iter().zip(test_y) {
        let post = gp.posterior(p).ok()?;
        se += (post.mean - y) * (post.mean - y);
    }
    Some(se / test.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::BuiltinObjective;

    #[test]
    fn traces_have_monotone_incumbents_and_full_length() {
        let objective = BuiltinObjective::Jenatton;
        let spec = objective.spec().into_shared();
        let cfg = BoExperimentConfig::new(StrategyKind::Random, 30, 3, 5);
        let (traces, summary) = run_bo_experiment(&objective, &spec, &cfg).unwrap();
        assert_eq!(traces.len(), 3);
        for trace in &traces {
            assert_eq!(trace.rows.len(), 30);
            for w in trace.rows.windows(2) {
                assert!(w[1].best_so_far <= w[0].best_so_far);
            }
        }
        assert_eq!(summary.mean_log10_regret.len(), 30);
        assert_eq!(summary.repetitions, 3);
    }

    #[test]
    fn summaries_are_permutation_invariant() {
        let objective = BuiltinObjective::Jenatton;
        let spec = objective.spec().into_shared();
        let cfg = BoExperimentConfig::new(StrategyKind::Random, 20, 4, 11);
        let (mut traces, summary) = run_bo_experiment(&objective, &spec, &cfg).unwrap();
        traces.reverse();
        let reordered = summarize(&traces, Some(0.1));
        assert_eq!(summary.mean_log10_regret, reordered.mean_log10_regret);
        assert_eq!(summary.two_std, reordered.two_std);
    }

    #[test]
    fn reruns_are_identical() {
        let objective = BuiltinObjective::Jenatton;
        let spec = objective.spec().into_shared();
        let cfg = BoExperimentConfig::new(StrategyKind::Random, 15, 2, 3);
        let (a, _) = run_bo_experiment(&objective, &spec, &cfg).unwrap();
        let (b, _) = run_bo_experiment(&objective, &spec, &cfg).unwrap();
        for (ta, tb) in a.iter().zip(&b) {
            for (ra, rb) in ta.rows.iter().zip(&tb.rows) {
                assert_eq!(ra.proposed_y, rb.proposed_y);
                assert_eq!(ra.path, rb.path);
            }
        }
    }

    #[test]
    fn objective_failure_aborts_with_partial_trace() {
        struct FnEval<F>(F);
        impl<F: FnMut(&StructuredPoint) -> Result<f64, ObjectiveError> + Send> super::super::Evaluator
            for FnEval<F>
        {
            fn eval(&mut self, p: &StructuredPoint) -> Result<f64, ObjectiveError> {
                (self.0)(p)
            }
        }
        struct FlakyBox;
        impl BlackBox for FlakyBox {
            fn spawn(&self) -> Result<Box<dyn super::super::Evaluator>, ObjectiveError> {
                let mut calls = 0usize;
                Ok(Box::new(FnEval(move |p: &StructuredPoint| {
                    calls += 1;
                    if calls > 5 {
                        Err(ObjectiveError::MalformedResponse("boom".into()))
                    } else {
                        Ok(p.values().values().flatten().map(|v| v * v).sum())
                    }
                })))
            }
            fn minimum(&self) -> Option<f64> {
                None
            }
        }

        let spec = BuiltinObjective::Jenatton.spec().into_shared();
        let cfg = BoExperimentConfig::new(StrategyKind::Random, 10, 1, 2);
        let err = run_bo_experiment(&FlakyBox, &spec, &cfg).unwrap_err();
        match err {
            BenchError::ObjectiveFailure { iter, partial, .. } => {
                assert_eq!(iter, 6);
                assert_eq!(partial.rows.len(), 5);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn regression_experiment_shapes() {
        let objective = BuiltinObjective::Jenatton;
        let spec = objective.spec().into_shared();
        let cfg = RegressionConfig {
            train_sizes: vec![6, 10],
            test_size: 10,
            repetitions: 2,
            base_seed: 1,
            fit_restarts: 2,
        };
        let cells = run_regression_experiment(&spec, &|p| objective.eval(p), &cfg);
        assert_eq!(cells.len(), 4); // two sizes x two models
        for cell in &cells {
            assert_eq!(cell.mses.len() + cell.fit_failures, 2);
            assert!(cell.mses.iter().all(|m| *m >= 0.0));
        }
    }
}
