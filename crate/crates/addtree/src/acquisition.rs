//! GP-UCB acquisition over tree-structured spaces.
//!
//! [`propose`] runs one upper-confidence-bound optimization per
//! block-carrying vertex — each over that vertex's own low-dimensional box,
//! independent of every other vertex given the fitted model — assembles
//! each root-to-leaf path's candidate from its vertices' maximizers, and
//! picks the path whose candidate has the best joint UCB (a single
//! posterior evaluation per path, not an optimization). The optimization
//! work is bounded by the number of vertices, not by paths times path
//! dimension.
//!
//! [`naive_propose`] is the costly alternative kept as a baseline and
//! diagnostic: one full-path UCB optimization per leaf. The two optimize
//! different objectives (sum of per-component bounds vs. the joint bound)
//! and only coincide on single-vertex trees.
//!
//! Scores are computed in the model's standardized target units; the argmax
//! is invariant under that affine rescaling. For minimization problems the
//! posterior mean enters with a flipped sign, which is equivalent to running
//! UCB on the negated objective. Component scores ignore any interaction
//! terms in the kernel (they are not per-vertex decomposable); the posterior
//! itself still conditions on the full kernel.
//!
//! Per-vertex optimizations run concurrently; restart seeds are drawn ahead
//! of time and the reduction is ordered by vertex id, so results do not
//! depend on scheduling.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gp::FittedGP;
use crate::optim::{self, Bounds, OptimOptions};
use crate::tree_space::{sample_on_path, StructuredPoint};

/// GP-UCB configuration: the confidence schedule and the acquisition
/// optimizer's budgets.
#[derive(Debug, Clone)]
pub struct UcbConfig {
    /// Coefficient of the confidence schedule `beta_coeff * d * ln(2t)`.
    pub beta_coeff: f64,
    /// When true (default), each per-vertex optimization uses its own block
    /// dimension as the schedule's d; otherwise the ambient dimension.
    pub per_vertex_dim: bool,
    /// Random restarts per optimization, in addition to the warm start.
    pub optimizer_restarts: usize,
    /// Optional grid resolution per dimension; when set, the best grid point
    /// seeds an extra restart (skipped when the grid would exceed 10^4 points).
    pub grid_check: Option<usize>,
    /// Uniform probes per path added to the path-selection candidate set
    /// (posterior evaluations only, not optimizations).
    pub selection_probes: usize,
    /// True when the black-box objective is being minimized.
    pub minimize: bool,
    pub optim: OptimOptions,
}

impl Default for UcbConfig {
    fn default() -> Self {
        Self {
            beta_coeff: 0.2,
            per_vertex_dim: true,
            optimizer_restarts: 10,
            grid_check: None,
            selection_probes: 4,
            minimize: true,
            optim: OptimOptions {
                max_iters: 80,
                grad_tol: 1e-10,
                f_tol: 1e-16,
                ..OptimOptions::default()
            },
        }
    }
}

/// Confidence schedule `beta_coeff * d_tilde * ln(2t)`, strictly increasing
/// in both the step `t >= 1` and the optimized dimension `d_tilde`.
pub fn beta(t: usize, d_tilde: usize, cfg: &UcbConfig) -> f64 {
    assert!(t >= 1, "confidence schedule starts at t = 1");
    cfg.beta_coeff * d_tilde as f64 * (2.0 * t as f64).ln()
}

/// A proposed evaluation point with its acquisition scores and the
/// instrumentation needed to audit the optimizer's economy.
#[derive(Debug, Clone)]
pub struct Proposal {
    pub point: StructuredPoint,
    /// Index of the winning root-to-leaf path.
    pub path: usize,
    /// Per-vertex UCB optima (propose) keyed by vertex id; empty for the
    /// naive strategy.
    pub vertex_scores: BTreeMap<usize, f64>,
    /// Per-vertex maximizers, used to warm-start the next iteration.
    pub vertex_points: BTreeMap<usize, Vec<f64>>,
    /// Selection score of every path, by path index: the joint UCB at the
    /// path's assembled candidate point.
    pub path_scores: Vec<f64>,
    /// Per-path sums of the per-vertex component optima. Kept as a
    /// diagnostic: the additive decomposition of the posterior is only
    /// identifiable up to constant shifts between on-path components, so
    /// these sums double-count uncertainty the joint score cancels; they
    /// are not used for selection. Empty for the naive strategy.
    pub component_path_scores: Vec<f64>,
    /// Score of the winning path.
    pub score: f64,
    /// Number of component (or full-path) optimizations performed.
    pub optimizations: usize,
}

/// Component UCB of one vertex at given coordinates, in standardized units.
fn component_ucb(gp: &FittedGP, vertex: usize, x_v: &[f64], sqrt_beta: f64, minimize: bool) -> f64 {
    let post = gp
        .component_posterior(vertex, x_v)
        .expect("vertex carries a block");
    let mean = if minimize { -post.mean } else { post.mean };
    mean + sqrt_beta * post.variance.max(0.0).sqrt()
}

/// Full-path UCB of a structured point, in standardized units. The schedule
/// dimension is the path's effective dimension, matching what the per-leaf
/// optimizer maximizes.
pub fn joint_ucb(gp: &FittedGP, x: &StructuredPoint, t: usize, cfg: &UcbConfig) -> f64 {
    let leaf = gp.spec().path_of_point(x).expect("point valid for spec");
    let d: usize = gp
        .spec()
        .path(leaf)
        .iter()
        .map(|&v| gp.spec().vertex(v).block().dim())
        .sum();
    let post = gp.posterior_standardized(x).expect("point valid for spec");
    let mean = if cfg.minimize { -post.mean } else { post.mean };
    mean + beta(t, d.max(1), cfg).sqrt() * post.variance.max(0.0).sqrt()
}

fn vertex_bounds(gp: &FittedGP, vertex: usize) -> Bounds {
    let block = gp.spec().vertex(vertex).block();
    Bounds::new(
        (0..block.dim()).map(|d| block.low(d)).collect(),
        (0..block.dim()).map(|d| block.high(d)).collect(),
    )
}

fn draw_starts<R: Rng>(bounds: &Bounds, count: usize, rng: &mut R) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| {
            (0..bounds.dim())
                .map(|i| rng.gen_range(bounds.lower[i]..=bounds.upper[i]))
                .collect()
        })
        .collect()
}

/// Best point of a regular grid under `score`, or None when the grid would
/// be too large.
fn grid_best<F: Fn(&[f64]) -> f64>(bounds: &Bounds, resolution: usize, score: F) -> Option<Vec<f64>> {
    let dim = bounds.dim();
    let total = (resolution as f64).powi(dim as i32);
    if !(1.0..=1e4).contains(&total) {
        return None;
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut idx = vec![0usize; dim];
    loop {
        let x: Vec<f64> = (0..dim)
            .map(|d| {
                let frac = idx[d] as f64 / (resolution - 1).max(1) as f64;
                bounds.lower[d] + frac * (bounds.upper[d] - bounds.lower[d])
            })
            .collect();
        let s = score(&x);
        if best.as_ref().is_none_or(|(b, _)| s > *b) {
            best = Some((s, x));
        }
        // Odometer increment.
        let mut d = 0;
        loop {
            if d == dim {
                return best.map(|(_, x)| x);
            }
            idx[d] += 1;
            if idx[d] < resolution {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// Multi-start maximization of a score over a box: the warm start, the grid
/// seed when configured, and `restarts` random starts. Failed line searches
/// simply keep their start's value, so the best probe always survives.
fn maximize_multistart<F>(
    score: F,
    bounds: &Bounds,
    starts: &[Vec<f64>],
    opts: &OptimOptions,
) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let out = optim::minimize_fd(|x| -score(x), start, bounds, opts);
        let value = -out.f;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, out.x));
        }
    }
    let (value, x) = best.expect("at least one start");
    (x, value)
}

/// Maximize one vertex's component UCB over its block. Returns the
/// maximizer and the achieved score. Deterministic given `rng`'s state.
pub fn optimize_vertex<R: Rng>(
    gp: &FittedGP,
    vertex: usize,
    t: usize,
    cfg: &UcbConfig,
    rng: &mut R,
    warm: Option<&[f64]>,
) -> (Vec<f64>, f64) {
    let block_dim = gp.spec().vertex(vertex).block().dim();
    assert!(block_dim > 0, "vertex {vertex} carries no block");
    let d_tilde = if cfg.per_vertex_dim {
        block_dim
    } else {
        crate::tree_space::dimensions(gp.spec()).0
    };
    let sqrt_beta = beta(t, d_tilde, cfg).sqrt();
    let bounds = vertex_bounds(gp, vertex);
    let score = |x: &[f64]| component_ucb(gp, vertex, x, sqrt_beta, cfg.minimize);

    let mut starts = Vec::new();
    if let Some(w) = warm {
        let mut w = w.to_vec();
        bounds.clamp(&mut w);
        starts.push(w);
    }
    if let Some(res) = cfg.grid_check {
        if let Some(g) = grid_best(&bounds, res, score) {
            starts.push(g);
        }
    }
    starts.extend(draw_starts(&bounds, cfg.optimizer_restarts, rng));
    maximize_multistart(score, &bounds, &starts, &cfg.optim)
}

/// One step of the per-vertex parallel acquisition: optimize every
/// block-carrying vertex independently, assemble each path's candidate from
/// its vertices' maximizers, pick the path whose candidate scores best
/// under the joint UCB (ties break to the lowest index) and propose that
/// candidate.
pub fn propose(gp: &FittedGP, t: usize, cfg: &UcbConfig, seed: u64, prev: Option<&Proposal>) -> Proposal {
    let spec = gp.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Draw every vertex's restart starts up front so the optimizations can
    // run in any order or in parallel with identical results.
    let mut work = Vec::new();
    for v in spec.block_vertices() {
        let bounds = vertex_bounds(gp, v);
        let mut starts = Vec::new();
        if let Some(w) = prev.and_then(|p| p.vertex_points.get(&v)) {
            let mut w = w.clone();
            bounds.clamp(&mut w);
            starts.push(w);
        }
        starts.extend(draw_starts(&bounds, cfg.optimizer_restarts, &mut rng));
        work.push((v, bounds, starts));
    }

    let results: Vec<(usize, Vec<f64>, f64)> = work
        .into_par_iter()
        .map(|(v, bounds, mut starts)| {
            let block_dim = spec.vertex(v).block().dim();
            let d_tilde = if cfg.per_vertex_dim {
                block_dim
            } else {
                crate::tree_space::dimensions(&spec).0
            };
            let sqrt_beta = beta(t, d_tilde, cfg).sqrt();
            let score = |x: &[f64]| component_ucb(gp, v, x, sqrt_beta, cfg.minimize);
            if let Some(res) = cfg.grid_check {
                if let Some(g) = grid_best(&bounds, res, score) {
                    starts.insert(0, g);
                }
            }
            let (x, u) = maximize_multistart(score, &bounds, &starts, &cfg.optim);
            (v, x, u)
        })
        .collect();

    let optimizations = results.len();
    let mut vertex_scores = BTreeMap::new();
    let mut vertex_points = BTreeMap::new();
    for (v, x, u) in results {
        vertex_scores.insert(v, u);
        vertex_points.insert(v, x);
    }

    // Rank paths by the joint UCB over a small per-path candidate set: the
    // point assembled from the vertices' maximizers plus a few uniform
    // probes. The per-component optima locate good coordinates cheaply, but
    // their summed scores double-count the uncertainty a constant shift
    // between on-path components carries (the decomposition is only
    // identifiable up to such shifts), and on a sparsely observed path the
    // component means that shape the assembled candidate are themselves
    // noise; the joint posterior cancels the phantom through the
    // components' cross-covariance, and the probes expose a sparse path's
    // high-variance regions to the comparison. Only posterior evaluations
    // happen here, no optimization.
    let mut candidates = Vec::with_capacity(spec.leaf_count());
    let mut path_scores = Vec::with_capacity(spec.leaf_count());
    let mut component_path_scores = Vec::with_capacity(spec.leaf_count());
    for i in 0..spec.leaf_count() {
        let values: Vec<Vec<f64>> = spec
            .path(i)
            .iter()
            .filter(|&&v| !spec.vertex(v).block().is_empty())
            .map(|v| vertex_points[v].clone())
            .collect();
        let assembled = StructuredPoint::on_path(&spec, i, &values)
            .expect("per-vertex maximizers respect their bounds");
        let mut best_point = assembled;
        let mut best_score = joint_ucb(gp, &best_point, t, cfg);
        for _ in 0..cfg.selection_probes {
            let probe = sample_on_path(&spec, i, &mut rng);
            let score = joint_ucb(gp, &probe, t, cfg);
            if score > best_score {
                best_score = score;
                best_point = probe;
            }
        }
        path_scores.push(best_score);
        component_path_scores.push(
            spec.path(i)
                .iter()
                .filter_map(|v| vertex_scores.get(v))
                .sum(),
        );
        candidates.push(best_point);
    }
    let best_path = argmax_lowest(&path_scores);
    let point = candidates.swap_remove(best_path);

    Proposal {
        point,
        path: best_path,
        score: path_scores[best_path],
        vertex_scores,
        vertex_points,
        path_scores,
        component_path_scores,
        optimizations,
    }
}

/// The naive per-leaf acquisition: maximize the full-path joint UCB over
/// each leaf's effective-dimension box and take the best leaf. Costs one
/// optimization per path instead of one per vertex.
pub fn naive_propose(
    gp: &FittedGP,
    t: usize,
    cfg: &UcbConfig,
    seed: u64,
    prev: Option<&Proposal>,
) -> Proposal {
    let spec = gp.spec().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut work = Vec::new();
    for leaf in 0..spec.leaf_count() {
        let block_vertices: Vec<usize> = spec
            .path(leaf)
            .iter()
            .copied()
            .filter(|&v| !spec.vertex(v).block().is_empty())
            .collect();
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for &v in &block_vertices {
            let b = spec.vertex(v).block();
            for d in 0..b.dim() {
                lower.push(b.low(d));
                upper.push(b.high(d));
            }
        }
        let bounds = Bounds::new(lower, upper);
        let mut starts = Vec::new();
        if let Some(p) = prev {
            if p.path == leaf && bounds.dim() > 0 {
                let mut w = Vec::new();
                for &v in &block_vertices {
                    w.extend_from_slice(p.point.values_at(v).unwrap());
                }
                bounds.clamp(&mut w);
                starts.push(w);
            }
        }
        starts.extend(draw_starts(&bounds, cfg.optimizer_restarts, &mut rng));
        work.push((leaf, block_vertices, bounds, starts));
    }

    let results: Vec<(usize, StructuredPoint, f64)> = work
        .into_par_iter()
        .map(|(leaf, block_vertices, bounds, mut starts)| {
            let assemble = |x: &[f64]| {
                let mut values = Vec::new();
                let mut off = 0;
                for &v in &block_vertices {
                    let d = spec.vertex(v).block().dim();
                    values.push(x[off..off + d].to_vec());
                    off += d;
                }
                StructuredPoint::on_path(&spec, leaf, &values)
                    .expect("coordinates respect their bounds")
            };
            let score = |x: &[f64]| joint_ucb(gp, &assemble(x), t, cfg);
            if bounds.dim() == 0 {
                // A fully block-less path has a constant score.
                let p = assemble(&[]);
                let s = joint_ucb(gp, &p, t, cfg);
                return (leaf, p, s);
            }
            if let Some(res) = cfg.grid_check {
                if let Some(g) = grid_best(&bounds, res, score) {
                    starts.insert(0, g);
                }
            }
            let (x, u) = maximize_multistart(score, &bounds, &starts, &cfg.optim);
            (leaf, assemble(&x), u)
        })
        .collect();

    let optimizations = results.len();
    let path_scores: Vec<f64> = results.iter().map(|(_, _, u)| *u).collect();
    let best_path = argmax_lowest(&path_scores);
    let point = results[best_path].1.clone();

    Proposal {
        point,
        path: best_path,
        score: path_scores[best_path],
        vertex_scores: BTreeMap::new(),
        vertex_points: BTreeMap::new(),
        path_scores,
        component_path_scores: Vec::new(),
        optimizations,
    }
}

fn argmax_lowest(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gp::{fit, Dataset, FitConfig, FittedGP, NoiseModel};
    use crate::tree_space::{parse_spec, sample_uniform, TreeSpec};
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn jenatton_tree() -> Arc<TreeSpec> {
        parse_spec(include_str!("../specs/jenatton.json"))
            .unwrap()
            .into_shared()
    }

    fn single_vertex_tree() -> Arc<TreeSpec> {
        parse_spec(r#"{"continuous":[{"name":"x","low":-1.0,"high":1.0}]}"#)
            .unwrap()
            .into_shared()
    }

    fn fitted_on_random(spec: &Arc<TreeSpec>, n: usize, seed: u64) -> FittedGP {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<_> = (0..n).map(|_| sample_uniform(spec, &mut rng)).collect();
        let y: Vec<f64> = points
            .iter()
            .map(|p| {
                p.values()
                    .values()
                    .flat_map(|v| v.iter())
                    .map(|x| (x - 0.3) * (x - 0.3))
                    .sum()
            })
            .collect();
        let data = Dataset::new(spec.clone(), points, y, NoiseModel::Learn).unwrap();
        fit(data, &FitConfig::with_seed(seed)).unwrap()
    }

    #[test]
    fn beta_values() {
        let cfg = UcbConfig::default();
        assert_relative_eq!(beta(1, 1, &cfg), 0.2 * 2.0f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(beta(2, 2, &cfg), 0.4 * 4.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn beta_is_strictly_increasing() {
        let cfg = UcbConfig::default();
        for t in 1..20 {
            assert!(beta(t + 1, 3, &cfg) > beta(t, 3, &cfg));
        }
        for d in 1..6 {
            assert!(beta(5, d + 1, &cfg) > beta(5, d, &cfg));
        }
    }

    #[test]
    fn prior_vertex_score_is_sqrt_beta_sigma() {
        let spec = jenatton_tree();
        let gp = FittedGP::prior(spec, &FitConfig::default()).unwrap();
        let cfg = UcbConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (x, u) = optimize_vertex(&gp, 1, 1, &cfg, &mut rng, None);
        let sigma = gp.kernel().params()[&1].variance();
        let expected = beta(1, 1, &cfg).sqrt() * sigma.sqrt();
        assert_relative_eq!(u, expected, epsilon = 1e-12);
        let block = gp.spec().vertex(1).block();
        assert!(block.contains(&x));
    }

    #[test]
    fn vertex_optimum_matches_grid_oracle() {
        let spec = jenatton_tree();
        let cfg = UcbConfig::default();
        for seed in 0..5 {
            let gp = fitted_on_random(&spec, 12, seed);
            for v in [1usize, 3] {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let (x, u) = optimize_vertex(&gp, v, 3, &cfg, &mut rng, None);
                let block = gp.spec().vertex(v).block();
                assert!(block.contains(&x));
                let sqrt_beta = beta(3, 1, &cfg).sqrt();
                let mut grid_max = f64::NEG_INFINITY;
                for k in 0..200 {
                    let xv = block.low(0) + block.width(0) * k as f64 / 199.0;
                    grid_max = grid_max.max(component_ucb(&gp, v, &[xv], sqrt_beta, cfg.minimize));
                }
                assert!(
                    u >= grid_max - 1e-3,
                    "vertex {v} seed {seed}: optimum {u} below grid {grid_max}"
                );
            }
        }
    }

    #[test]
    fn vertex_optimum_dominates_random_probes() {
        let spec = jenatton_tree();
        let gp = fitted_on_random(&spec, 15, 9);
        let cfg = UcbConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (_, u) = optimize_vertex(&gp, 3, 5, &cfg, &mut rng, None);
        let sqrt_beta = beta(5, 1, &cfg).sqrt();
        let block = gp.spec().vertex(3).block();
        for _ in 0..100 {
            let xv = rng.gen_range(block.low(0)..block.high(0));
            assert!(u >= component_ucb(&gp, 3, &[xv], sqrt_beta, cfg.minimize) - 1e-9);
        }
    }

    #[test]
    fn propose_counts_vertex_optimizations() {
        let spec = jenatton_tree();
        let gp = fitted_on_random(&spec, 10, 3);
        let prop = propose(&gp, 4, &UcbConfig::default(), 7, None);
        assert_eq!(prop.optimizations, 6);
        let naive = naive_propose(&gp, 4, &UcbConfig::default(), 7, None);
        assert_eq!(naive.optimizations, 4);
    }

    #[test]
    fn propose_scores_are_reproducible() {
        let spec = jenatton_tree();
        let gp = fitted_on_random(&spec, 14, 4);
        let cfg = UcbConfig::default();
        let prop = propose(&gp, 2, &cfg, 11, None);
        // The diagnostic sums are the per-vertex optima accumulated along
        // each path.
        for i in 0..spec.leaf_count() {
            let expected: f64 = spec
                .path(i)
                .iter()
                .filter_map(|v| prop.vertex_scores.get(v))
                .sum();
            assert_eq!(prop.component_path_scores[i], expected);
        }
        // Selection scores reproduce the joint UCB at the assembled
        // candidates; the winning path's candidate is the proposal itself.
        assert!((prop.path_scores[prop.path] - joint_ucb(&gp, &prop.point, 2, &cfg)).abs() < 1e-12);
        // Vertex scores reproduce the component UCB at the returned
        // coordinates.
        for (&v, &u) in &prop.vertex_scores {
            let sqrt_beta = beta(2, spec.vertex(v).block().dim(), &cfg).sqrt();
            let again = component_ucb(&gp, v, &prop.vertex_points[&v], sqrt_beta, cfg.minimize);
            assert!((u - again).abs() < 1e-10);
        }
        // Determinism.
        let prop2 = propose(&gp, 2, &cfg, 11, None);
        assert_eq!(prop.point, prop2.point);
        assert_eq!(prop.path_scores, prop2.path_scores);
    }

    #[test]
    fn prior_symmetric_tree_tie_breaks_to_path_zero() {
        let spec = jenatton_tree();
        let gp = FittedGP::prior(spec, &FitConfig::default()).unwrap();
        let prop = propose(&gp, 1, &UcbConfig::default(), 5, None);
        let first = prop.path_scores[0];
        for &s in &prop.path_scores {
            assert_relative_eq!(s, first, epsilon = 1e-12);
        }
        assert_eq!(prop.path, 0);
    }

    #[test]
    fn single_vertex_tree_propose_matches_naive() {
        let spec = single_vertex_tree();
        let gp = fitted_on_random(&spec, 8, 6);
        let cfg = UcbConfig {
            grid_check: Some(200),
            ..UcbConfig::default()
        };
        let a = propose(&gp, 3, &cfg, 13, None);
        let b = naive_propose(&gp, 3, &cfg, 13, None);
        let xa = a.point.values_at(0).unwrap()[0];
        let xb = b.point.values_at(0).unwrap()[0];
        assert!(
            (xa - xb).abs() < 1e-6,
            "per-vertex {xa} vs joint {xb} maximizer"
        );
    }

    #[test]
    fn naive_dominates_propose_on_joint_ucb() {
        let spec = jenatton_tree();
        let cfg = UcbConfig {
            grid_check: Some(40),
            ..UcbConfig::default()
        };
        for seed in 0..5 {
            let gp = fitted_on_random(&spec, 12, 50 + seed);
            let prop = propose(&gp, 3, &cfg, seed, None);
            let naive = naive_propose(&gp, 3, &cfg, seed, None);
            let at_prop = joint_ucb(&gp, &prop.point, 3, &cfg);
            assert!(
                naive.score >= at_prop - 1e-6,
                "seed {seed}: naive {} vs joint-UCB at propose's point {at_prop}",
                naive.score
            );
        }
    }

    #[test]
    fn proposals_stay_in_bounds() {
        let spec = jenatton_tree();
        let gp = fitted_on_random(&spec, 20, 8);
        for t in 1..6 {
            let prop = propose(&gp, t, &UcbConfig::default(), t as u64, None);
            gp.spec().validate_point(&prop.point).unwrap();
            let naive = naive_propose(&gp, t, &UcbConfig::default(), t as u64, None);
            gp.spec().validate_point(&naive.point).unwrap();
        }
    }

    #[test]
    fn warm_start_is_honored() {
        let spec = jenatton_tree();
        let gp = fitted_on_random(&spec, 10, 12);
        let cfg = UcbConfig::default();
        let first = propose(&gp, 5, &cfg, 3, None);
        let second = propose(&gp, 6, &cfg, 4, Some(&first));
        gp.spec().validate_point(&second.point).unwrap();
    }
}
