//! Optimization strategies behind a common step interface.
//!
//! Every strategy exposes `propose(t) -> point` followed by
//! `observe(point, y)`, so the benchmark harness can drive them uniformly:
//!
//! - `Random`: uniform sampling of the tree space.
//! - `AddTree`: the tree-kernel GP with per-vertex parallel GP-UCB.
//! - `Independent`: one standard SE GP per leaf over that leaf's effective
//!   dimensions, fitted on that leaf's observations only; leaves without
//!   data propose from the prior (pure exploration).
//! - `OneHot`: a single SE GP over a flattened box holding every continuous
//!   dimension plus one 0/1 indicator per categorical setting; off-path
//!   dimensions are imputed at the box midpoint on ingest and proposals are
//!   rounded to the nearest valid one-hot pattern.
//!
//! Model-based strategies spend their first `init_design` proposals on
//! random points before the first fit.
//!
//! An independent or one-hot GP over a plain box is realized as an additive
//! tree kernel on a single-vertex tree, which is exactly a standard SE GP,
//! so all strategies share one inference path.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::acquisition::{self, Proposal, UcbConfig};
use crate::gp::{fit, Dataset, FitConfig, FittedGP, GpError, NoiseModel};
use crate::tree_space::{
    sample_uniform, ContinuousBlock, PointError, SpecError, StructuredPoint, TreeSpec, Vertex,
};

#[derive(Debug, Error)]
pub enum StrategyError {
    #[error("gp error: {0}")]
    Gp(#[from] GpError),
    #[error("point error: {0}")]
    Point(#[from] PointError),
    #[error("spec error: {0}")]
    Spec(#[from] SpecError),
}

/// Strategy selector, also the CLI `--algo` domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StrategyKind {
    Random,
    Independent,
    OneHot,
    AddTree,
}

impl StrategyKind {
    pub fn name(&self) -> &'static str {
        match self {
            StrategyKind::Random => "random",
            StrategyKind::Independent => "independent",
            StrategyKind::OneHot => "onehot",
            StrategyKind::AddTree => "addtree",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "random" => Some(StrategyKind::Random),
            "independent" => Some(StrategyKind::Independent),
            "onehot" => Some(StrategyKind::OneHot),
            "addtree" => Some(StrategyKind::AddTree),
            _ => None,
        }
    }
}

/// Shared strategy settings.
#[derive(Debug, Clone)]
pub struct StrategyOptions {
    pub ucb: UcbConfig,
    /// Restarts for every marginal-likelihood fit.
    pub fit_restarts: usize,
    /// Random points evaluated before the first model fit.
    pub init_design: usize,
    /// Interaction pairs for the tree kernel (AddTree only).
    pub interactions: Vec<(usize, usize)>,
    /// Fit one shared variance and lengthscale (the isotropic kernel with
    /// pooled hyperparameters) instead of free per-vertex parameters.
    pub tied_params: bool,
}

impl Default for StrategyOptions {
    fn default() -> Self {
        Self {
            ucb: UcbConfig::default(),
            fit_restarts: 5,
            init_design: 2,
            interactions: Vec::new(),
            tied_params: true,
        }
    }
}

/// Uniform random search step.
pub fn random_step<R: Rng>(spec: &TreeSpec, rng: &mut R) -> StructuredPoint {
    sample_uniform(spec, rng)
}

/// A strategy instance: single-owner mutable state driving one run.
pub enum Strategy {
    Random(RandomState),
    AddTree(AddTreeState),
    Independent(IndependentState),
    OneHot(OneHotState),
}

impl Strategy {
    pub fn new(
        kind: StrategyKind,
        spec: Arc<TreeSpec>,
        seed: u64,
        options: StrategyOptions,
    ) -> Result<Self, StrategyError> {
        Ok(match kind {
            StrategyKind::Random => Strategy::Random(RandomState {
                spec,
                rng: ChaCha8Rng::seed_from_u64(seed),
            }),
            StrategyKind::AddTree => Strategy::AddTree(AddTreeState {
                data: Dataset::empty(spec.clone()),
                spec,
                seed,
                options,
                rng: ChaCha8Rng::seed_from_u64(seed),
                warm_params: None,
                prev_proposal: None,
                last_gp: None,
                fits: 0,
            }),
            StrategyKind::Independent => {
                Strategy::Independent(IndependentState::new(spec, seed, options)?)
            }
            StrategyKind::OneHot => Strategy::OneHot(OneHotState::new(spec, seed, options)?),
        })
    }

    pub fn kind(&self) -> StrategyKind {
        match self {
            Strategy::Random(_) => StrategyKind::Random,
            Strategy::AddTree(_) => StrategyKind::AddTree,
            Strategy::Independent(_) => StrategyKind::Independent,
            Strategy::OneHot(_) => StrategyKind::OneHot,
        }
    }

    /// Propose the next evaluation point for step `t` (1-based).
    pub fn propose(&mut self, t: usize) -> Result<StructuredPoint, StrategyError> {
        match self {
            Strategy::Random(s) => Ok(random_step(&s.spec, &mut s.rng)),
            Strategy::AddTree(s) => s.propose(t),
            Strategy::Independent(s) => s.propose(t),
            Strategy::OneHot(s) => s.propose(t),
        }
    }

    /// Record an observed objective value.
    pub fn observe(&mut self, point: StructuredPoint, y: f64) -> Result<(), StrategyError> {
        match self {
            Strategy::Random(_) => Ok(()),
            Strategy::AddTree(s) => {
                s.data.push(point, y)?;
                Ok(())
            }
            Strategy::Independent(s) => s.observe(point, y),
            Strategy::OneHot(s) => s.observe(point, y),
        }
    }

    /// Fitted hyperparameters of the most recent model fit, for run manifests.
    pub fn fitted_params(&self) -> Option<BTreeMap<String, f64>> {
        match self {
            Strategy::Random(_) => None,
            Strategy::AddTree(s) => s.last_gp.as_ref().map(|gp| gp.named_params()),
            Strategy::Independent(s) => {
                let mut out = BTreeMap::new();
                for (leaf, model) in s.models.iter().enumerate() {
                    if let Some(gp) = &model.gp {
                        for (k, v) in gp.named_params() {
                            out.insert(format!("leaf{leaf}.{k}"), v);
                        }
                    }
                }
                (!out.is_empty()).then_some(out)
            }
            Strategy::OneHot(s) => s.gp.as_ref().map(|gp| gp.named_params()),
        }
    }
}

pub struct RandomState {
    spec: Arc<TreeSpec>,
    rng: ChaCha8Rng,
}

pub struct AddTreeState {
    spec: Arc<TreeSpec>,
    data: Dataset,
    seed: u64,
    options: StrategyOptions,
    rng: ChaCha8Rng,
    warm_params: Option<Vec<f64>>,
    prev_proposal: Option<Proposal>,
    last_gp: Option<FittedGP>,
    fits: usize,
}

impl AddTreeState {
    fn propose(&mut self, t: usize) -> Result<StructuredPoint, StrategyError> {
        if self.data.len() < self.options.init_design {
            return Ok(sample_uniform(&self.spec, &mut self.rng));
        }
        self.fits += 1;
        let config = FitConfig {
            restarts: self.options.fit_restarts,
            seed: derive_seed(self.seed, 1, self.fits as u64),
            warm_start: self.warm_params.clone(),
            interactions: self.options.interactions.clone(),
            tied: self.options.tied_params,
            ..FitConfig::default()
        };
        let gp = fit(self.data.clone(), &config)?;
        self.warm_params = Some(gp.warm_start_vector(self.options.tied_params));

        let acq_seed = derive_seed(self.seed, 2, t as u64);
        let proposal = acquisition::propose(
            &gp,
            t,
            &self.options.ucb,
            acq_seed,
            self.prev_proposal.as_ref(),
        );
        self.last_gp = Some(gp);
        self.prev_proposal = Some(proposal.clone());
        Ok(proposal.point)
    }
}

/// One GP per leaf over the leaf's effective-dimension box.
pub struct IndependentState {
    spec: Arc<TreeSpec>,
    models: Vec<LeafModel>,
    seed: u64,
    options: StrategyOptions,
    rng: ChaCha8Rng,
    init_seen: usize,
}

struct LeafModel {
    /// Single-vertex spec over the leaf's concatenated blocks.
    flat_spec: Arc<TreeSpec>,
    /// Block-carrying vertices along the original path, in path order.
    block_vertices: Vec<usize>,
    points: Vec<StructuredPoint>,
    y: Vec<f64>,
    gp: Option<FittedGP>,
    stale: bool,
    fits: usize,
}

fn derive_seed(base: u64, stream: u64, t: u64) -> u64 {
    // splitmix64 over a combined word; decorrelates the per-step streams.
    let mut z = base
        .wrapping_add(stream.wrapping_mul(0x9E3779B97F4A7C15))
        .wrapping_add(t.wrapping_mul(0xBF58476D1CE4E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Single-vertex spec holding one leaf's effective dimensions.
fn leaf_flat_spec(spec: &TreeSpec, leaf: usize) -> Result<(Arc<TreeSpec>, Vec<usize>), SpecError> {
    let mut names = Vec::new();
    let mut lows = Vec::new();
    let mut highs = Vec::new();
    let mut block_vertices = Vec::new();
    for &v in spec.path(leaf) {
        let b = spec.vertex(v).block();
        if b.is_empty() {
            continue;
        }
        block_vertices.push(v);
        for d in 0..b.dim() {
            names.push(format!("v{v}.{}", b.names()[d]));
            lows.push(b.low(d));
            highs.push(b.high(d));
        }
    }
    let block = if names.is_empty() {
        ContinuousBlock::empty()
    } else {
        ContinuousBlock::new(names, lows, highs)?
    };
    let flat = TreeSpec::from_vertices(vec![Vertex::new(0, block, vec![])], 0)?;
    Ok((flat.into_shared(), block_vertices))
}

fn flat_coords(point: &StructuredPoint, block_vertices: &[usize]) -> Vec<f64> {
    let mut out = Vec::new();
    for &v in block_vertices {
        out.extend_from_slice(point.values_at(v).unwrap_or(&[]));
    }
    out
}

impl IndependentState {
    fn new(
        spec: Arc<TreeSpec>,
        seed: u64,
        options: StrategyOptions,
    ) -> Result<Self, StrategyError> {
        let mut models = Vec::new();
        for leaf in 0..spec.leaf_count() {
            let (flat_spec, block_vertices) = leaf_flat_spec(&spec, leaf)?;
            models.push(LeafModel {
                flat_spec,
                block_vertices,
                points: Vec::new(),
                y: Vec::new(),
                gp: None,
                stale: true,
                fits: 0,
            });
        }
        Ok(Self {
            spec,
            models,
            seed,
            options,
            rng: ChaCha8Rng::seed_from_u64(seed),
            init_seen: 0,
        })
    }

    pub fn model_count(&self) -> usize {
        self.models.len()
    }

    /// Number of observations held by each leaf's model.
    pub fn observations_per_leaf(&self) -> Vec<usize> {
        self.models.iter().map(|m| m.y.len()).collect()
    }

    fn observe(&mut self, point: StructuredPoint, y: f64) -> Result<(), StrategyError> {
        let leaf = self.spec.path_of_point(&point)?;
        let model = &mut self.models[leaf];
        let coords = flat_coords(&point, &model.block_vertices);
        let flat_point = if model.flat_spec.vertex(0).block().is_empty() {
            StructuredPoint::on_path(&model.flat_spec, 0, &[])?
        } else {
            StructuredPoint::on_path(&model.flat_spec, 0, &[coords])?
        };
        model.points.push(flat_point);
        model.y.push(y);
        model.stale = true;
        Ok(())
    }

    fn refit(&mut self, leaf: usize) -> Result<(), StrategyError> {
        let seed = self.seed;
        let restarts = self.options.fit_restarts;
        let model = &mut self.models[leaf];
        if !model.stale {
            return Ok(());
        }
        model.gp = if model.points.is_empty() {
            Some(FittedGP::prior(model.flat_spec.clone(), &FitConfig::default())?)
        } else {
            model.fits += 1;
            let config = FitConfig {
                restarts,
                seed: derive_seed(seed, 10 + leaf as u64, model.fits as u64),
                tied: self.options.tied_params,
                ..FitConfig::default()
            };
            Some(fit(
                Dataset::new(
                    model.flat_spec.clone(),
                    model.points.clone(),
                    model.y.clone(),
                    NoiseModel::Learn,
                )?,
                &config,
            )?)
        };
        model.stale = false;
        Ok(())
    }

    fn propose(&mut self, t: usize) -> Result<StructuredPoint, StrategyError> {
        if self.init_seen < self.options.init_design {
            self.init_seen += 1;
            return Ok(sample_uniform(&self.spec, &mut self.rng));
        }
        for leaf in 0..self.models.len() {
            self.refit(leaf)?;
        }
        // Standard GP-UCB per leaf over its effective dimensions; the best
        // leaf wins, ties to the lowest index.
        let mut best: Option<(f64, usize, StructuredPoint)> = None;
        for (leaf, model) in self.models.iter().enumerate() {
            let gp = model.gp.as_ref().expect("refit populated every leaf");
            let proposal = acquisition::naive_propose(
                gp,
                t,
                &self.options.ucb,
                derive_seed(self.seed, 20 + leaf as u64, t as u64),
                None,
            );
            if best.as_ref().is_none_or(|(b, _, _)| proposal.score > *b) {
                let coords = proposal.point.values_at(0).unwrap_or(&[]);
                let original = self.unflatten(leaf, coords)?;
                best = Some((proposal.score, leaf, original));
            }
        }
        Ok(best.expect("at least one leaf").2)
    }

    fn unflatten(&self, leaf: usize, coords: &[f64]) -> Result<StructuredPoint, StrategyError> {
        let model = &self.models[leaf];
        let mut values = Vec::new();
        let mut off = 0;
        for &v in &model.block_vertices {
            let d = self.spec.vertex(v).block().dim();
            values.push(coords[off..off + d].to_vec());
            off += d;
        }
        Ok(StructuredPoint::on_path(&self.spec, leaf, &values)?)
    }
}

/// One GP over a flattened box: continuous dimensions plus one indicator per
/// categorical setting.
pub struct OneHotState {
    spec: Arc<TreeSpec>,
    flat_spec: Arc<TreeSpec>,
    /// (vertex, dim-range start) for continuous dims, in BFS order.
    continuous_offsets: Vec<(usize, usize)>,
    /// (branching vertex, child index, flat dim) per indicator.
    indicators: Vec<(usize, usize, usize)>,
    points: Vec<StructuredPoint>,
    y: Vec<f64>,
    gp: Option<FittedGP>,
    stale: bool,
    fits: usize,
    seed: u64,
    options: StrategyOptions,
    rng: ChaCha8Rng,
    init_seen: usize,
}

impl OneHotState {
    fn new(
        spec: Arc<TreeSpec>,
        seed: u64,
        options: StrategyOptions,
    ) -> Result<Self, StrategyError> {
        let mut names = Vec::new();
        let mut lows = Vec::new();
        let mut highs = Vec::new();
        let mut continuous_offsets = Vec::new();
        for v in spec.vertices() {
            let b = v.block();
            if b.is_empty() {
                continue;
            }
            continuous_offsets.push((v.id(), names.len()));
            for d in 0..b.dim() {
                names.push(format!("v{}.{}", v.id(), b.names()[d]));
                lows.push(b.low(d));
                highs.push(b.high(d));
            }
        }
        let mut indicators = Vec::new();
        for v in spec.vertices() {
            if !v.is_branching() {
                continue;
            }
            for (c, (label, _)) in v.children().iter().enumerate() {
                indicators.push((v.id(), c, names.len()));
                names.push(format!("cat{}={}", v.id(), label));
                lows.push(0.0);
                highs.push(1.0);
            }
        }
        let block = ContinuousBlock::new(names, lows, highs)?;
        let flat = TreeSpec::from_vertices(vec![Vertex::new(0, block, vec![])], 0)?;
        Ok(Self {
            spec,
            flat_spec: flat.into_shared(),
            continuous_offsets,
            indicators,
            points: Vec::new(),
            y: Vec::new(),
            gp: None,
            stale: true,
            fits: 0,
            seed,
            options,
            rng: ChaCha8Rng::seed_from_u64(seed),
            init_seen: 0,
        })
    }

    /// Total dimension of the flattened space.
    pub fn flat_dim(&self) -> usize {
        self.flat_spec.vertex(0).block().dim()
    }

    /// Flatten an observation: on-path continuous values, midpoint
    /// imputation off path, exact 0/1 indicators.
    pub fn flatten(&self, point: &StructuredPoint) -> Result<Vec<f64>, StrategyError> {
        let leaf = self.spec.path_of_point(point)?;
        let path = self.spec.path(leaf);
        let mut coords = vec![0.0; self.flat_dim()];
        for &(v, off) in &self.continuous_offsets {
            let block = self.spec.vertex(v).block();
            let values: Vec<f64> = if path.contains(&v) {
                point.values_at(v).unwrap().to_vec()
            } else {
                block.midpoint()
            };
            coords[off..off + block.dim()].copy_from_slice(&values);
        }
        for &(v, c, dim) in &self.indicators {
            let on = path.contains(&v)
                && point.choices().get(&v).map(|l| l.as_str())
                    == Some(self.spec.vertex(v).children()[c].0.as_str());
            coords[dim] = if on { 1.0 } else { 0.0 };
        }
        Ok(coords)
    }

    /// Round a flat proposal to the nearest valid one-hot pattern and read
    /// off the selected path's continuous values.
    fn unflatten(&self, coords: &[f64]) -> Result<StructuredPoint, StrategyError> {
        let mut choices = BTreeMap::new();
        let mut cur = self.spec.root();
        loop {
            let v = self.spec.vertex(cur);
            if v.is_leaf() {
                break;
            }
            let next = if v.is_branching() {
                let mut best_c = 0;
                let mut best_val = f64::NEG_INFINITY;
                for &(iv, c, dim) in &self.indicators {
                    if iv == cur && coords[dim] > best_val {
                        best_val = coords[dim];
                        best_c = c;
                    }
                }
                let (label, child) = &v.children()[best_c];
                choices.insert(cur, label.clone());
                *child
            } else {
                v.children()[0].1
            };
            cur = next;
        }
        let leaf = self.spec.path_of_leaf(cur).expect("walk ends at a leaf");
        let mut values = Vec::new();
        for &v in self.spec.path(leaf) {
            let block = self.spec.vertex(v).block();
            if block.is_empty() {
                continue;
            }
            let off = self
                .continuous_offsets
                .iter()
                .find(|&&(iv, _)| iv == v)
                .map(|&(_, o)| o)
                .expect("every block vertex is flattened");
            values.push(coords[off..off + block.dim()].to_vec());
        }
        Ok(StructuredPoint::on_path(&self.spec, leaf, &values)?)
    }

    fn observe(&mut self, point: StructuredPoint, y: f64) -> Result<(), StrategyError> {
        let coords = self.flatten(&point)?;
        self.points
            .push(StructuredPoint::on_path(&self.flat_spec, 0, &[coords])?);
        self.y.push(y);
        self.stale = true;
        Ok(())
    }

    fn propose(&mut self, t: usize) -> Result<StructuredPoint, StrategyError> {
        if self.init_seen < self.options.init_design {
            self.init_seen += 1;
            return Ok(sample_uniform(&self.spec, &mut self.rng));
        }
        if self.stale {
            self.gp = if self.points.is_empty() {
                Some(FittedGP::prior(self.flat_spec.clone(), &FitConfig::default())?)
            } else {
                self.fits += 1;
                let config = FitConfig {
                    restarts: self.options.fit_restarts,
                    seed: derive_seed(self.seed, 30, self.fits as u64),
                    tied: self.options.tied_params,
                    ..FitConfig::default()
                };
                Some(fit(
                    Dataset::new(
                        self.flat_spec.clone(),
                        self.points.clone(),
                        self.y.clone(),
                        NoiseModel::Learn,
                    )?,
                    &config,
                )?)
            };
            self.stale = false;
        }
        let gp = self.gp.as_ref().expect("populated above");
        let proposal = acquisition::propose(
            gp,
            t,
            &self.options.ucb,
            derive_seed(self.seed, 31, t as u64),
            None,
        );
        let coords = proposal.point.values_at(0).expect("flat spec has one block");
        self.unflatten(coords)
    }
}

/// A per-leaf GP fitted for the regression comparison; sees only its own
/// leaf's training points and predicts through the same inference path as
/// every other model (a single-vertex tree kernel is a plain SE GP).
pub struct LeafRegressor {
    flat_spec: Arc<TreeSpec>,
    block_vertices: Vec<usize>,
    gp: FittedGP,
}

impl LeafRegressor {
    /// Posterior-mean prediction for a point on this regressor's leaf.
    pub fn predict(&self, p: &StructuredPoint) -> Option<f64> {
        let coords = flat_coords(p, &self.block_vertices);
        let flat = if self.flat_spec.vertex(0).block().is_empty() {
            StructuredPoint::on_path(&self.flat_spec, 0, &[]).ok()?
        } else {
            StructuredPoint::on_path(&self.flat_spec, 0, &[coords]).ok()?
        };
        self.gp.posterior(&flat).ok().map(|post| post.mean)
    }

    pub fn training_size(&self) -> usize {
        self.gp.data().len()
    }
}

/// Fit one GP per leaf on the leaf-restricted subset of a training set.
/// Leaves without data get the prior model.
pub fn leaf_models_for_regression(
    spec: &Arc<TreeSpec>,
    train: &[StructuredPoint],
    train_y: &[f64],
    seed: u64,
    fit_template: &FitConfig,
) -> Result<Vec<LeafRegressor>, StrategyError> {
    let mut models = Vec::with_capacity(spec.leaf_count());
    for leaf in 0..spec.leaf_count() {
        let (flat_spec, block_vertices) = leaf_flat_spec(spec, leaf)?;
        let mut points = Vec::new();
        let mut y = Vec::new();
        for (p, &v) in train.iter().zip(train_y) {
            if spec.path_of_point(p)? != leaf {
                continue;
            }
            let coords = flat_coords(p, &block_vertices);
            let flat_point = if flat_spec.vertex(0).block().is_empty() {
                StructuredPoint::on_path(&flat_spec, 0, &[])?
            } else {
                StructuredPoint::on_path(&flat_spec, 0, &[coords])?
            };
            points.push(flat_point);
            y.push(v);
        }
        let gp = if points.is_empty() {
            FittedGP::prior(flat_spec.clone(), &FitConfig::default())?
        } else {
            fit(
                Dataset::new(flat_spec.clone(), points, y, NoiseModel::Learn)?,
                &FitConfig {
                    seed: derive_seed(seed, 40 + leaf as u64, 0),
                    warm_start: None,
                    interactions: Vec::new(),
                    ..fit_template.clone()
                },
            )?
        };
        models.push(LeafRegressor {
            flat_spec,
            block_vertices,
            gp,
        });
    }
    Ok(models)
}

/// Read an external best-value trace: CSV with columns
/// `iteration,best_value`, one file per run; a header row is skipped.
pub fn load_external_trace(source: &str) -> Result<Vec<(usize, f64)>, ExternalTraceError> {
    let mut out = Vec::new();
    for (lineno, line) in source.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (a, b) = (fields.next(), fields.next());
        let (Some(a), Some(b)) = (a, b) else {
            return Err(ExternalTraceError::BadRow { line: lineno + 1 });
        };
        match (a.trim().parse::<usize>(), b.trim().parse::<f64>()) {
            (Ok(iter), Ok(best)) => out.push((iter, best)),
            (Err(_), _) if lineno == 0 => continue, // header
            _ => return Err(ExternalTraceError::BadRow { line: lineno + 1 }),
        }
    }
    Ok(out)
}

#[derive(Debug, Error)]
pub enum ExternalTraceError {
    #[error("unparseable trace row at line {line}")]
    BadRow { line: usize },
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_space::parse_spec;

    fn jenatton_tree() -> Arc<TreeSpec> {
        parse_spec(include_str!("../specs/jenatton.json"))
            .unwrap()
            .into_shared()
    }

    fn quadratic_objective(p: &StructuredPoint) -> f64 {
        p.values()
            .values()
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            + 0.1
    }

    #[test]
    fn random_step_stays_in_bounds_and_balanced() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut left = 0;
        let n = 10_000;
        for _ in 0..n {
            let p = random_step(&spec, &mut rng);
            spec.validate_point(&p).unwrap();
            if p.choices()[&0] == "0" {
                left += 1;
            }
        }
        let freq = left as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.05);
    }

    #[test]
    fn random_streams_are_deterministic() {
        let spec = jenatton_tree();
        let mut a = Strategy::new(StrategyKind::Random, spec.clone(), 11, StrategyOptions::default()).unwrap();
        let mut b = Strategy::new(StrategyKind::Random, spec, 11, StrategyOptions::default()).unwrap();
        for t in 1..20 {
            assert_eq!(a.propose(t).unwrap(), b.propose(t).unwrap());
        }
    }

    #[test]
    fn independent_has_one_model_per_leaf() {
        let spec = jenatton_tree();
        let s = IndependentState::new(spec, 1, StrategyOptions::default()).unwrap();
        assert_eq!(s.model_count(), 4);
        // Effective dimension of every flat spec is 2.
        for m in &s.models {
            assert_eq!(m.flat_spec.vertex(0).block().dim(), 2);
        }
    }

    #[test]
    fn independent_never_shares_observations_across_leaves() {
        let spec = jenatton_tree();
        let mut s = IndependentState::new(spec.clone(), 2, StrategyOptions::default()).unwrap();
        // Feed observations only on leaf 0.
        for i in 0..4 {
            let p = StructuredPoint::on_path(&spec, 0, &[vec![0.2 * i as f64], vec![0.1]]).unwrap();
            let y = quadratic_objective(&p);
            s.observe(p, y).unwrap();
        }
        assert_eq!(s.observations_per_leaf(), vec![4, 0, 0, 0]);
        for leaf in 0..4 {
            s.refit(leaf).unwrap();
        }
        // Leaf 2 has no data: its model is the prior.
        let gp = s.models[2].gp.as_ref().unwrap();
        assert!(gp.data().is_empty());
        let flat = &s.models[2].flat_spec;
        let x = StructuredPoint::on_path(flat, 0, &[vec![0.0, 0.5]]).unwrap();
        let post = gp.posterior(&x).unwrap();
        assert_eq!(post.mean, 0.0);
        assert!(post.variance > 0.0);
    }

    #[test]
    fn independent_proposals_are_valid_points() {
        let spec = jenatton_tree();
        let mut s = Strategy::new(
            StrategyKind::Independent,
            spec.clone(),
            5,
            StrategyOptions::default(),
        )
        .unwrap();
        for t in 1..=6 {
            let p = s.propose(t).unwrap();
            spec.validate_point(&p).unwrap();
            let y = quadratic_objective(&p);
            s.observe(p, y).unwrap();
        }
    }

    #[test]
    fn onehot_flat_dimension_matches_structure() {
        let spec = jenatton_tree();
        let s = OneHotState::new(spec, 1, StrategyOptions::default()).unwrap();
        // 6 continuous dimensions plus 6 indicators (three binary choices).
        assert_eq!(s.flat_dim(), 12);
    }

    #[test]
    fn onehot_flatten_imputes_and_indicates() {
        let spec = jenatton_tree();
        let s = OneHotState::new(spec.clone(), 1, StrategyOptions::default()).unwrap();
        let p = StructuredPoint::on_path(&spec, 0, &[vec![0.25], vec![-0.5]]).unwrap();
        let coords = s.flatten(&p).unwrap();
        for &(_, _, dim) in &s.indicators {
            assert!(coords[dim] == 0.0 || coords[dim] == 1.0);
        }
        // Chosen: root -> "0" -> "0"; indicator layout is two per branching vertex.
        let on: Vec<f64> = s.indicators.iter().map(|&(_, _, d)| coords[d]).collect();
        assert_eq!(on, vec![1.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
        // Off-path leaf dimensions sit at their midpoints (0 for [-1, 1]).
        let x5_off = s
            .continuous_offsets
            .iter()
            .find(|&&(v, _)| v == 4)
            .map(|&(_, o)| o)
            .unwrap();
        assert_eq!(coords[x5_off], 0.0);
    }

    #[test]
    fn onehot_rounding_projects_to_valid_pattern() {
        let spec = jenatton_tree();
        let s = OneHotState::new(spec.clone(), 1, StrategyOptions::default()).unwrap();
        let mut coords = vec![0.0; s.flat_dim()];
        // Ambiguous fractional indicators.
        for &(_, c, dim) in &s.indicators {
            coords[dim] = if c == 1 { 0.9 } else { 0.4 };
        }
        let p = s.unflatten(&coords).unwrap();
        spec.validate_point(&p).unwrap();
        assert_eq!(p.choices()[&0], "1");
    }

    #[test]
    fn onehot_proposals_are_valid_points() {
        let spec = jenatton_tree();
        let mut s = Strategy::new(StrategyKind::OneHot, spec.clone(), 9, StrategyOptions::default())
            .unwrap();
        for t in 1..=4 {
            let p = s.propose(t).unwrap();
            spec.validate_point(&p).unwrap();
            let y = quadratic_objective(&p);
            s.observe(p, y).unwrap();
        }
    }

    #[test]
    fn addtree_strategy_runs_and_reports_params() {
        let spec = jenatton_tree();
        let mut s = Strategy::new(StrategyKind::AddTree, spec.clone(), 4, StrategyOptions::default())
            .unwrap();
        assert!(s.fitted_params().is_none());
        for t in 1..=5 {
            let p = s.propose(t).unwrap();
            spec.validate_point(&p).unwrap();
            let y = quadratic_objective(&p);
            s.observe(p, y).unwrap();
        }
        let params = s.fitted_params().unwrap();
        assert!(params.contains_key("log_noise_variance"));
    }

    #[test]
    fn external_trace_roundtrip() {
        let src = "iteration,best_value\n1,0.5\n2,0.25\n3,0.25\n";
        let rows = load_external_trace(src).unwrap();
        assert_eq!(rows, vec![(1, 0.5), (2, 0.25), (3, 0.25)]);
        assert!(load_external_trace("1,hello\n").is_err());
    }
}
