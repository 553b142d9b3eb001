//! Exact Gaussian-process regression with the additive tree kernel.
//!
//! Inference is standard zero-mean GP regression on standardized targets,
//! with one structural twist: conditioning on a query restricted to one
//! root-to-leaf path only needs the observations whose paths share at least
//! one block-carrying vertex with it. Every other observation has exactly
//! zero covariance both to the query and to the retained set, so the
//! restricted posterior equals dense conditioning on all observations; the
//! restriction is cached per leaf at fit time.
//!
//! Hyperparameters (per-vertex log variances and lengthscales, interaction
//! scales and a learned homoscedastic log noise) are fitted by maximizing
//! the marginal log-likelihood with multi-started box-constrained
//! quasi-Newton. Gradients use the standard trace identity with the
//! kernel's analytic gram derivatives.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::kernel::{build_add_tree, AddTreeKernel, ParamInit};
use crate::optim::{self, Bounds, OptimOptions};
use crate::tree_space::{PointError, StructuredPoint, TreeSpec};

/// Noise variance floor and ceiling for the learned homoscedastic model,
/// in log space.
const LOG_NOISE_BOUNDS: (f64, f64) = (-13.815510557964274, 4.605170185988092); // ln 1e-6, ln 1e2
const INITIAL_LOG_NOISE: f64 = -4.605170185988091; // ln 1e-2

/// Cholesky jitter schedule: added to the diagonal, escalated tenfold on
/// factorization failure.
const JITTER_START: f64 = 1e-8;
const JITTER_MAX: f64 = 1e-4;

/// Widths (in log space) of the weak Gaussian priors centered on the init
/// policy that [`fit`] adds to the likelihood. With plentiful data the
/// likelihood dominates; for parameters the data barely constrains the
/// prior keeps the model honest. Two failure modes motivate the two
/// widths: a variance the likelihood can shrink to nothing by absorbing a
/// sparse leaf's residual in a shared vertex, and a lengthscale stretched
/// past the box width on a handful of points, which flattens the posterior
/// variance surface and starves the acquisition of exploration signal.
const MAP_TAU_VARIANCE: f64 = 0.75;
const MAP_TAU_LENGTHSCALE: f64 = 0.6;

#[derive(Debug, Error)]
pub enum GpError {
    #[error("dataset lengths disagree: {points} points, {y} targets")]
    LengthMismatch { points: usize, y: usize },
    #[error("noise vector has length {got}, expected {expected}")]
    NoiseLength { expected: usize, got: usize },
    #[error("negative noise variance {0}")]
    NegativeNoise(f64),
    #[error("invalid point: {0}")]
    Point(#[from] PointError),
    #[error("gram matrix is not positive definite even at maximum jitter {JITTER_MAX}")]
    NotPositiveDefinite,
    #[error("fit requires at least one observation; use FittedGP::prior for the no-data model")]
    EmptyDataset,
    #[error("warm start has {got} parameters, model has {expected}")]
    WarmStartLength { expected: usize, got: usize },
    #[error("vertex {0} carries no continuous block")]
    EmptyBlockVertex(usize),
    #[error("kernel error: {0}")]
    Kernel(#[from] crate::kernel::KernelError),
}

/// Observation noise: fixed per-observation variances or a single
/// homoscedastic variance learned alongside the kernel parameters.
#[derive(Debug, Clone)]
pub enum NoiseModel {
    Fixed(Vec<f64>),
    Learn,
}

/// Observations over a tree-structured space.
#[derive(Debug, Clone)]
pub struct Dataset {
    spec: Arc<TreeSpec>,
    points: Vec<StructuredPoint>,
    leaves: Vec<usize>,
    y: Vec<f64>,
    noise: NoiseModel,
}

impl Dataset {
    pub fn new(
        spec: Arc<TreeSpec>,
        points: Vec<StructuredPoint>,
        y: Vec<f64>,
        noise: NoiseModel,
    ) -> Result<Self, GpError> {
        if points.len() != y.len() {
            return Err(GpError::LengthMismatch {
                points: points.len(),
                y: y.len(),
            });
        }
        if let NoiseModel::Fixed(v) = &noise {
            if v.len() != points.len() {
                return Err(GpError::NoiseLength {
                    expected: points.len(),
                    got: v.len(),
                });
            }
            if let Some(&bad) = v.iter().find(|&&s| s < 0.0) {
                return Err(GpError::NegativeNoise(bad));
            }
        }
        let mut leaves = Vec::with_capacity(points.len());
        for p in &points {
            spec.validate_point(p)?;
            leaves.push(spec.path_of_point(p)?);
        }
        Ok(Self {
            spec,
            points,
            leaves,
            y,
            noise,
        })
    }

    pub fn empty(spec: Arc<TreeSpec>) -> Self {
        Self {
            spec,
            points: Vec::new(),
            leaves: Vec::new(),
            y: Vec::new(),
            noise: NoiseModel::Learn,
        }
    }

    /// Append one observation (learned-noise datasets).
    pub fn push(&mut self, point: StructuredPoint, y: f64) -> Result<(), GpError> {
        self.spec.validate_point(&point)?;
        self.leaves.push(self.spec.path_of_point(&point)?);
        self.points.push(point);
        self.y.push(y);
        if let NoiseModel::Fixed(v) = &mut self.noise {
            v.push(0.0);
        }
        Ok(())
    }

    pub fn spec(&self) -> &Arc<TreeSpec> {
        &self.spec
    }

    pub fn points(&self) -> &[StructuredPoint] {
        &self.points
    }

    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The observations with nonzero structural covariance to a query point:
/// exactly those whose paths share at least one block-carrying vertex with
/// the query's path.
#[derive(Debug, Clone)]
pub struct ActiveSet {
    pub indices: Vec<usize>,
    pub points: Vec<StructuredPoint>,
    pub y: Vec<f64>,
    /// Fixed per-observation noise variances; zeros under a learned noise
    /// model (the learned value is added at conditioning time).
    pub noise: Vec<f64>,
}

/// Indices of the observations sharing a block-carrying vertex with a path.
pub fn active_indices(data: &Dataset, leaf: usize) -> Vec<usize> {
    data.leaves()
        .iter()
        .enumerate()
        .filter(|&(_, &li)| !data.spec().shared_block_vertices(leaf, li).is_empty())
        .map(|(i, _)| i)
        .collect()
}

/// Restrict a dataset to the active set of a query point.
pub fn active_set(data: &Dataset, x: &StructuredPoint) -> Result<ActiveSet, PointError> {
    let leaf = data.spec().path_of_point(x)?;
    let indices = active_indices(data, leaf);
    let points = indices.iter().map(|&i| data.points()[i].clone()).collect();
    let y = indices.iter().map(|&i| data.y()[i]).collect();
    let noise = match data.noise() {
        NoiseModel::Fixed(v) => indices.iter().map(|&i| v[i]).collect(),
        NoiseModel::Learn => vec![0.0; indices.len()],
    };
    Ok(ActiveSet {
        indices,
        points,
        y,
        noise,
    })
}

/// A one-dimensional Gaussian posterior.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorGaussian {
    pub mean: f64,
    pub variance: f64,
}

/// Fitting configuration. `seed` drives the random restarts; `warm_start`
/// seeds the first restart (the optimizer-side parameter vector: packed
/// kernel parameters — or the tied triple — followed by the log noise when
/// learned).
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub restarts: usize,
    pub seed: u64,
    pub warm_start: Option<Vec<f64>>,
    pub init: ParamInit,
    /// Interaction pairs (ancestor, descendant) to include in the kernel.
    pub interactions: Vec<(usize, usize)>,
    /// Share one variance and one lengthscale across all vertices and
    /// dimensions (the isotropic kernel). Three hyperparameters instead of
    /// one per dimension, which small datasets cannot overfit.
    pub tied: bool,
    pub optim: OptimOptions,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            restarts: 5,
            seed: 0,
            warm_start: None,
            init: ParamInit::default(),
            interactions: Vec::new(),
            tied: false,
            // The Newton polish pins down the winning restart, so the
            // L-BFGS phase can run on a moderate iteration budget.
            optim: OptimOptions {
                max_iters: 60,
                ..OptimOptions::default()
            },
        }
    }
}

impl FitConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Restricted conditioning system for one query leaf.
#[derive(Debug, Clone)]
struct LeafSystem {
    indices: Vec<usize>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
}

/// An immutable fitted model: kernel and noise at their fitted values, the
/// factorized full system and the per-leaf restricted systems, plus the
/// target standardization used to map predictions back to original units.
#[derive(Debug, Clone)]
pub struct FittedGP {
    kernel: AddTreeKernel,
    data: Dataset,
    y_shift: f64,
    y_scale: f64,
    noise_variance: f64,
    jitter: f64,
    gram: DMatrix<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
    leaf_systems: Vec<Option<LeafSystem>>,
    obs_with_vertex: BTreeMap<usize, Vec<usize>>,
    mll: f64,
    all_restarts_failed: bool,
}

impl FittedGP {
    /// Condition on a dataset at fixed hyperparameters (no fitting): the
    /// given kernel plus a homoscedastic noise variance for learned-noise
    /// datasets (ignored for fixed-noise ones). Useful for evaluating a
    /// model at externally chosen or previously saved parameters.
    pub fn conditioned(
        kernel: AddTreeKernel,
        data: Dataset,
        noise_variance: f64,
    ) -> Result<Self, GpError> {
        if data.is_empty() {
            return Err(GpError::EmptyDataset);
        }
        let log_noise = matches!(data.noise(), NoiseModel::Learn)
            .then(|| noise_variance.max(1e-300).ln());
        let (mll, _) = log_marginal_likelihood(&kernel, &data, log_noise)?;
        assemble(kernel, data, noise_variance, mll, false)
    }

    /// The prior model: no observations, parameters from the init policy.
    pub fn prior(spec: Arc<TreeSpec>, config: &FitConfig) -> Result<Self, GpError> {
        let kernel =
            build_add_tree(spec.clone(), &config.init).with_interactions(&config.interactions)?;
        let leaf_count = spec.leaf_count();
        Ok(Self {
            kernel,
            data: Dataset::empty(spec),
            y_shift: 0.0,
            y_scale: 1.0,
            noise_variance: INITIAL_LOG_NOISE.exp(),
            jitter: JITTER_START,
            gram: DMatrix::zeros(0, 0),
            chol: None,
            alpha: DVector::zeros(0),
            leaf_systems: vec![None; leaf_count],
            obs_with_vertex: BTreeMap::new(),
            mll: 0.0,
            all_restarts_failed: false,
        })
    }

    pub fn kernel(&self) -> &AddTreeKernel {
        &self.kernel
    }

    pub fn data(&self) -> &Dataset {
        &self.data
    }

    pub fn spec(&self) -> &Arc<TreeSpec> {
        self.data.spec()
    }

    pub fn y_shift(&self) -> f64 {
        self.y_shift
    }

    pub fn y_scale(&self) -> f64 {
        self.y_scale
    }

    /// Learned (or configured) homoscedastic noise variance, in standardized
    /// target units.
    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// The fitted kernel's gram matrix over the training points (noise and
    /// jitter not included).
    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    pub fn mll(&self) -> f64 {
        self.mll
    }

    /// True when every fitting restart failed its first line search and the
    /// returned parameters are merely the best evaluated point.
    pub fn all_restarts_failed(&self) -> bool {
        self.all_restarts_failed
    }

    /// The optimizer-side parameter vector for warm-starting a refit with
    /// the same packing mode (group means under tying, plus the log noise).
    pub fn warm_start_vector(&self, tied: bool) -> Vec<f64> {
        let packing = ParamPacking::new(&self.kernel, tied);
        let mut w = packing.default_start(&self.kernel);
        w.push(self.noise_variance.max(1e-300).ln());
        w
    }

    /// Fitted hyperparameters by name, including the noise variance.
    pub fn named_params(&self) -> BTreeMap<String, f64> {
        let mut out: BTreeMap<String, f64> = self
            .kernel
            .param_names()
            .into_iter()
            .zip(self.kernel.pack())
            .collect();
        out.insert("log_noise_variance".into(), self.noise_variance.ln());
        out
    }

    /// Predictive posterior at a query point, in original target units.
    ///
    /// Conditions on the query leaf's active set through the cached
    /// restricted factorization; by the structural zero cross-covariances
    /// this equals dense conditioning on all observations.
    pub fn posterior(&self, x: &StructuredPoint) -> Result<PosteriorGaussian, GpError> {
        let leaf = self.spec().path_of_point(x)?;
        let prior_var = self.kernel.eval_on_leaves(x, leaf, x, leaf);
        let (mean_std, var_std) = match &self.leaf_systems[leaf] {
            None => (0.0, prior_var),
            Some(sys) => {
                let k = DVector::from_iterator(
                    sys.indices.len(),
                    sys.indices.iter().map(|&i| {
                        self.kernel.eval_on_leaves(
                            x,
                            leaf,
                            &self.data.points()[i],
                            self.data.leaves()[i],
                        )
                    }),
                );
                let mean = k.dot(&sys.alpha);
                let w = sys
                    .chol
                    .l_dirty()
                    .solve_lower_triangular(&k)
                    .expect("triangular factor is nonsingular");
                let var = (prior_var - w.norm_squared()).clamp(0.0, prior_var);
                (mean, var)
            }
        };
        Ok(PosteriorGaussian {
            mean: mean_std * self.y_scale + self.y_shift,
            variance: var_std * self.y_scale * self.y_scale,
        })
    }

    /// Exact posterior of the additive component attached to one vertex,
    /// evaluated at coordinates `x_v` of that vertex's block.
    ///
    /// Reported in the model's standardized target units: component means of
    /// the vertices along a path sum to the (standardized) posterior mean of
    /// the full function there. The cross-covariance to observation `i` is
    /// the vertex base kernel when the vertex lies on `l_i` and zero
    /// otherwise, conditioned through the full-data factorization.
    pub fn component_posterior(
        &self,
        vertex: usize,
        x_v: &[f64],
    ) -> Result<PosteriorGaussian, GpError> {
        let params = self
            .kernel
            .params()
            .get(&vertex)
            .ok_or(GpError::EmptyBlockVertex(vertex))?;
        let prior_var = params.variance();
        let Some(chol) = &self.chol else {
            return Ok(PosteriorGaussian {
                mean: 0.0,
                variance: prior_var,
            });
        };
        let n = self.data.len();
        let mut c = DVector::zeros(n);
        if let Some(members) = self.obs_with_vertex.get(&vertex) {
            for &i in members {
                c[i] = params.covariance(x_v, self.data.points()[i].values_at(vertex).unwrap());
            }
        }
        let mean = c.dot(&self.alpha);
        let w = chol
            .l_dirty()
            .solve_lower_triangular(&c)
            .expect("triangular factor is nonsingular");
        let variance = (prior_var - w.norm_squared()).clamp(0.0, prior_var);
        Ok(PosteriorGaussian { mean, variance })
    }

    /// Posterior mean of the full function in standardized units; used where
    /// component scores and full-model scores must share units.
    pub fn posterior_standardized(&self, x: &StructuredPoint) -> Result<PosteriorGaussian, GpError> {
        let p = self.posterior(x)?;
        Ok(PosteriorGaussian {
            mean: (p.mean - self.y_shift) / self.y_scale,
            variance: p.variance / (self.y_scale * self.y_scale),
        })
    }
}

fn standardization(y: &[f64]) -> (f64, f64) {
    if y.is_empty() {
        return (0.0, 1.0);
    }
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    let var = y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std < 1e-12 { 1.0 } else { std })
}

/// Factorize `base + (noise + jitter) I`, escalating jitter tenfold from
/// [`JITTER_START`] until the factorization succeeds.
fn factorize_with_jitter(
    base: &DMatrix<f64>,
    fixed_noise: Option<&[f64]>,
    homoscedastic: f64,
) -> Result<(Cholesky<f64, Dyn>, f64), GpError> {
    let mut jitter = JITTER_START;
    loop {
        let mut m = base.clone();
        for i in 0..m.nrows() {
            let fixed = fixed_noise.map_or(0.0, |v| v[i]);
            m[(i, i)] += fixed + homoscedastic + jitter;
        }
        if let Some(chol) = Cholesky::new(m) {
            return Ok((chol, jitter));
        }
        if jitter >= JITTER_MAX {
            return Err(GpError::NotPositiveDefinite);
        }
        jitter *= 10.0;
    }
}

/// Marginal log-likelihood of the data under the kernel, together with its
/// gradient with respect to every packed kernel parameter (and the log noise
/// variance appended, when the dataset learns it). Targets are standardized
/// internally; `log_noise` supplies the homoscedastic variance for
/// learned-noise datasets and is ignored for fixed-noise ones.
pub fn log_marginal_likelihood(
    kernel: &AddTreeKernel,
    data: &Dataset,
    log_noise: Option<f64>,
) -> Result<(f64, Vec<f64>), GpError> {
    if data.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let n = data.len();
    let (shift, scale) = standardization(data.y());
    let y_std = DVector::from_iterator(n, data.y().iter().map(|v| (v - shift) / scale));

    let (gram, grads) = kernel.gram_with_grad(data.points());
    let (fixed, s) = match data.noise() {
        NoiseModel::Fixed(v) => (Some(v.as_slice()), 0.0),
        NoiseModel::Learn => (None, log_noise.unwrap_or(INITIAL_LOG_NOISE).exp()),
    };
    let (chol, _) = factorize_with_jitter(&gram, fixed, s)?;
    let alpha = chol.solve(&y_std);
    let log_det = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
    let mll = -0.5 * y_std.dot(&alpha)
        - 0.5 * log_det
        - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // d mll / d theta = 0.5 tr((alpha alpha^T - K^-1) dK); both factors are
    // symmetric so the trace is an elementwise product sum.
    let inv = chol.inverse();
    let mut grad = Vec::with_capacity(grads.len() + 1);
    for dk in &grads {
        let mut tr = 0.0;
        for i in 0..n {
            let ai = alpha[i];
            for j in 0..n {
                tr += (ai * alpha[j] - inv[(i, j)]) * dk[(i, j)];
            }
        }
        grad.push(0.5 * tr);
    }
    if matches!(data.noise(), NoiseModel::Learn) {
        let tr: f64 = (0..n).map(|i| alpha[i] * alpha[i] - inv[(i, i)]).sum();
        grad.push(0.5 * s * tr);
    }
    Ok((mll, grad))
}

/// Maps the optimizer's parameter vector onto the kernel's packed
/// parameters: one-to-one in the free mode, or a tied mode sharing a single
/// log variance, log lengthscale (and interaction log scale) across all
/// vertices and dimensions — the isotropic kernel with pooled
/// hyperparameters, which is far harder to overfit on small datasets.
struct ParamPacking {
    tied: bool,
    ids: Vec<crate::kernel::ParamId>,
    kernel_dim: usize,
}

impl ParamPacking {
    fn new(template: &AddTreeKernel, tied: bool) -> Self {
        let ids = template.param_ids();
        let kernel_dim = if tied {
            if template.interactions().is_empty() {
                2
            } else {
                3
            }
        } else {
            ids.len()
        };
        Self {
            tied,
            ids,
            kernel_dim,
        }
    }

    fn slot(&self, id: &crate::kernel::ParamId) -> usize {
        use crate::kernel::ParamId::*;
        match id {
            Variance(_) => 0,
            Lengthscale(_, _) => 1,
            InteractionScale(_) => 2,
        }
    }

    /// Kernel part of the optimizer vector expanded to the full packing.
    fn expand(&self, theta: &[f64]) -> Vec<f64> {
        if !self.tied {
            return theta.to_vec();
        }
        self.ids.iter().map(|id| theta[self.slot(id)]).collect()
    }

    /// Full-packing gradient collapsed onto the optimizer vector.
    fn collapse_grad(&self, grad_full: &[f64]) -> Vec<f64> {
        if !self.tied {
            return grad_full.to_vec();
        }
        let mut out = vec![0.0; self.kernel_dim];
        for (k, id) in self.ids.iter().enumerate() {
            out[self.slot(id)] += grad_full[k];
        }
        out
    }

    fn bounds(&self, template: &AddTreeKernel) -> (Vec<f64>, Vec<f64>) {
        let (lo, hi) = template.param_bounds();
        if !self.tied {
            return (lo, hi);
        }
        // Intersect the per-parameter boxes group-wise.
        let mut lower = vec![f64::NEG_INFINITY; self.kernel_dim];
        let mut upper = vec![f64::INFINITY; self.kernel_dim];
        for (k, id) in self.ids.iter().enumerate() {
            let s = self.slot(id);
            lower[s] = lower[s].max(lo[k]);
            upper[s] = upper[s].min(hi[k]);
        }
        for s in 0..self.kernel_dim {
            if lower[s] > upper[s] {
                let mid = 0.5 * (lower[s] + upper[s]);
                lower[s] = mid;
                upper[s] = mid;
            }
        }
        (lower, upper)
    }

    /// Group means of the template's defaults.
    fn default_start(&self, template: &AddTreeKernel) -> Vec<f64> {
        let full = template.pack();
        if !self.tied {
            return full;
        }
        let mut sums = vec![0.0; self.kernel_dim];
        let mut counts = vec![0usize; self.kernel_dim];
        for (k, id) in self.ids.iter().enumerate() {
            let s = self.slot(id);
            sums[s] += full[k];
            counts[s] += 1;
        }
        sums.iter()
            .zip(&counts)
            .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }

    fn tau2(&self, learn_noise: bool) -> Vec<f64> {
        use crate::kernel::ParamId::*;
        let kernel_taus: Vec<f64> = if self.tied {
            (0..self.kernel_dim)
                .map(|s| if s == 1 { MAP_TAU_LENGTHSCALE } else { MAP_TAU_VARIANCE })
                .collect()
        } else {
            self.ids
                .iter()
                .map(|id| match id {
                    Lengthscale(_, _) => MAP_TAU_LENGTHSCALE,
                    _ => MAP_TAU_VARIANCE,
                })
                .collect()
        };
        kernel_taus
            .into_iter()
            .chain(learn_noise.then_some(MAP_TAU_VARIANCE))
            .map(|t| t * t)
            .collect()
    }
}

/// Closed-form leave-one-out log predictive density at the given
/// parameters, from the same factorization the likelihood uses: with
/// `alpha = K~^-1 y` and `d_i = [K~^-1]_ii`, the held-out residual is
/// `-alpha_i / d_i` with variance `1 / d_i`.
pub fn loo_pseudo_likelihood(
    kernel: &AddTreeKernel,
    data: &Dataset,
    log_noise: Option<f64>,
) -> Result<f64, GpError> {
    if data.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let n = data.len();
    let (shift, scale) = standardization(data.y());
    let y_std = DVector::from_iterator(n, data.y().iter().map(|v| (v - shift) / scale));
    let gram = kernel.gram(data.points()).matrix().clone();
    let (fixed, s) = match data.noise() {
        NoiseModel::Fixed(v) => (Some(v.as_slice()), 0.0),
        NoiseModel::Learn => (None, log_noise.unwrap_or(INITIAL_LOG_NOISE).exp()),
    };
    let (chol, _) = factorize_with_jitter(&gram, fixed, s)?;
    let alpha = chol.solve(&y_std);
    let inv = chol.inverse();
    let mut total = 0.0;
    for i in 0..n {
        let d = inv[(i, i)].max(1e-300);
        total += 0.5 * d.ln() - alpha[i] * alpha[i] / (2.0 * d);
    }
    Ok(total - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Fit hyperparameters by maximizing the marginal log-likelihood (with weak
/// log-space priors; see the constants above) over `config.restarts` runs
/// of box-constrained quasi-Newton. The first restart starts from
/// `warm_start` (or the init policy); the rest start log-uniform within the
/// parameter box. A polish-only candidate anchored at the default start
/// joins the pool, and the winner among the locally optimized candidates is
/// the one with the best leave-one-out predictive density — maximum
/// likelihood ranks small-sample hyperparameters by in-sample fit, which
/// can invert badly against generalization, while the cross-validated
/// score ranks them by held-out prediction. Deterministic given the seed.
pub fn fit(data: Dataset, config: &FitConfig) -> Result<FittedGP, GpError> {
    if data.is_empty() {
        return Err(GpError::EmptyDataset);
    }
    let template =
        build_add_tree(data.spec().clone(), &config.init).with_interactions(&config.interactions)?;
    let learn_noise = matches!(data.noise(), NoiseModel::Learn);
    let packing = ParamPacking::new(&template, config.tied);
    let kernel_dim = packing.kernel_dim;
    let dim = kernel_dim + usize::from(learn_noise);

    let (mut lower, mut upper) = packing.bounds(&template);
    if learn_noise {
        lower.push(LOG_NOISE_BOUNDS.0);
        upper.push(LOG_NOISE_BOUNDS.1);
    }
    let bounds = Bounds::new(lower, upper);

    let mut default_start = packing.default_start(&template);
    if learn_noise {
        default_start.push(INITIAL_LOG_NOISE);
    }
    let first = match &config.warm_start {
        Some(w) => {
            if w.len() != dim {
                return Err(GpError::WarmStartLength {
                    expected: dim,
                    got: w.len(),
                });
            }
            let mut w = w.clone();
            bounds.clamp(&mut w);
            w
        }
        None => default_start.clone(),
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut starts = vec![first];
    for _ in 1..config.restarts.max(1) {
        starts.push(
            (0..dim)
                .map(|i| rng.gen_range(bounds.lower[i]..=bounds.upper[i]))
                .collect(),
        );
    }

    let reference = default_start.clone();
    let tau2 = packing.tau2(learn_noise);
    let objective = |theta: &[f64]| -> (f64, Vec<f64>) {
        let kernel = template
            .with_packed(&packing.expand(&theta[..kernel_dim]))
            .expect("packing lengths agree");
        let log_noise = learn_noise.then(|| theta[kernel_dim]);
        match log_marginal_likelihood(&kernel, &data, log_noise) {
            Ok((mll, grad)) => {
                let mut f = -mll;
                let mut g = packing.collapse_grad(&grad[..grad.len() - usize::from(learn_noise)]);
                for v in g.iter_mut() {
                    *v = -*v;
                }
                if learn_noise {
                    g.push(-grad[grad.len() - 1]);
                }
                for k in 0..theta.len() {
                    let d = theta[k] - reference[k];
                    f += d * d / (2.0 * tau2[k]);
                    g[k] += d / tau2[k];
                }
                (f, g)
            }
            // Treated as a rejected step by the backtracking line search.
            Err(_) => (1e60, vec![0.0; theta.len()]),
        }
    };

    // Restarts are independent local searches; the anchored candidate takes
    // a few Newton steps from the default start without leaving its basin.
    let mut candidates: Vec<Vec<f64>> = Vec::with_capacity(starts.len() + 1);
    let mut all_failed = true;
    for s in &starts {
        let out = optim::minimize(objective, s, &bounds, &config.optim);
        all_failed &= out.line_search_failed;
        candidates.push(out.x);
    }
    candidates.push(optim::newton_polish(objective, &default_start, &bounds, 1e-11, 3).x);

    let loo_of = |theta: &[f64]| -> f64 {
        let kernel = template
            .with_packed(&packing.expand(&theta[..kernel_dim]))
            .expect("packing lengths agree");
        let log_noise = learn_noise.then(|| theta[kernel_dim]);
        loo_pseudo_likelihood(&kernel, &data, log_noise).unwrap_or(f64::NEG_INFINITY)
    };
    let best_x = candidates
        .iter()
        .enumerate()
        .map(|(i, x)| (i, x, loo_of(x)))
        .max_by(|(ia, _, a), (ib, _, b)| a.partial_cmp(b).unwrap().then(ib.cmp(ia)))
        .map(|(_, x, _)| x.clone())
        .expect("at least one candidate");

    // Newton polish pins the winner to its stationary point, so a rerun on
    // affinely rescaled targets lands on the same parameters.
    let (f_at_best, _) = objective(&best_x);
    let polished = optim::newton_polish(objective, &best_x, &bounds, 1e-11, 3);
    let mut final_x = if polished.f <= f_at_best {
        polished.x.clone()
    } else {
        best_x.clone()
    };
    let final_f = polished.f.min(f_at_best);

    // In the free packing, parameters of vertices without observations never
    // touch the likelihood; a restart can leave them anywhere in the box,
    // which would make the posterior of an unexplored component arbitrary.
    // Pin them back to the init policy so unexplored components keep prior
    // scale. (Tied parameters are constrained by every observation.)
    if !config.tied {
        let mut unobserved = std::collections::BTreeSet::new();
        for v in data.spec().block_vertices() {
            let seen = data
                .leaves()
                .iter()
                .any(|&leaf| data.spec().path(leaf).contains(&v));
            if !seen {
                unobserved.insert(v);
            }
        }
        if !unobserved.is_empty() {
            let defaults = template.pack();
            for (k, id) in template.param_ids().iter().enumerate() {
                let pinned = match id {
                    crate::kernel::ParamId::Variance(v)
                    | crate::kernel::ParamId::Lengthscale(v, _) => unobserved.contains(v),
                    crate::kernel::ParamId::InteractionScale(i) => {
                        unobserved.contains(&template.interactions()[*i].descendant)
                    }
                };
                if pinned {
                    final_x[k] = defaults[k];
                }
            }
        }
    }

    let kernel = template.with_packed(&packing.expand(&final_x[..kernel_dim]))?;
    let noise_variance = if learn_noise {
        final_x[kernel_dim].exp()
    } else {
        0.0
    };
    // Store the pure marginal log-likelihood at the selected parameters (the
    // optimized objective also carries the prior term).
    let _ = final_f;
    let (mll, _) = log_marginal_likelihood(
        &kernel,
        &data,
        learn_noise.then(|| final_x[kernel_dim]),
    )?;
    assemble(kernel, data, noise_variance, mll, all_failed)
}

fn assemble(
    kernel: AddTreeKernel,
    data: Dataset,
    noise_variance: f64,
    mll: f64,
    all_restarts_failed: bool,
) -> Result<FittedGP, GpError> {
    let n = data.len();
    let (y_shift, y_scale) = standardization(data.y());
    let y_std = DVector::from_iterator(n, data.y().iter().map(|v| (v - y_shift) / y_scale));
    let gram = kernel.gram(data.points()).matrix().clone();
    let fixed: Option<Vec<f64>> = match data.noise() {
        NoiseModel::Fixed(v) => Some(v.clone()),
        NoiseModel::Learn => None,
    };
    let (chol, jitter) = factorize_with_jitter(&gram, fixed.as_deref(), noise_variance)?;
    let alpha = chol.solve(&y_std);

    let mut leaf_systems = Vec::with_capacity(data.spec().leaf_count());
    for leaf in 0..data.spec().leaf_count() {
        let indices = active_indices(&data, leaf);
        if indices.is_empty() {
            leaf_systems.push(None);
            continue;
        }
        let m = indices.len();
        let mut sub = DMatrix::zeros(m, m);
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                sub[(a, b)] = gram[(i, j)];
            }
            let fx = fixed.as_ref().map_or(0.0, |v| v[indices[a]]);
            sub[(a, a)] += fx + noise_variance + jitter;
        }
        let sub_y = DVector::from_iterator(m, indices.iter().map(|&i| y_std[i]));
        let chol_s = Cholesky::new(sub).ok_or(GpError::NotPositiveDefinite)?;
        let alpha_s = chol_s.solve(&sub_y);
        leaf_systems.push(Some(LeafSystem {
            indices,
            chol: chol_s,
            alpha: alpha_s,
        }));
    }

    let mut obs_with_vertex: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &leaf) in data.leaves().iter().enumerate() {
        for &v in data.spec().path(leaf) {
            if !data.spec().vertex(v).block().is_empty() {
                obs_with_vertex.entry(v).or_default().push(i);
            }
        }
    }

    Ok(FittedGP {
        kernel,
        data,
        y_shift,
        y_scale,
        noise_variance,
        jitter,
        gram,
        chol: Some(chol),
        alpha,
        leaf_systems,
        obs_with_vertex,
        mll,
        all_restarts_failed,
    })
}
