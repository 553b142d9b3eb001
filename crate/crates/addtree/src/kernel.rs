//! The additive tree covariance function.
//!
//! The covariance of two points is the sum, over the block-carrying vertices
//! shared by their root-to-leaf paths (root down to the lowest common
//! ancestor), of a per-vertex base kernel on the coordinates restricted to
//! that vertex. Equivalently, every vertex contributes a structural delta
//! factor (1 when the vertex lies on both paths, 0 otherwise) times a
//! positive semi-definite base kernel; products and positively weighted sums
//! of PSD kernels are PSD, so the whole covariance is valid over the entire
//! space, not just within one branch.
//!
//! The delta factor is evaluated structurally from path membership; the
//! sentinel tags of the linear encoding are never compared numerically.
//!
//! Per-vertex bases are squared-exponential with ARD lengthscales (tie the
//! lengthscales to recover the isotropic kernel). Optional interaction terms
//! extend the sum with products of two base kernels along one path, with
//! cross-path covariance fixed to zero.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::tree_space::{StructuredPoint, TreeSpec};

/// Variance box in log space (also used for interaction scales).
const LOG_VARIANCE_BOUNDS: (f64, f64) = (-9.210340371976182, 4.605170185988092); // ln 1e-4, ln 1e2
/// Lengthscale box relative to the dimension's width.
const LENGTHSCALE_WIDTH_FACTORS: (f64, f64) = (1e-2, 1e2);

/// Errors from kernel construction.
#[derive(Debug, Error)]
pub enum KernelError {
    #[error("vertex {0} carries no continuous block")]
    EmptyBlock(usize),
    #[error("vertex {0} does not exist")]
    UnknownVertex(usize),
    #[error("interaction pair ({0}, {1}) is not ancestor-descendant along one path")]
    NotAncestorDescendant(usize, usize),
    #[error("parameter vector has length {got}, kernel has {expected} parameters")]
    BadParameterLength { expected: usize, got: usize },
}

/// Log-parameterized squared-exponential base kernel for one vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexKernelParams {
    /// log of the signal variance multiplying the exponential.
    pub log_variance: f64,
    /// log lengthscale per dimension of the vertex block (ARD).
    pub log_lengthscales: Vec<f64>,
}

impl VertexKernelParams {
    pub fn variance(&self) -> f64 {
        self.log_variance.exp()
    }

    pub fn lengthscale(&self, d: usize) -> f64 {
        self.log_lengthscales[d].exp()
    }

    /// Scaled squared distance `sum_d ((a_d - b_d) / l_d)^2`.
    pub fn scaled_sq_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut sq = 0.0;
        for d in 0..self.log_lengthscales.len() {
            let q = (a[d] - b[d]) / self.lengthscale(d);
            sq += q * q;
        }
        sq
    }

    /// Base kernel value between two coordinate vectors of this block.
    pub fn covariance(&self, a: &[f64], b: &[f64]) -> f64 {
        se_base(self.scaled_sq_dist(a, b), self)
    }
}

/// Squared-exponential base: `variance * exp(-sq_dist_scaled / 2)` where
/// `sq_dist_scaled` is already lengthscale-scaled.
pub fn se_base(sq_dist_scaled: f64, params: &VertexKernelParams) -> f64 {
    params.variance() * (-0.5 * sq_dist_scaled).exp()
}

/// An opt-in product term between two block-carrying vertices on one path.
/// `scale * k_ancestor * k_descendant` is added to the covariance whenever
/// the descendant lies on both points' paths; across paths that do not share
/// the descendant the contribution is exactly zero.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionTerm {
    pub ancestor: usize,
    pub descendant: usize,
    pub log_scale: f64,
}

/// Initialization policy for kernel parameters.
#[derive(Debug, Clone)]
pub struct ParamInit {
    pub variance: f64,
    /// Initial lengthscale as a fraction of each dimension's box width.
    pub lengthscale_fraction: f64,
}

impl Default for ParamInit {
    fn default() -> Self {
        Self {
            variance: 1.0,
            // A fifth of the box width: wide enough for smooth responses,
            // short enough that a lone observation does not paint the whole
            // box, which would starve the acquisition of exploration signal.
            lengthscale_fraction: 0.2,
        }
    }
}

/// Identity of one packed hyperparameter.
#[derive(Debug, Clone, PartialEq)]
pub enum ParamId {
    /// log variance of a vertex base kernel.
    Variance(usize),
    /// log lengthscale of one dimension of a vertex base kernel.
    Lengthscale(usize, usize),
    /// log scale of an interaction term (by position in the interaction list).
    InteractionScale(usize),
}

/// The additive tree covariance function over a fixed [`TreeSpec`].
///
/// Immutable value object: evaluation and gram assembly are pure and safe to
/// call concurrently. Hyperparameter updates go through [`Self::with_packed`],
/// which returns a new kernel.
#[derive(Debug, Clone)]
pub struct AddTreeKernel {
    spec: Arc<TreeSpec>,
    params: BTreeMap<usize, VertexKernelParams>,
    interactions: Vec<InteractionTerm>,
}

/// Construct the covariance function for a spec: one `delta x SE` term per
/// block-carrying vertex, parameters set by the given policy.
pub fn build_add_tree(spec: Arc<TreeSpec>, init: &ParamInit) -> AddTreeKernel {
    let mut params = BTreeMap::new();
    for v in spec.block_vertices() {
        let block = spec.vertex(v).block();
        let log_lengthscales = (0..block.dim())
            .map(|d| (init.lengthscale_fraction * block.width(d)).ln())
            .collect();
        params.insert(
            v,
            VertexKernelParams {
                log_variance: init.variance.ln(),
                log_lengthscales,
            },
        );
    }
    AddTreeKernel {
        spec,
        params,
        interactions: Vec::new(),
    }
}

/// Every (ancestor, descendant) pair of block-carrying vertices that lies on
/// a common root-to-leaf path; the full interaction roster for a spec.
pub fn all_interaction_pairs(spec: &TreeSpec) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for v in spec.block_vertices() {
        let mut cur = v;
        while let Some(p) = spec.parent(cur) {
            if !spec.vertex(p).block().is_empty() {
                pairs.push((p, v));
            }
            cur = p;
        }
    }
    pairs.sort_unstable();
    pairs
}

impl AddTreeKernel {
    pub fn spec(&self) -> &Arc<TreeSpec> {
        &self.spec
    }

    /// Per-vertex parameters, keyed by vertex id (block-carrying vertices only).
    pub fn params(&self) -> &BTreeMap<usize, VertexKernelParams> {
        &self.params
    }

    pub fn interactions(&self) -> &[InteractionTerm] {
        &self.interactions
    }

    /// Add interaction terms. Each pair must be ancestor-descendant along a
    /// single root-to-leaf path and both vertices must carry blocks. The
    /// product's own magnitude starts at 1 (log scale 0).
    pub fn with_interactions(mut self, pairs: &[(usize, usize)]) -> Result<Self, KernelError> {
        for &(u, v) in pairs {
            for id in [u, v] {
                if id >= self.spec.vertices().len() {
                    return Err(KernelError::UnknownVertex(id));
                }
                if self.spec.vertex(id).block().is_empty() {
                    return Err(KernelError::EmptyBlock(id));
                }
            }
            let mut cur = v;
            let mut found = false;
            while let Some(p) = self.spec.parent(cur) {
                if p == u {
                    found = true;
                    break;
                }
                cur = p;
            }
            if !found {
                return Err(KernelError::NotAncestorDescendant(u, v));
            }
            self.interactions.push(InteractionTerm {
                ancestor: u,
                descendant: v,
                log_scale: 0.0,
            });
        }
        Ok(self)
    }

    // --- hyperparameter packing ---------------------------------------------

    /// Identities of the packed parameters, in packing order: per vertex in
    /// BFS order its log variance then log lengthscales, then interaction
    /// log scales in list order.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for (&v, p) in &self.params {
            ids.push(ParamId::Variance(v));
            for d in 0..p.log_lengthscales.len() {
                ids.push(ParamId::Lengthscale(v, d));
            }
        }
        for i in 0..self.interactions.len() {
            ids.push(ParamId::InteractionScale(i));
        }
        ids
    }

    pub fn param_names(&self) -> Vec<String> {
        self.param_ids()
            .into_iter()
            .map(|id| match id {
                ParamId::Variance(v) => format!("v{v}.log_variance"),
                ParamId::Lengthscale(v, d) => format!("v{v}.log_lengthscale{d}"),
                ParamId::InteractionScale(i) => {
                    let it = &self.interactions[i];
                    format!("ix{}_{}.log_scale", it.ancestor, it.descendant)
                }
            })
            .collect()
    }

    pub fn param_len(&self) -> usize {
        self.params
            .values()
            .map(|p| 1 + p.log_lengthscales.len())
            .sum::<usize>()
            + self.interactions.len()
    }

    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_len());
        for p in self.params.values() {
            out.push(p.log_variance);
            out.extend_from_slice(&p.log_lengthscales);
        }
        out.extend(self.interactions.iter().map(|it| it.log_scale));
        out
    }

    /// A copy of the kernel with the packed parameter vector replaced.
    pub fn with_packed(&self, theta: &[f64]) -> Result<Self, KernelError> {
        if theta.len() != self.param_len() {
            return Err(KernelError::BadParameterLength {
                expected: self.param_len(),
                got: theta.len(),
            });
        }
        let mut out = self.clone();
        let mut k = 0;
        for p in out.params.values_mut() {
            p.log_variance = theta[k];
            k += 1;
            for l in p.log_lengthscales.iter_mut() {
                *l = theta[k];
                k += 1;
            }
        }
        for it in out.interactions.iter_mut() {
            it.log_scale = theta[k];
            k += 1;
        }
        Ok(out)
    }

    /// Box bounds for the packed parameters: variances and interaction
    /// scales in a fixed log box, lengthscales relative to box width.
    pub fn param_bounds(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lower = Vec::with_capacity(self.param_len());
        let mut upper = Vec::with_capacity(self.param_len());
        for (&v, p) in &self.params {
            lower.push(LOG_VARIANCE_BOUNDS.0);
            upper.push(LOG_VARIANCE_BOUNDS.1);
            let block = self.spec.vertex(v).block();
            for d in 0..p.log_lengthscales.len() {
                let w = block.width(d);
                lower.push((LENGTHSCALE_WIDTH_FACTORS.0 * w).ln());
                upper.push((LENGTHSCALE_WIDTH_FACTORS.1 * w).ln());
            }
        }
        for _ in &self.interactions {
            lower.push(LOG_VARIANCE_BOUNDS.0);
            upper.push(LOG_VARIANCE_BOUNDS.1);
        }
        (lower, upper)
    }

    // --- evaluation -----------------------------------------------------------

    /// Base kernel of one vertex between two restricted coordinate vectors.
    pub fn vertex_covariance(&self, vertex: usize, a: &[f64], b: &[f64]) -> f64 {
        self.params[&vertex].covariance(a, b)
    }

    /// Covariance of two points: the sum of base terms over block-carrying
    /// shared-prefix vertices, plus any configured interaction products.
    /// Both points must be valid for this kernel's spec.
    pub fn eval_pair(&self, x: &StructuredPoint, x2: &StructuredPoint) -> f64 {
        let lx = self.spec.path_of_point(x).expect("point valid for spec");
        let ly = self.spec.path_of_point(x2).expect("point valid for spec");
        self.eval_on_leaves(x, lx, x2, ly)
    }

    /// Interaction-aware covariance. Identical to [`Self::eval_pair`]: base
    /// terms plus, for each interaction pair whose descendant lies on both
    /// points' paths, the scaled product of the two base kernels; pairs whose
    /// descendant lies on only one path contribute exactly zero.
    pub fn eval_with_interactions(&self, x: &StructuredPoint, x2: &StructuredPoint) -> f64 {
        self.eval_pair(x, x2)
    }

    pub(crate) fn eval_on_leaves(
        &self,
        x: &StructuredPoint,
        leaf_x: usize,
        x2: &StructuredPoint,
        leaf_x2: usize,
    ) -> f64 {
        let shared = self.spec.shared_block_vertices(leaf_x, leaf_x2);
        let mut total = 0.0;
        for &v in shared {
            let a = x.values_at(v).expect("on-path block has values");
            let b = x2.values_at(v).expect("on-path block has values");
            total += self.params[&v].covariance(a, b);
        }
        for it in &self.interactions {
            if shared.contains(&it.descendant) {
                let ku = self.params[&it.ancestor].covariance(
                    x.values_at(it.ancestor).unwrap(),
                    x2.values_at(it.ancestor).unwrap(),
                );
                let kv = self.params[&it.descendant].covariance(
                    x.values_at(it.descendant).unwrap(),
                    x2.values_at(it.descendant).unwrap(),
                );
                total += it.log_scale.exp() * ku * kv;
            }
        }
        total
    }

    /// Prior variance at a point on the given path: covariance with itself,
    /// i.e. the sum of variances along the path (plus interaction magnitudes
    /// when enabled).
    pub fn prior_variance(&self, leaf: usize) -> f64 {
        let path = self.spec.path(leaf);
        let mut total = 0.0;
        for &v in path {
            if let Some(p) = self.params.get(&v) {
                total += p.variance();
            }
        }
        for it in &self.interactions {
            if path.contains(&it.descendant) {
                total += it.log_scale.exp()
                    * self.params[&it.ancestor].variance()
                    * self.params[&it.descendant].variance();
            }
        }
        total
    }

    /// Symmetric gram matrix over a point set.
    pub fn gram(&self, points: &[StructuredPoint]) -> GramMatrix {
        let leaves = self.leaves_of(points);
        let n = points.len();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let kij = self.eval_on_leaves(&points[i], leaves[i], &points[j], leaves[j]);
                m[(i, j)] = kij;
                m[(j, i)] = kij;
            }
        }
        let meta = leaves.iter().enumerate().map(|(i, &l)| (l, i as u64)).collect();
        GramMatrix { matrix: m, meta }
    }

    /// Gram matrix together with its derivative with respect to every packed
    /// log-parameter, in packing order.
    ///
    /// The inner loops avoid map lookups: per-vertex parameters, packed
    /// offsets and per-point value slices are gathered once up front. A
    /// vertex appears in an entry's sum exactly when both points carry
    /// values for it, which is the structural shared-prefix test.
    pub fn gram_with_grad(&self, points: &[StructuredPoint]) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
        let n = points.len();
        let p = self.param_len();

        struct VertexSlot<'a> {
            params: &'a VertexKernelParams,
            offset: usize,
            lengthscales: Vec<f64>,
            values: Vec<Option<&'a [f64]>>,
        }
        let mut slots: Vec<VertexSlot> = Vec::with_capacity(self.params.len());
        let mut vertex_slot = BTreeMap::new();
        let mut k = 0;
        for (&v, prm) in &self.params {
            vertex_slot.insert(v, slots.len());
            slots.push(VertexSlot {
                params: prm,
                offset: k,
                lengthscales: (0..prm.log_lengthscales.len())
                    .map(|d| prm.lengthscale(d))
                    .collect(),
                values: points.iter().map(|pt| pt.values_at(v)).collect(),
            });
            k += 1 + prm.log_lengthscales.len();
        }
        let ix_base = k;
        let interactions: Vec<(usize, usize, f64)> = self
            .interactions
            .iter()
            .map(|it| {
                (
                    vertex_slot[&it.ancestor],
                    vertex_slot[&it.descendant],
                    it.log_scale.exp(),
                )
            })
            .collect();

        let mut gram = DMatrix::zeros(n, n);
        let mut grads = vec![DMatrix::zeros(n, n); p];
        for i in 0..n {
            for j in i..n {
                let mut kij = 0.0;
                for slot in &slots {
                    let (Some(a), Some(b)) = (slot.values[i], slot.values[j]) else {
                        continue;
                    };
                    let mut sq = 0.0;
                    for d in 0..slot.lengthscales.len() {
                        let q = (a[d] - b[d]) / slot.lengthscales[d];
                        sq += q * q;
                    }
                    let term = se_base(sq, slot.params);
                    kij += term;
                    add_sym(&mut grads[slot.offset], i, j, term);
                    for d in 0..slot.lengthscales.len() {
                        let q = (a[d] - b[d]) / slot.lengthscales[d];
                        add_sym(&mut grads[slot.offset + 1 + d], i, j, term * q * q);
                    }
                }
                for (t, &(su, sv, scale)) in interactions.iter().enumerate() {
                    let (u, v) = (&slots[su], &slots[sv]);
                    let (Some(av), Some(bv)) = (v.values[i], v.values[j]) else {
                        continue;
                    };
                    let (au, bu) = (u.values[i].unwrap(), u.values[j].unwrap());
                    let ku = se_base(u.params.scaled_sq_dist(au, bu), u.params);
                    let kv = se_base(v.params.scaled_sq_dist(av, bv), v.params);
                    let term = scale * ku * kv;
                    kij += term;
                    add_sym(&mut grads[ix_base + t], i, j, term);
                    add_sym(&mut grads[u.offset], i, j, term);
                    add_sym(&mut grads[v.offset], i, j, term);
                    for d in 0..u.lengthscales.len() {
                        let q = (au[d] - bu[d]) / u.lengthscales[d];
                        add_sym(&mut grads[u.offset + 1 + d], i, j, term * q * q);
                    }
                    for d in 0..v.lengthscales.len() {
                        let q = (av[d] - bv[d]) / v.lengthscales[d];
                        add_sym(&mut grads[v.offset + 1 + d], i, j, term * q * q);
                    }
                }
                gram[(i, j)] = kij;
                gram[(j, i)] = kij;
            }
        }
        (gram, grads)
    }

    /// Per-parameter gram derivatives, aligned with [`Self::pack`]. A vertex's
    /// derivatives vanish at every entry where that vertex is outside the
    /// two points' shared prefix.
    pub fn grad_hyper(&self, points: &[StructuredPoint]) -> Vec<DMatrix<f64>> {
        self.gram_with_grad(points).1
    }

    pub(crate) fn leaves_of(&self, points: &[StructuredPoint]) -> Vec<usize> {
        points
            .iter()
            .map(|p| self.spec.path_of_point(p).expect("point valid for spec"))
            .collect()
    }
}

fn add_sym(m: &mut DMatrix<f64>, i: usize, j: usize, v: f64) {
    m[(i, j)] += v;
    if i != j {
        m[(j, i)] += v;
    }
}

/// A symmetric gram matrix with the path id and uid of each point.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    matrix: DMatrix<f64>,
    meta: Vec<(usize, u64)>,
}

impl GramMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// (path id, uid) of each point, by row index.
    pub fn meta(&self) -> &[(usize, u64)] {
        &self.meta
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.matrix
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b))
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree_space::{parse_spec, sample_uniform, StructuredPoint};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn example_tree() -> Arc<TreeSpec> {
        parse_spec(include_str!("../specs/example.json")).unwrap().into_shared()
    }

    fn jenatton_tree() -> Arc<TreeSpec> {
        parse_spec(include_str!("../specs/jenatton.json")).unwrap().into_shared()
    }

    fn randomize_params<R: Rng>(kernel: &AddTreeKernel, rng: &mut R) -> AddTreeKernel {
        let (lo, hi) = kernel.param_bounds();
        let theta: Vec<f64> = lo
            .iter()
            .zip(&hi)
            // Stay away from the box edges so finite differences are clean.
            .map(|(&l, &h)| rng.gen_range(0.25 * (3.0 * l + h)..0.25 * (l + 3.0 * h)))
            .collect();
        kernel.with_packed(&theta).unwrap()
    }

    #[test]
    fn se_base_values() {
        let p = VertexKernelParams {
            log_variance: 2.0f64.ln(),
            log_lengthscales: vec![0.0],
        };
        assert_relative_eq!(se_base(0.0, &p), 2.0);
        let unit = VertexKernelParams {
            log_variance: 0.0,
            log_lengthscales: vec![0.0],
        };
        assert_relative_eq!(se_base(2.0, &unit), (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(se_base(1.0, &unit), (-0.5f64).exp(), max_relative = 1e-12);
    }

    #[test]
    fn build_counts_parameterized_vertices() {
        let ex = build_add_tree(example_tree(), &ParamInit::default());
        assert_eq!(ex.params().len(), 3);
        let jen = build_add_tree(jenatton_tree(), &ParamInit::default());
        assert_eq!(jen.params().len(), 6);
        assert!(!jen.params().contains_key(&0), "block-less root has no term");
    }

    #[test]
    fn single_vertex_tree_is_plain_se() {
        let spec = parse_spec(r#"{"continuous":[{"name":"x","low":-2.0,"high":2.0}]}"#)
            .unwrap()
            .into_shared();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        assert_eq!(kernel.params().len(), 1);
        let a = StructuredPoint::on_path(&spec, 0, &[vec![0.5]]).unwrap();
        let b = StructuredPoint::on_path(&spec, 0, &[vec![-1.0]]).unwrap();
        let p = &kernel.params()[&0];
        let expected = se_base(p.scaled_sq_dist(&[0.5], &[-1.0]), p);
        assert_relative_eq!(kernel.eval_pair(&a, &b), expected, max_relative = 1e-15);
    }

    #[test]
    fn cross_leaf_pair_reduces_to_root_term() {
        let spec = example_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        // Same root coordinates on both sides, different leaves.
        let x = StructuredPoint::on_path(&spec, 0, &[vec![0.3, -0.2], vec![0.9, 0.9]]).unwrap();
        let x2 =
            StructuredPoint::on_path(&spec, 1, &[vec![0.3, -0.2], vec![-0.5, 0.0, 0.5]]).unwrap();
        let sigma_r = kernel.params()[&0].variance();
        assert_relative_eq!(kernel.eval_pair(&x, &x2), sigma_r, max_relative = 1e-15);
    }

    #[test]
    fn different_halves_have_zero_covariance() {
        let spec = jenatton_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        let x = StructuredPoint::on_path(&spec, 0, &[vec![0.2], vec![0.1]]).unwrap();
        let x2 = StructuredPoint::on_path(&spec, 2, &[vec![0.2], vec![0.1]]).unwrap();
        assert_eq!(kernel.eval_pair(&x, &x2), 0.0);
    }

    #[test]
    fn self_covariance_sums_path_variances() {
        let spec = example_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        let x = StructuredPoint::on_path(&spec, 1, &[vec![0.1, 0.2], vec![0.3, 0.4, 0.5]]).unwrap();
        let expected = kernel.params()[&0].variance() + kernel.params()[&2].variance();
        assert_relative_eq!(kernel.eval_pair(&x, &x), expected, max_relative = 1e-12);
        assert_relative_eq!(kernel.prior_variance(1), expected, max_relative = 1e-12);
    }

    #[test]
    fn symmetry_on_random_points() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        for _ in 0..100 {
            let a = sample_uniform(&spec, &mut rng);
            let b = sample_uniform(&spec, &mut rng);
            assert_eq!(kernel.eval_pair(&a, &b), kernel.eval_pair(&b, &a));
        }
    }

    #[test]
    fn cross_leaf_invariance_below_lca() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        // Leaves 0 and 1 share the r8 vertex; perturbing the leaf coordinate
        // (below the LCA) must not change the covariance.
        let x2 = StructuredPoint::on_path(&spec, 1, &[vec![0.7], vec![0.4]]).unwrap();
        let base = StructuredPoint::on_path(&spec, 0, &[vec![0.3], vec![-0.8]]).unwrap();
        let moved = StructuredPoint::on_path(&spec, 0, &[vec![0.3], vec![0.8]]).unwrap();
        assert_eq!(kernel.eval_pair(&base, &x2), kernel.eval_pair(&moved, &x2));
    }

    #[test]
    fn chain_tree_equals_additive_se_oracle() {
        // Branching factor 1: the tree kernel must equal a plain sum of SE
        // kernels over all vertices.
        let src = r#"{"continuous":[{"name":"a","low":-1.0,"high":1.0}],
                      "children":{"only":{"continuous":[{"name":"b","low":0.0,"high":2.0},
                                                        {"name":"c","low":0.0,"high":2.0}]}}}"#;
        let spec = parse_spec(src).unwrap().into_shared();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        for _ in 0..50 {
            let x = sample_uniform(&spec, &mut rng);
            let y = sample_uniform(&spec, &mut rng);
            let oracle: f64 = [0usize, 1]
                .iter()
                .map(|&v| {
                    kernel.params()[&v]
                        .covariance(x.values_at(v).unwrap(), y.values_at(v).unwrap())
                })
                .sum();
            assert_relative_eq!(kernel.eval_pair(&x, &y), oracle, max_relative = 1e-14);
        }
    }

    #[test]
    fn gram_of_identical_points_is_constant() {
        let spec = example_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        let x = StructuredPoint::on_path(&spec, 0, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let g = kernel.gram(&[x.clone(), x]);
        let expected = kernel.prior_variance(0);
        for v in g.matrix().iter() {
            assert_relative_eq!(*v, expected, max_relative = 1e-14);
        }
    }

    #[test]
    fn gram_matches_blockwise_assembly() {
        // Two-leaf tree: the gram must decompose into the root gram plus a
        // block-diagonal of per-leaf grams, with the root gram supplying the
        // off-diagonal blocks.
        let spec = example_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        let n1 = 4;
        let n2 = 3;
        let mut points = Vec::new();
        while points.len() < n1 {
            let p = sample_uniform(&spec, &mut rng);
            if spec.path_of_point(&p).unwrap() == 0 {
                points.push(p);
            }
        }
        while points.len() < n1 + n2 {
            let p = sample_uniform(&spec, &mut rng);
            if spec.path_of_point(&p).unwrap() == 1 {
                points.push(p);
            }
        }
        let g = kernel.gram(&points);
        for i in 0..n1 + n2 {
            for j in 0..n1 + n2 {
                let root = kernel.params()[&0].covariance(
                    points[i].values_at(0).unwrap(),
                    points[j].values_at(0).unwrap(),
                );
                let leaf = if i < n1 && j < n1 {
                    kernel.params()[&1].covariance(
                        points[i].values_at(1).unwrap(),
                        points[j].values_at(1).unwrap(),
                    )
                } else if i >= n1 && j >= n1 {
                    kernel.params()[&2].covariance(
                        points[i].values_at(2).unwrap(),
                        points[j].values_at(2).unwrap(),
                    )
                } else {
                    0.0
                };
                assert_relative_eq!(g.matrix()[(i, j)], root + leaf, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn gram_is_positive_semidefinite() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        let points: Vec<_> = (0..50).map(|_| sample_uniform(&spec, &mut rng)).collect();
        let g = kernel.gram(&points);
        assert!(g.min_eigenvalue() >= -1e-8 * g.trace());
    }

    #[test]
    fn grad_matches_finite_differences() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..5 {
            let kernel =
                randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng)
                    .with_interactions(&[(1, 3), (2, 6)])
                    .unwrap();
            let points: Vec<_> = (0..8).map(|_| sample_uniform(&spec, &mut rng)).collect();
            let theta = kernel.pack();
            let (_, grads) = kernel.gram_with_grad(&points);
            let h = 1e-5;
            for k in 0..theta.len() {
                let mut up = theta.clone();
                up[k] += h;
                let mut dn = theta.clone();
                dn[k] -= h;
                let gu = kernel.with_packed(&up).unwrap().gram(&points);
                let gd = kernel.with_packed(&dn).unwrap().gram(&points);
                for i in 0..points.len() {
                    for j in 0..points.len() {
                        let fd = (gu.matrix()[(i, j)] - gd.matrix()[(i, j)]) / (2.0 * h);
                        let an = grads[k][(i, j)];
                        assert!(
                            (an - fd).abs() <= 1e-5 * fd.abs().max(1e-6),
                            "param {k} entry ({i},{j}): analytic {an} vs fd {fd}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn grad_is_structurally_sparse() {
        let spec = jenatton_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        // Two points on leaf 0; derivatives of any other leaf's parameters
        // must vanish on that entry.
        let a = StructuredPoint::on_path(&spec, 0, &[vec![0.1], vec![0.5]]).unwrap();
        let b = StructuredPoint::on_path(&spec, 0, &[vec![0.9], vec![-0.5]]).unwrap();
        let ids = kernel.param_ids();
        let grads = kernel.grad_hyper(&[a, b]);
        for (k, id) in ids.iter().enumerate() {
            let vertex = match id {
                ParamId::Variance(v) | ParamId::Lengthscale(v, _) => *v,
                ParamId::InteractionScale(_) => continue,
            };
            if !spec.path(0).contains(&vertex) {
                assert_eq!(grads[k][(0, 1)], 0.0);
                assert_eq!(grads[k][(0, 0)], 0.0);
            }
        }
    }

    #[test]
    fn grad_of_variance_at_zero_distance_is_variance() {
        let spec = example_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        let x = StructuredPoint::on_path(&spec, 0, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let grads = kernel.grad_hyper(std::slice::from_ref(&x));
        let ids = kernel.param_ids();
        let k = ids.iter().position(|id| *id == ParamId::Variance(0)).unwrap();
        assert_relative_eq!(grads[k][(0, 0)], kernel.params()[&0].variance());
    }

    #[test]
    fn interactions_match_worked_examples() {
        let spec = example_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng)
            .with_interactions(&[(0, 1)])
            .unwrap();
        let x = StructuredPoint::on_path(&spec, 0, &[vec![0.1, 0.2], vec![0.3, 0.4]]).unwrap();
        let x2 = StructuredPoint::on_path(&spec, 0, &[vec![-0.5, 0.0], vec![0.8, -0.8]]).unwrap();
        let kr = kernel.params()[&0].covariance(&[0.1, 0.2], &[-0.5, 0.0]);
        let kp = kernel.params()[&1].covariance(&[0.3, 0.4], &[0.8, -0.8]);
        assert_relative_eq!(
            kernel.eval_with_interactions(&x, &x2),
            kr + kp + kr * kp,
            max_relative = 1e-12
        );

        // Across leaves the interaction block is exactly zero.
        let y2 = StructuredPoint::on_path(&spec, 1, &[vec![-0.5, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
        assert_relative_eq!(kernel.eval_with_interactions(&x, &y2), kr, max_relative = 1e-12);
    }

    #[test]
    fn no_interactions_matches_eval_pair() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng);
        let a = sample_uniform(&spec, &mut rng);
        let b = sample_uniform(&spec, &mut rng);
        assert_eq!(kernel.eval_with_interactions(&a, &b), kernel.eval_pair(&a, &b));
    }

    #[test]
    fn interaction_pairs_are_validated() {
        let spec = jenatton_tree();
        let kernel = build_add_tree(spec.clone(), &ParamInit::default());
        // Vertices 1 and 5 sit on different halves of the tree.
        assert!(matches!(
            kernel.clone().with_interactions(&[(1, 5)]),
            Err(KernelError::NotAncestorDescendant(1, 5))
        ));
        // The root carries no block.
        assert!(matches!(
            kernel.with_interactions(&[(0, 3)]),
            Err(KernelError::EmptyBlock(0))
        ));
    }

    #[test]
    fn interaction_gram_is_positive_semidefinite() {
        let spec = jenatton_tree();
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let kernel = randomize_params(&build_add_tree(spec.clone(), &ParamInit::default()), &mut rng)
            .with_interactions(&[(1, 3), (1, 4), (2, 5)])
            .unwrap();
        let points: Vec<_> = (0..40).map(|_| sample_uniform(&spec, &mut rng)).collect();
        let g = kernel.gram(&points);
        assert!(g.min_eigenvalue() >= -1e-8 * g.trace());
    }
}
