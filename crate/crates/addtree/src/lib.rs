//! Bayesian optimization for tree-structured (conditional) parameter spaces.
//!
//! The toolkit models a black-box objective whose parameters hang off a
//! rooted tree — categorical variables select child edges, continuous
//! variables live at the vertices — with a Gaussian process whose covariance
//! sums per-vertex kernels over the shared prefix of two points' paths.
//! Observations from different branches then share information through the
//! vertices their paths have in common, which is what makes the model
//! sample-efficient in the low-data regime.
//!
//! The main pieces:
//!
//! - [`tree_space`]: the space itself — parsing, validation, the flat
//!   tag-slot encoding, uniform sampling.
//! - [`kernel`]: the additive tree covariance function with per-vertex
//!   squared-exponential bases, optional interaction terms and
//!   hyperparameter gradients.
//! - [`gp`]: exact GP regression with structure-aware restriction of the
//!   conditioning set, per-vertex component posteriors and multi-start
//!   marginal-likelihood fitting.
//! - [`acquisition`]: GP-UCB with per-vertex parallel optimization, plus the
//!   naive per-leaf optimizer kept as a baseline and diagnostic.
//! - [`baselines`]: random search, independent per-leaf GPs and a one-hot
//!   flattened GP behind a common step interface.
//! - [`bench`]: built-in objectives, optimization and regression
//!   experiments, run summaries and the Wilcoxon signed-rank test.
//! - [`cli`]: the `addtree run` command, the external-objective line
//!   protocol and CSV/SVG/manifest output.
//!
//! See the crate examples for runnable walkthroughs of each capability.

pub mod acquisition;
pub mod baselines;
pub mod bench;
pub mod cli;
pub mod gp;
pub mod kernel;
pub mod optim;
pub mod tree_space;

pub use tree_space::{
    delinearize, dimensions, linearize, parse_spec, sample_uniform, shared_prefix, LinearPoint,
    PointError, SpecError, StructuredPoint, TreeSpec,
};
