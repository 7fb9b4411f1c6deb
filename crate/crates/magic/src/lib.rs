//! Selective inference after randomized L1-penalized model selection.
//!
//! The crate solves a randomized convex program (a smooth loss plus an L1
//! penalty perturbed by a linear randomization term), conditions on the
//! selected active set and signs via the KKT reparametrization, samples the
//! resulting constrained law with a Metropolis-within-Gibbs chain, and turns
//! the draws into selective p-values and confidence intervals.
//!
//! Three losses are supported end to end: squared error (lasso), logistic
//! regression, and per-node regressions for Gaussian graphical model
//! neighborhood selection.
//!
//! Entry points:
//! - [`solver::solve_randomized`] solves the randomized program.
//! - [`models`] builds the selective density for each data model.
//! - [`sampler::run_chain`] draws from the constrained law.
//! - [`inference`] computes p-values, intervals, and calibration checks.
//! - [`harness`] wires everything into reproducible runs behind the `magic`
//!   command-line binary; the `examples/` directory shows library usage.

pub mod error;
pub mod harness;
pub mod inference;
pub mod models;
pub mod randomization;
pub mod sampler;
pub mod solver;

pub use error::{MagicError, Result};
pub use inference::{ks_uniformity, power_estimate, selective_ci, selective_pvalue, Alternative, CiResult, InferenceResult};
pub use models::{
    fit_unpenalized_mle, symmetrize_edges, EstimatorKind, GaussianLinearModel, GraphicalModel,
    LogisticModel, SufficientStat,
};
pub use randomization::{Bound, RandomizationDist, RandomizationFamily};
pub use sampler::{
    run_chain, run_graph_chain, ChainState, DataPart, GraphState, LassoChainTarget,
    LogisticChainTarget, NodeCoef, SampleSet, SamplerConfig, VectorTarget,
};
pub use solver::{
    jacobian_logdet, kkt_residual, reconstruct_omega, solve_randomized, DataRef, Loss,
    ProgramSpec, SelectionEvent, Solution,
};
