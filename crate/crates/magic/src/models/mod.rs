//! Data models and their selective densities.
//!
//! Each model couples an exponential-family law for the data part with the
//! randomization factor obtained from the reconstruction map, giving the
//! joint density of `(data, beta_E, z_{-E})` on the selection support up to
//! a normalizing constant. Constants (including Jacobian factors that do
//! not vary along a chain) are dropped; everything downstream works with
//! density ratios.

pub mod gaussian;
pub mod graph;
pub mod logistic;

pub use gaussian::{GaussianLinearModel, Projector, SufficientStat};
pub use graph::{symmetrize_edges, GraphicalModel};
pub use logistic::{asymptotic_covariance, fit_unpenalized_mle, EstimatorKind, LogisticModel, MleFit};
