//! Run configuration: a single JSON file, overridable by CLI flags.

use serde::{Deserialize, Serialize};

use crate::error::{MagicError, Result};
use crate::inference::Alternative;
use crate::randomization::RandomizationFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Lasso,
    Logistic,
    Graph,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    /// Headerless CSV with the `n x p` design matrix.
    pub design: String,
    /// Headerless CSV with the response column (absent for graph data).
    #[serde(default)]
    pub response: Option<String>,
}

/// Synthetic-data settings, used when no data paths are given.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub n: usize,
    pub p: usize,
    /// Nonzero coefficients (lasso/logistic).
    #[serde(default)]
    pub s: usize,
    /// Magnitude of each nonzero coefficient in the unit-column-norm
    /// design (signs alternate).
    #[serde(default = "default_snr")]
    pub snr: f64,
    /// Off-diagonal precision value of true edges (graph).
    #[serde(default = "default_rho")]
    pub rho: f64,
    /// Fraction of off-diagonal precision entries that are nonzero (graph).
    #[serde(default = "default_edge_frac")]
    pub edge_frac: f64,
    /// Replications kept (after the selection-screening filter) in
    /// simulation studies.
    #[serde(default = "default_reps")]
    pub n_reps: usize,
    /// Attempt budget as a multiple of `n_reps`.
    #[serde(default = "default_attempt_factor")]
    pub max_attempt_factor: usize,
    /// Cap on tested coordinates (or edges) per replication in simulation
    /// studies; the first ones in index order are kept. Unlimited when
    /// absent.
    #[serde(default)]
    pub max_tested_per_rep: Option<usize>,
}

fn default_snr() -> f64 {
    7.0
}
fn default_rho() -> f64 {
    0.245
}
fn default_edge_frac() -> f64 {
    0.01
}
fn default_reps() -> usize {
    100
}
fn default_attempt_factor() -> usize {
    20
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomizationSpec {
    #[serde(default = "default_family")]
    pub family: RandomizationFamily,
    /// Per-coordinate scale; when absent a problem-dependent default is
    /// derived from the score scale of the data (see the simulation module).
    #[serde(default)]
    pub scale: Option<f64>,
}

fn default_family() -> RandomizationFamily {
    RandomizationFamily::Laplace
}

impl Default for RandomizationSpec {
    fn default() -> Self {
        Self { family: default_family(), scale: None }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSettings {
    #[serde(default = "default_samples")]
    pub n_samples: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    #[serde(default = "default_thin")]
    pub thin: usize,
    #[serde(default = "default_adapt")]
    pub adapt: bool,
    #[serde(default = "default_step")]
    pub step_data: f64,
    #[serde(default = "default_step")]
    pub step_coef: f64,
}

fn default_samples() -> usize {
    12_000
}
fn default_burn_in() -> usize {
    3_000
}
fn default_thin() -> usize {
    1
}
fn default_adapt() -> bool {
    true
}
fn default_step() -> f64 {
    1.0
}

impl Default for SamplerSettings {
    fn default() -> Self {
        Self {
            n_samples: default_samples(),
            burn_in: default_burn_in(),
            thin: default_thin(),
            adapt: default_adapt(),
            step_data: default_step(),
            step_coef: default_step(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemKind,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub simulate: Option<SimSpec>,
    /// Penalty level; when absent an automatic scaling rule fills it
    /// (a Monte-Carlo estimate of the null score sup-norm times
    /// `lam_scale`).
    #[serde(default)]
    pub lam: Option<f64>,
    #[serde(default = "default_one")]
    pub lam_scale: f64,
    /// Ridge term; defaults to 0 for lasso/graph and 0.02 for logistic.
    #[serde(default)]
    pub ridge_eps: Option<f64>,
    /// Known noise variance of the linear model.
    #[serde(default = "default_one")]
    pub sigma2: f64,
    #[serde(default)]
    pub randomization: RandomizationSpec,
    #[serde(default)]
    pub sampler: SamplerSettings,
    /// Test level for power/rejection summaries.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Confidence level of reported intervals.
    #[serde(default = "default_ci_level")]
    pub ci_level: f64,
    #[serde(default = "default_true")]
    pub compute_ci: bool,
    /// Half-width of the interval-inversion grid in standard errors.
    #[serde(default = "default_grid_span")]
    pub ci_grid_span: f64,
    #[serde(default = "default_grid_points")]
    pub ci_grid_points: usize,
    #[serde(default = "default_alternative")]
    pub alternative: Alternative,
    #[serde(default = "default_out_dir")]
    pub out_dir: String,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; 0 means one per available core.
    #[serde(default)]
    pub workers: usize,
}

fn default_one() -> f64 {
    1.0
}
fn default_alpha() -> f64 {
    0.05
}
fn default_ci_level() -> f64 {
    0.9
}
fn default_true() -> bool {
    true
}
fn default_grid_span() -> f64 {
    8.0
}
fn default_grid_points() -> usize {
    161
}
fn default_alternative() -> Alternative {
    Alternative::TwoSided
}
fn default_out_dir() -> String {
    "magic-out".into()
}

impl RunConfig {
    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            MagicError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| MagicError::Config(format!("bad config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.data, &self.simulate) {
            (Some(_), Some(_)) => {
                return Err(MagicError::Config(
                    "config must give either data paths or a simulation spec, not both".into(),
                ))
            }
            (None, None) => {
                return Err(MagicError::Config(
                    "config must give data paths or a simulation spec".into(),
                ))
            }
            _ => {}
        }
        if let Some(sim) = &self.simulate {
            if sim.n == 0 || sim.p == 0 || sim.n_reps == 0 {
                return Err(MagicError::Config("simulation counts must be positive".into()));
            }
            if sim.s > sim.p {
                return Err(MagicError::Config("sparsity s cannot exceed p".into()));
            }
        }
        if let Some(l) = self.lam {
            if !(l > 0.0) {
                return Err(MagicError::Config("lam must be positive".into()));
            }
        }
        if !(self.lam_scale > 0.0) {
            return Err(MagicError::Config("lam_scale must be positive".into()));
        }
        if let Some(e) = self.ridge_eps {
            if !(e >= 0.0) {
                return Err(MagicError::Config("ridge_eps must be nonnegative".into()));
            }
        }
        if !(self.sigma2 > 0.0) {
            return Err(MagicError::Config("sigma2 must be positive".into()));
        }
        if let Some(s) = self.randomization.scale {
            if !(s > 0.0) {
                return Err(MagicError::Config("randomization scale must be positive".into()));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(MagicError::Config("alpha must lie in (0,1)".into()));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(MagicError::Config("ci_level must lie in (0,1)".into()));
        }
        if self.sampler.n_samples == 0 || self.sampler.thin == 0 {
            return Err(MagicError::Config("sampler counts must be positive".into()));
        }
        if self.ci_grid_points < 3 {
            return Err(MagicError::Config("ci_grid_points must be at least 3".into()));
        }
        Ok(())
    }

    /// Effective ridge term for the configured problem.
    pub fn ridge_eps_for(&self, problem: ProblemKind) -> f64 {
        self.ridge_eps.unwrap_or(match problem {
            ProblemKind::Logistic => 0.02,
            _ => 0.0,
        })
    }

    /// Sampler configuration for one chain with a derived seed.
    pub fn sampler_config(&self, seed: u64) -> crate::sampler::SamplerConfig {
        crate::sampler::SamplerConfig {
            n_samples: self.sampler.n_samples,
            burn_in: self.sampler.burn_in,
            thin: self.sampler.thin,
            step_data: self.sampler.step_data,
            step_coef: self.sampler.step_coef,
            target_accept_data: None,
            target_accept_coef: None,
            adapt: self.sampler.adapt,
            seed,
            store_states: false,
        }
    }
}
