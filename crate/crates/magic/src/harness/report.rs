//! Report structures and output files.
//!
//! `report.json` carries the resolved configuration plus machine-readable
//! results; the CSV companions are plot-ready, headerless tables (column
//! layouts documented in the README).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::harness::config::RunConfig;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SelectionSummary {
    pub n: usize,
    pub p: usize,
    pub lam: f64,
    pub ridge_eps: f64,
    pub randomization_scale: f64,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VariableReport {
    pub index: usize,
    pub p_value: f64,
    pub t_obs: f64,
    pub ci_lower: Option<f64>,
    pub ci_upper: Option<f64>,
    pub ci_level: Option<f64>,
    pub ci_low_ess_warning: Option<bool>,
    pub n_effective_draws: usize,
    pub mc_se: f64,
    pub accept_data: f64,
    pub accept_coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferReport {
    pub command: String,
    pub config: RunConfig,
    pub note: Option<String>,
    pub selection: Option<SelectionSummary>,
    pub results: Vec<VariableReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimNullReport {
    pub command: String,
    pub config: RunConfig,
    pub attempts: usize,
    pub kept: usize,
    pub n_null_pvalues: usize,
    pub n_alt_pvalues: usize,
    pub ks_stat: Option<f64>,
    pub ks_p: Option<f64>,
    pub rejection: Vec<RejectionRate>,
    pub mean_active_size: f64,
}

/// Reference numbers for the non-randomized counterpart of the logistic
/// study; published values annotated for comparison, not computed here.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReference {
    pub power_without_randomization: f64,
    pub selection_without_randomization: f64,
    pub note: String,
}

impl Default for BaselineReference {
    fn default() -> Self {
        Self {
            power_without_randomization: 0.176,
            selection_without_randomization: 0.91,
            note: "reference values for the corresponding non-randomized procedure; \
                   not computed by this tool"
                .into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerReport {
    pub command: String,
    pub config: RunConfig,
    pub attempts: usize,
    pub kept: usize,
    pub selection_proportion: f64,
    pub alpha: f64,
    pub power: f64,
    pub n_alternative_pvalues: usize,
    pub baseline: BaselineReference,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphEdgeReport {
    pub node_i: usize,
    pub node_j: usize,
    pub p_value: f64,
    pub t_obs: f64,
    pub n_effective_draws: usize,
    pub mc_se: f64,
    pub accept_columns: f64,
    pub accept_coef: f64,
    pub skipped_moves: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphReport {
    pub command: String,
    pub config: RunConfig,
    pub note: Option<String>,
    pub lam: f64,
    pub randomization_scale: f64,
    pub per_node_active: Vec<Vec<usize>>,
    pub edges: Vec<GraphEdgeReport>,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

/// Sorted null p-values with their empirical CDF, `m` rows.
pub fn write_ecdf_csv(path: &Path, null_pvalues: &[f64]) -> Result<()> {
    let mut sorted = null_pvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = sorted.len();
    let rows: Vec<Vec<f64>> = sorted
        .iter()
        .enumerate()
        .map(|(i, &p)| vec![p, (i + 1) as f64 / m as f64])
        .collect();
    crate::harness::data::write_rows(path, &rows)
}
