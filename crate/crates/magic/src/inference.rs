//! Selective p-values and confidence intervals from chain output, plus the
//! calibration diagnostics used by the simulation harness.
//!
//! The Monte-Carlo p-value is the add-one-corrected percentile of the
//! observed statistic among the null-chain draws, which keeps the
//! finite-sample test valid. Confidence intervals invert the tilted test:
//! the conditional law depends on the tested parameter `b` only through an
//! `exp(b * eta * T_j)` factor, so a single null chain reweighted by those
//! factors evaluates the test along a whole grid of `b` values.

use crate::error::{MagicError, Result};

/// Direction of the alternative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    Greater,
    Less,
    TwoSided,
}

/// Per-variable inference output.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct InferenceResult {
    /// Variable index (original coordinates; for graph edges the pair is
    /// reported separately).
    pub index: usize,
    pub p_value: f64,
    pub t_obs: f64,
    /// Confidence interval at the requested level, when computed.
    pub ci: Option<(f64, f64)>,
    pub ci_level: Option<f64>,
    /// Autocorrelation-adjusted effective draw count behind the p-value.
    pub n_effective_draws: usize,
    /// Monte-Carlo standard error of the p-value at the effective size.
    pub mc_se: f64,
}

/// Add-one Monte-Carlo p-value of `t_obs` among null draws.
pub fn selective_pvalue(draws: &[f64], t_obs: f64, alternative: Alternative) -> Result<f64> {
    if draws.is_empty() {
        return Err(MagicError::Argument("empty sample set".into()));
    }
    let weights = vec![1.0; draws.len()];
    Ok(weighted_pvalue(draws, &weights, t_obs, alternative))
}

/// Weighted variant used by the tilted test. Weights are normalized to sum
/// to the draw count, so unit weights reproduce [`selective_pvalue`]
/// exactly.
pub fn weighted_pvalue(draws: &[f64], weights: &[f64], t_obs: f64, alternative: Alternative) -> f64 {
    debug_assert_eq!(draws.len(), weights.len());
    let m = draws.len() as f64;
    let total: f64 = weights.iter().sum();
    let scale = m / total;
    let mut ge = 0.0;
    let mut le = 0.0;
    for (&t, &w) in draws.iter().zip(weights) {
        if t >= t_obs {
            ge += w;
        }
        if t <= t_obs {
            le += w;
        }
    }
    let p_greater = (1.0 + scale * ge) / (1.0 + m);
    let p_less = (1.0 + scale * le) / (1.0 + m);
    match alternative {
        Alternative::Greater => p_greater.min(1.0),
        Alternative::Less => p_less.min(1.0),
        Alternative::TwoSided => (2.0 * p_greater.min(p_less)).min(1.0),
    }
}

/// Effective sample size of a (possibly autocorrelated) scalar series:
/// `m / (1 + 2 sum rho_k)` with the autocorrelation sum truncated at the
/// first nonpositive term.
pub fn effective_sample_size(series: &[f64]) -> f64 {
    let m = series.len();
    if m < 10 {
        return m as f64;
    }
    let mean = series.iter().sum::<f64>() / m as f64;
    let var: f64 = series.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m as f64;
    if var <= 0.0 {
        return m as f64;
    }
    let max_lag = (m / 2).min(1000);
    let mut rho_sum = 0.0;
    for lag in 1..max_lag {
        let mut acc = 0.0;
        for i in 0..m - lag {
            acc += (series[i] - mean) * (series[i + lag] - mean);
        }
        let rho = acc / (m as f64 * var);
        if rho <= 0.0 {
            break;
        }
        rho_sum += rho;
    }
    (m as f64 / (1.0 + 2.0 * rho_sum)).max(1.0)
}

/// Assembles the per-variable result with effective-size diagnostics.
pub fn summarize(
    index: usize,
    draws: &[f64],
    t_obs: f64,
    alternative: Alternative,
    ci: Option<(f64, f64)>,
    ci_level: Option<f64>,
) -> Result<InferenceResult> {
    let p = selective_pvalue(draws, t_obs, alternative)?;
    let ess = effective_sample_size(draws);
    let mc_se = (p * (1.0 - p) / ess).sqrt();
    Ok(InferenceResult {
        index,
        p_value: p,
        t_obs,
        ci,
        ci_level,
        n_effective_draws: ess.round() as usize,
        mc_se,
    })
}

/// Confidence interval with tilt diagnostics.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CiResult {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    /// Smallest effective tilt sample size among retained grid points.
    pub min_tilt_ess: f64,
    /// Set when `min_tilt_ess` fell below 100: endpoints may need a wider
    /// chain or a finer local grid.
    pub low_ess_warning: bool,
}

/// Inverts the tilted two-sided test over `grid`: a parameter value `b` is
/// retained when its tilted p-value exceeds `1 - level`. `tilt_scale` is the
/// natural-parameter scale `eta` of the model (`exp(b * eta * t)` weights).
pub fn selective_ci(
    draws: &[f64],
    t_obs: f64,
    level: f64,
    tilt_scale: f64,
    grid: &[f64],
) -> Result<CiResult> {
    if draws.is_empty() {
        return Err(MagicError::Argument("empty sample set".into()));
    }
    if grid.is_empty() {
        return Err(MagicError::Argument("empty confidence grid".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MagicError::Argument(format!(
            "confidence level must lie in (0,1), got {level}"
        )));
    }
    let alpha = 1.0 - level;
    let mut weights = vec![0.0; draws.len()];
    let mut retained: Vec<(f64, f64)> = Vec::new();
    let mut best = (f64::NEG_INFINITY, f64::NAN);
    let mut min_ess = f64::INFINITY;
    for &b in grid {
        let c = b * tilt_scale;
        let max_arg = draws.iter().map(|&t| c * t).fold(f64::NEG_INFINITY, f64::max);
        for (w, &t) in weights.iter_mut().zip(draws) {
            *w = (c * t - max_arg).exp();
        }
        let sum: f64 = weights.iter().sum();
        let sum_sq: f64 = weights.iter().map(|w| w * w).sum();
        let ess = sum * sum / sum_sq;
        let p = weighted_pvalue(draws, &weights, t_obs, Alternative::TwoSided);
        if p > best.0 {
            best = (p, b);
        }
        if p > alpha {
            retained.push((b, ess));
            min_ess = min_ess.min(ess);
        }
    }
    if retained.is_empty() {
        return Err(MagicError::GridTooCoarse { max_p: best.0, at_value: best.1 });
    }
    let lower = retained.first().unwrap().0;
    let upper = retained.last().unwrap().0;
    Ok(CiResult {
        lower,
        upper,
        level,
        min_tilt_ess: min_ess,
        low_ess_warning: min_ess < 100.0,
    })
}

/// Evenly spaced inversion grid centered at a point estimate.
pub fn ci_grid(center: f64, half_width: f64, points: usize) -> Vec<f64> {
    let points = points.max(3);
    (0..points)
        .map(|k| center - half_width + 2.0 * half_width * k as f64 / (points - 1) as f64)
        .collect()
}

/// One-sample Kolmogorov-Smirnov test against Unif(0,1): the statistic and
/// its asymptotic p-value (with the Stephens small-sample adjustment).
pub fn ks_uniformity(pvalues: &[f64]) -> Result<(f64, f64)> {
    if pvalues.len() < 20 {
        return Err(MagicError::Argument(format!(
            "need at least 20 p-values for the KS check, got {}",
            pvalues.len()
        )));
    }
    let mut sorted = pvalues.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        d = d.max(x - i as f64 / n).max((i as f64 + 1.0) / n - x);
    }
    let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
    Ok((d, kolmogorov_sf(lambda)))
}

/// Survival function of the Kolmogorov distribution,
/// `2 sum_k (-1)^(k-1) exp(-2 k^2 x^2)`.
fn kolmogorov_sf(x: f64) -> f64 {
    if x < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=200 {
        let term = (-2.0 * (k as f64).powi(2) * x * x).exp();
        if term < 1e-16 {
            break;
        }
        sum += if k % 2 == 1 { term } else { -term };
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Fraction of p-values at or below `level`.
pub fn power_estimate(pvalues: &[f64], level: f64) -> Result<f64> {
    if pvalues.is_empty() {
        return Err(MagicError::Argument("no p-values to summarize".into()));
    }
    Ok(pvalues.iter().filter(|&&p| p <= level).count() as f64 / pvalues.len() as f64)
}
