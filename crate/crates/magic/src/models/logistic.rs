//! Logistic regression model in the asymptotic statistic space.
//!
//! After selection, inference runs on the statistic
//! `T = (beta_bar_E, X_{-E}'(y - pi(X_E beta_bar_E)))` in original
//! coordinate layout, where `beta_bar_E` is the unpenalized MLE on the
//! active set. `T` is asymptotically normal with mean `(b_E, 0)` and a
//! block-diagonal covariance estimated by the plug-in information matrix:
//! with `Q = X' W X` evaluated at the fitted weights and partitioned on
//! `(E, -E)`,
//!
//! ```text
//! Var(beta_bar_E)  ~ Q_EE^-1
//! Var(T_{-E})      ~ Q_{-E,-E} - Q_{-E,E} Q_EE^-1 Q_{E,-E}
//! Cov(cross block) ~ 0
//! ```
//!
//! (score orthogonality kills the cross block). The chain's density is the
//! normal factor at `T` times the randomization density at the Taylor
//! reconstruction of the gradient, with the design and weights frozen at
//! the observed fit; the Taylor remainder is dropped, matching the
//! asymptotic law.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{MagicError, Result};
use crate::randomization::RandomizationDist;
use crate::sampler::ChainState;
use crate::solver::{sigmoid, Loss, SelectionEvent};

/// Which estimator anchors the Taylor expansion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    /// Full unpenalized MLE on the active set (default).
    Mle,
    /// One Newton step from the penalized solution.
    OneStep,
}

/// Output of the unpenalized fit on the active set.
#[derive(Debug, Clone)]
pub struct MleFit {
    pub beta_bar: DVector<f64>,
    /// Diagonal of `W = diag(pi (1 - pi))` at the fit, length `n`.
    pub w_bar: DVector<f64>,
    /// Plug-in covariance of `T`, `p x p`, original coordinate layout.
    pub sigma_hat: DMatrix<f64>,
    pub iterations: usize,
}

/// Newton fit of the unpenalized logistic regression restricted to `active`,
/// to gradient sup-norm below 1e-10. Perfect separation surfaces as a
/// model-fit error (diverging linear predictor).
pub fn fit_unpenalized_mle(
    x: &DMatrix<f64>,
    active: &[usize],
    y: &DVector<f64>,
    max_iter: usize,
) -> Result<MleFit> {
    let beta = newton_logistic(x, active, y, None, max_iter)?;
    finish_fit(x, active, y, beta.0, beta.1)
}

/// One-step variant: a single Newton step from `beta_start`.
pub fn fit_one_step(
    x: &DMatrix<f64>,
    active: &[usize],
    y: &DVector<f64>,
    beta_start: &DVector<f64>,
) -> Result<MleFit> {
    let beta = newton_logistic(x, active, y, Some(beta_start.clone()), 1)?;
    finish_fit(x, active, y, beta.0, beta.1)
}

fn active_design(x: &DMatrix<f64>, active: &[usize]) -> DMatrix<f64> {
    let mut xe = DMatrix::zeros(x.nrows(), active.len());
    for (k, &j) in active.iter().enumerate() {
        xe.set_column(k, &x.column(j));
    }
    xe
}

fn newton_logistic(
    x: &DMatrix<f64>,
    active: &[usize],
    y: &DVector<f64>,
    start: Option<DVector<f64>>,
    max_iter: usize,
) -> Result<(DVector<f64>, usize)> {
    if active.is_empty() {
        return Err(MagicError::ModelFit("active set is empty; nothing to fit".into()));
    }
    let xe = active_design(x, active);
    let e = active.len();
    let n = x.nrows();
    let one_step = start.is_some();
    let mut beta = start.unwrap_or_else(|| DVector::zeros(e));
    let nll = |b: &DVector<f64>| -> f64 {
        let eta = &xe * b;
        (0..n)
            .map(|i| eta[i].max(0.0) + (-eta[i].abs()).exp().ln_1p() - y[i] * eta[i])
            .sum()
    };
    let mut value = nll(&beta);
    for iter in 1..=max_iter {
        let eta = &xe * &beta;
        if eta.amax() > 300.0 {
            return Err(MagicError::ModelFit(
                "linear predictor diverged; perfect separation suspected".into(),
            ));
        }
        let pi = eta.map(sigmoid);
        let grad = xe.transpose() * (y - &pi);
        if !one_step && grad.amax() < 1e-10 {
            return Ok((beta, iter - 1));
        }
        let mut h = DMatrix::zeros(e, e);
        for a in 0..e {
            for b2 in a..e {
                let mut acc = 0.0;
                for i in 0..n {
                    acc += xe[(i, a)] * xe[(i, b2)] * pi[i] * (1.0 - pi[i]);
                }
                h[(a, b2)] = acc;
                h[(b2, a)] = acc;
            }
        }
        let chol = Cholesky::new(h).ok_or_else(|| {
            MagicError::ModelFit("singular information matrix in Newton step".into())
        })?;
        let direction = chol.solve(&grad);
        if one_step {
            return Ok((beta + direction, 1));
        }
        let mut t = 1.0;
        loop {
            let cand = &beta + &direction * t;
            let v = nll(&cand);
            if v <= value + 1e-12 {
                beta = cand;
                value = v;
                break;
            }
            t *= 0.5;
            if t < 1e-8 {
                return Err(MagicError::ModelFit(
                    "Newton line search stalled; perfect separation suspected".into(),
                ));
            }
        }
    }
    let eta = &xe * &beta;
    let pi = eta.map(sigmoid);
    let grad = xe.transpose() * (y - &pi);
    if grad.amax() < 1e-10 {
        Ok((beta, max_iter))
    } else {
        Err(MagicError::ModelFit(format!(
            "MLE did not converge in {max_iter} iterations (score sup-norm {:.2e})",
            grad.amax()
        )))
    }
}

fn finish_fit(
    x: &DMatrix<f64>,
    active: &[usize],
    y: &DVector<f64>,
    beta: DVector<f64>,
    iterations: usize,
) -> Result<MleFit> {
    let _ = y;
    let xe = active_design(x, active);
    let eta = &xe * &beta;
    let w_bar = eta.map(|t| {
        let p = sigmoid(t);
        p * (1.0 - p)
    });
    let sigma_hat = asymptotic_covariance(x, active, &beta)?;
    Ok(MleFit { beta_bar: beta, w_bar, sigma_hat, iterations })
}

/// Plug-in covariance of `T` at weights `W(X_E beta_e)`, `p x p` in original
/// coordinate layout: `Q_EE^-1` on the active block, the Schur complement
/// `Q_{-E,-E} - Q_{-E,E} Q_EE^-1 Q_{E,-E}` on the inactive block, zero
/// cross-covariance.
pub fn asymptotic_covariance(
    x: &DMatrix<f64>,
    active: &[usize],
    beta_e: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let p = x.ncols();
    let (q_ee, q_ie, q_ii) = information_blocks(x, active, beta_e)?;
    let e = active.len();
    let chol = Cholesky::new(q_ee.clone())
        .ok_or_else(|| MagicError::ModelFit("singular active information block".into()))?;
    let q_ee_inv = chol.inverse();
    let schur = &q_ii - &q_ie * chol.solve(&q_ie.transpose());
    let mut active_mask = vec![false; p];
    for &j in active {
        active_mask[j] = true;
    }
    let inactive: Vec<usize> = (0..p).filter(|&j| !active_mask[j]).collect();
    let mut sigma = DMatrix::zeros(p, p);
    for a in 0..e {
        for b in 0..e {
            sigma[(active[a], active[b])] = q_ee_inv[(a, b)];
        }
    }
    for a in 0..inactive.len() {
        for b in 0..inactive.len() {
            sigma[(inactive[a], inactive[b])] = schur[(a, b)];
        }
    }
    Ok(sigma)
}

fn information_blocks(
    x: &DMatrix<f64>,
    active: &[usize],
    beta_e: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let p = x.ncols();
    let n = x.nrows();
    if beta_e.len() != active.len() {
        return Err(MagicError::Dimension("beta_e length must equal |active|".into()));
    }
    let xe = active_design(x, active);
    let eta = &xe * beta_e;
    let w = eta.map(|t| {
        let q = sigmoid(t);
        q * (1.0 - q)
    });
    // Q = X' W X assembled once
    let mut xw = x.clone();
    for i in 0..n {
        for j in 0..p {
            xw[(i, j)] *= w[i];
        }
    }
    let q = x.transpose() * xw;
    let mut active_mask = vec![false; p];
    for &j in active {
        active_mask[j] = true;
    }
    let inactive: Vec<usize> = (0..p).filter(|&j| !active_mask[j]).collect();
    let e = active.len();
    let m = inactive.len();
    let mut q_ee = DMatrix::zeros(e, e);
    let mut q_ie = DMatrix::zeros(m, e);
    let mut q_ii = DMatrix::zeros(m, m);
    for a in 0..e {
        for b in 0..e {
            q_ee[(a, b)] = q[(active[a], active[b])];
        }
    }
    for a in 0..m {
        for b in 0..e {
            q_ie[(a, b)] = q[(inactive[a], active[b])];
        }
        for b in 0..m {
            q_ii[(a, b)] = q[(inactive[a], inactive[b])];
        }
    }
    Ok((q_ee, q_ie, q_ii))
}

/// Logistic data model conditioned on a selection event, in statistic space.
#[derive(Debug, Clone)]
pub struct LogisticModel {
    event: SelectionEvent,
    b_e_null: DVector<f64>,
    randomization: RandomizationDist,
    sqrt_n: f64,
    beta_bar: DVector<f64>,
    w_bar: DVector<f64>,
    q_ee: DMatrix<f64>,
    q_ie: DMatrix<f64>,
    schur_chol: Cholesky<f64, Dyn>,
    sigma_hat: DMatrix<f64>,
    t_obs: DVector<f64>,
    inactive: Vec<usize>,
}

impl LogisticModel {
    /// Fits the anchor estimator and freezes the design, weights, and
    /// covariance at the observed data. `beta_hat_e` (the penalized active
    /// coefficients) is required for the one-step estimator.
    pub fn from_event(
        event: SelectionEvent,
        randomization: RandomizationDist,
        b_e_null: Option<DVector<f64>>,
        estimator: EstimatorKind,
        beta_hat_e: Option<&DVector<f64>>,
    ) -> Result<Self> {
        let (x, y) = match &event.loss {
            Loss::Logistic { x, y } => (x.clone(), y.clone()),
            _ => {
                return Err(MagicError::Argument(
                    "LogisticModel requires a logistic selection event".into(),
                ))
            }
        };
        if randomization.dim() != x.ncols() {
            return Err(MagicError::Dimension(format!(
                "randomization dim {} != p = {}",
                randomization.dim(),
                x.ncols()
            )));
        }
        let fit = match estimator {
            EstimatorKind::Mle => fit_unpenalized_mle(&x, &event.active, &y, 100)?,
            EstimatorKind::OneStep => {
                let start = beta_hat_e.ok_or_else(|| {
                    MagicError::Argument(
                        "one-step estimator needs the penalized active coefficients".into(),
                    )
                })?;
                fit_one_step(&x, &event.active, &y, start)?
            }
        };
        let b_e_null = b_e_null.unwrap_or_else(|| DVector::zeros(event.n_active()));
        if b_e_null.len() != event.n_active() {
            return Err(MagicError::Dimension("b_e_null length must equal |E|".into()));
        }
        let (q_ee, q_ie, q_ii) = information_blocks(&x, &event.active, &fit.beta_bar)?;
        let q_ee_chol = Cholesky::new(q_ee.clone())
            .ok_or_else(|| MagicError::ModelFit("singular active information block".into()))?;
        let schur = &q_ii - &q_ie * q_ee_chol.solve(&q_ie.transpose());
        let schur_chol = Cholesky::new(schur)
            .ok_or_else(|| MagicError::ModelFit("singular inactive score covariance".into()))?;
        let inactive = event.inactive();

        // observed statistic: MLE coordinates on E, score coordinates off E
        let xe = active_design(&x, &event.active);
        let pi_bar = (&xe * &fit.beta_bar).map(sigmoid);
        let score_resid = &y - &pi_bar;
        let mut t_obs = DVector::zeros(x.ncols());
        for (k, &j) in event.active.iter().enumerate() {
            t_obs[j] = fit.beta_bar[k];
        }
        for &j in &inactive {
            t_obs[j] = x.column(j).dot(&score_resid);
        }
        let sqrt_n = (x.nrows() as f64).sqrt();
        Ok(Self {
            event,
            b_e_null,
            randomization,
            sqrt_n,
            beta_bar: fit.beta_bar,
            w_bar: fit.w_bar,
            q_ee,
            q_ie,
            schur_chol,
            sigma_hat: fit.sigma_hat,
            t_obs,
            inactive,
        })
    }

    pub fn event(&self) -> &SelectionEvent {
        &self.event
    }

    pub fn randomization(&self) -> &RandomizationDist {
        &self.randomization
    }

    pub fn beta_bar(&self) -> &DVector<f64> {
        &self.beta_bar
    }

    pub fn w_bar(&self) -> &DVector<f64> {
        &self.w_bar
    }

    pub fn sigma_hat(&self) -> &DMatrix<f64> {
        &self.sigma_hat
    }

    /// Observed statistic vector (original coordinate layout).
    pub fn observed_t(&self) -> &DVector<f64> {
        &self.t_obs
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }

    pub fn with_null(mut self, b_e_null: DVector<f64>) -> Result<Self> {
        if b_e_null.len() != self.event.n_active() {
            return Err(MagicError::Dimension("b_e_null length must equal |E|".into()));
        }
        self.b_e_null = b_e_null;
        Ok(self)
    }

    fn t_active(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.event.n_active(), |k, _| t[self.event.active[k]])
    }

    fn t_inactive(&self, t: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.inactive.len(), |k, _| t[self.inactive[k]])
    }

    /// Taylor-reconstructed randomization at a statistic-space state.
    pub fn g_argument(&self, state: &ChainState) -> Result<DVector<f64>> {
        let t = state.statistic()?;
        let u = &state.beta_e - self.t_active(t);
        let top = &self.q_ee * &u / self.sqrt_n;
        let bottom = (&self.q_ie * &u - self.t_inactive(t)) / self.sqrt_n;
        let mut omega = DVector::zeros(self.event.dim());
        for (k, &j) in self.event.active.iter().enumerate() {
            omega[j] = top[k]
                + self.event.lam * self.event.signs[k]
                + self.event.ridge_eps * state.beta_e[k];
        }
        for (k, &j) in self.inactive.iter().enumerate() {
            omega[j] = bottom[k] + self.event.lam * state.z_inactive[k];
        }
        Ok(omega)
    }

    /// Log selective density at a state, `-inf` outside the support. The
    /// normal factor is evaluated up to its additive constant.
    pub fn selective_log_density(&self, state: &ChainState) -> f64 {
        let t = match state.statistic() {
            Ok(t) => t,
            Err(_) => return f64::NEG_INFINITY,
        };
        if !self.event.in_support(&state.beta_e, &state.z_inactive) {
            return f64::NEG_INFINITY;
        }
        let d_e = self.t_active(t) - &self.b_e_null;
        let t_i = self.t_inactive(t);
        let quad = d_e.dot(&(&self.q_ee * &d_e)) + t_i.dot(&self.schur_chol.solve(&t_i));
        let omega = match self.g_argument(state) {
            Ok(o) => o,
            Err(_) => return f64::NEG_INFINITY,
        };
        let g: f64 = omega.iter().map(|&w| self.randomization.log_density_marginal(w)).sum();
        -0.5 * quad + g
    }

    /// Inactive block of the Taylorized gradient, the `gamma` of the exact
    /// subgradient draw.
    pub fn gamma_inactive(&self, state: &ChainState) -> Result<DVector<f64>> {
        let t = state.statistic()?;
        let u = &state.beta_e - self.t_active(t);
        Ok((&self.q_ie * u - self.t_inactive(t)) / self.sqrt_n)
    }

    /// Log-determinant of the Taylorized reconstruction map in
    /// `(beta_E, z_{-E})`: `logdet(Q_EE / sqrt(n) + eps I) + (p-|E|) ln lam`.
    pub fn jacobian_logdet(&self) -> Result<f64> {
        let e = self.event.n_active();
        let mut m = &self.q_ee / self.sqrt_n;
        for k in 0..e {
            m[(k, k)] += self.event.ridge_eps;
        }
        let chol = Cholesky::new(m).ok_or_else(|| {
            MagicError::SingularSelection("Taylorized Jacobian block is singular".into())
        })?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(logdet + (self.event.dim() - e) as f64 * self.event.lam.ln())
    }

    /// Natural-parameter scale of the tested coordinate `j` (original
    /// index): tilting `b_j` by `b` multiplies the conditional density by
    /// `exp(b * (Q_EE)_jj * T_j)` once the other statistics are fixed
    /// (the inactive block is uncorrelated, so only the active block tilts).
    pub fn tilt_scale(&self, j: usize) -> Result<f64> {
        let k = self
            .event
            .active
            .iter()
            .position(|&a| a == j)
            .ok_or_else(|| MagicError::Argument(format!("variable {j} is not active")))?;
        Ok(self.q_ee[(k, k)])
    }

    /// Marginal standard deviation of each statistic coordinate, used to
    /// precondition the data move.
    pub fn t_scales(&self) -> DVector<f64> {
        DVector::from_fn(self.event.dim(), |j, _| self.sigma_hat[(j, j)].max(1e-300).sqrt())
    }
}
