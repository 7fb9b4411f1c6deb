//! Randomized L1 program: solver, KKT residual, selection event extraction,
//! and the reconstruction map recovering the randomization from a state.
//!
//! The program minimized is
//!
//! ```text
//! loss(beta; data) + lam * ||beta||_1 - omega' beta + (eps/2) * ||beta||_2^2
//! ```
//!
//! with three loss families. Squared error is `0.5 * ||y - X beta||^2`;
//! logistic is the negative log-likelihood scaled by `1/sqrt(n)`; node
//! regression for graphical models is `n^-1 * ||x_i - X_{-i} beta||^2` over
//! the `p - 1` coordinates excluding the node itself (the node coordinate is
//! structurally zero, so the program lives in the reduced space).
//!
//! At a solution, stationarity reads `gamma + lam * z + eps * beta = omega`
//! with `z` the subgradient of the L1 norm. Inactive subgradients are always
//! computed from stationarity rather than taken from optimizer state, so the
//! identity holds exactly by construction and the reconstruction map inverts
//! the solve to rounding error.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{MagicError, Result};

/// Smooth loss of the randomized program, together with its data.
#[derive(Debug, Clone)]
pub enum Loss {
    /// `0.5 * ||y - X beta||^2`
    SquaredError { x: DMatrix<f64>, y: DVector<f64> },
    /// `-(1/sqrt(n)) * sum_i [y_i eta_i - log(1 + exp(eta_i))]`, `y_i` in {0,1}
    Logistic { x: DMatrix<f64>, y: DVector<f64> },
    /// `n^-1 * ||x_node - X_{-node} beta||^2` over the reduced coordinates
    NodeRegression { x: DMatrix<f64>, node: usize },
}

impl Loss {
    /// Dimension of the optimization variable.
    pub fn dim(&self) -> usize {
        match self {
            Loss::SquaredError { x, .. } | Loss::Logistic { x, .. } => x.ncols(),
            Loss::NodeRegression { x, .. } => x.ncols() - 1,
        }
    }

    pub fn n_obs(&self) -> usize {
        match self {
            Loss::SquaredError { x, .. }
            | Loss::Logistic { x, .. }
            | Loss::NodeRegression { x, .. } => x.nrows(),
        }
    }

    /// Original design-column index behind reduced coordinate `j`.
    pub fn column_index(&self, j: usize) -> usize {
        match self {
            Loss::NodeRegression { node, .. } => {
                if j < *node {
                    j
                } else {
                    j + 1
                }
            }
            _ => j,
        }
    }

    fn col(&self, j: usize) -> DVectorView<'_, f64> {
        match self {
            Loss::SquaredError { x, .. } | Loss::Logistic { x, .. } => x.column(j),
            Loss::NodeRegression { x, .. } => x.column(self.column_index(j)),
        }
    }

    /// Gradient of the smooth loss at `beta` (reduced coordinates).
    pub fn gradient(&self, beta: &DVector<f64>) -> DVector<f64> {
        let fitted = self.fitted(beta);
        self.gradient_from_fitted(&fitted)
    }

    fn fitted(&self, beta: &DVector<f64>) -> DVector<f64> {
        let n = self.n_obs();
        let mut fitted = DVector::zeros(n);
        for j in 0..self.dim() {
            if beta[j] != 0.0 {
                fitted.axpy(beta[j], &self.col(j), 1.0);
            }
        }
        fitted
    }

    fn gradient_from_fitted(&self, fitted: &DVector<f64>) -> DVector<f64> {
        match self {
            Loss::SquaredError { x, y } => {
                let r = y - fitted;
                let mut g = x.tr_mul(&r);
                g.neg_mut();
                g
            }
            Loss::Logistic { x, y } => {
                let resid = DVector::from_fn(y.len(), |i, _| y[i] - sigmoid(fitted[i]));
                let mut g = x.tr_mul(&resid);
                g.neg_mut();
                g *= 1.0 / (x.nrows() as f64).sqrt();
                g
            }
            Loss::NodeRegression { x, node } => {
                let r = x.column(*node) - fitted;
                let scale = 2.0 / x.nrows() as f64;
                let mut g = DVector::zeros(self.dim());
                for j in 0..self.dim() {
                    g[j] = -scale * self.col(j).dot(&r);
                }
                g
            }
        }
    }

    /// Per-coordinate curvature upper bound used as the proximal majorizer.
    fn curvature(&self, j: usize) -> f64 {
        let sq = self.col(j).norm_squared();
        match self {
            Loss::SquaredError { .. } => sq,
            Loss::Logistic { x, .. } => 0.25 * sq / (x.nrows() as f64).sqrt(),
            Loss::NodeRegression { x, .. } => 2.0 * sq / x.nrows() as f64,
        }
    }

    /// Smooth part of the objective.
    pub fn value(&self, beta: &DVector<f64>) -> f64 {
        let fitted = self.fitted(beta);
        match self {
            Loss::SquaredError { y, .. } => 0.5 * (y - &fitted).norm_squared(),
            Loss::Logistic { x, y } => {
                let mut v = 0.0;
                for i in 0..y.len() {
                    let eta = fitted[i];
                    // softplus(eta) - y*eta, stable in both tails
                    v += eta.max(0.0) + (-eta.abs()).exp().ln_1p() - y[i] * eta;
                }
                v / (x.nrows() as f64).sqrt()
            }
            Loss::NodeRegression { x, node } => {
                (x.column(*node) - fitted).norm_squared() / x.nrows() as f64
            }
        }
    }
}

#[inline]
pub(crate) fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[inline]
fn soft_threshold(v: f64, lam: f64) -> f64 {
    if v > lam {
        v - lam
    } else if v < -lam {
        v + lam
    } else {
        0.0
    }
}

/// One randomized program instance.
#[derive(Debug, Clone)]
pub struct ProgramSpec {
    pub loss: Loss,
    pub lam: f64,
    pub ridge_eps: f64,
    pub omega: DVector<f64>,
}

impl ProgramSpec {
    pub fn new(loss: Loss, lam: f64, ridge_eps: f64, omega: DVector<f64>) -> Result<Self> {
        if !(lam > 0.0) {
            return Err(MagicError::Argument(format!("lam must be positive, got {lam}")));
        }
        if !(ridge_eps >= 0.0) {
            return Err(MagicError::Argument(format!(
                "ridge_eps must be nonnegative, got {ridge_eps}"
            )));
        }
        if matches!(loss, Loss::Logistic { .. }) && ridge_eps == 0.0 {
            return Err(MagicError::Argument(
                "logistic loss requires ridge_eps > 0 for the solution to exist".into(),
            ));
        }
        if let Loss::Logistic { y, .. } = &loss {
            if y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(MagicError::Argument("logistic responses must be 0/1".into()));
            }
        }
        if let Loss::NodeRegression { x, node } = &loss {
            if *node >= x.ncols() {
                return Err(MagicError::Argument(format!(
                    "node {node} out of range for {} columns",
                    x.ncols()
                )));
            }
            if x.ncols() < 2 {
                return Err(MagicError::Argument("node regression needs p >= 2".into()));
            }
        }
        if omega.len() != loss.dim() {
            return Err(MagicError::Dimension(format!(
                "omega has length {}, program dimension is {}",
                omega.len(),
                loss.dim()
            )));
        }
        Ok(Self { loss, lam, ridge_eps, omega })
    }

    /// Full objective `loss + lam*||.||_1 - omega'beta + eps/2*||.||^2`.
    pub fn objective(&self, beta: &DVector<f64>) -> f64 {
        self.loss.value(beta) + self.lam * beta.iter().map(|b| b.abs()).sum::<f64>()
            - self.omega.dot(beta)
            + 0.5 * self.ridge_eps * beta.norm_squared()
    }
}

/// Solution of a randomized program. `z_hat` carries the exact subgradient:
/// signs on the active set, stationarity values elsewhere.
#[derive(Debug, Clone)]
pub struct Solution {
    pub beta_hat: DVector<f64>,
    pub z_hat: DVector<f64>,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    pub kkt_residual: f64,
    pub sweeps: usize,
}

/// Cyclic proximal coordinate descent on the randomized objective.
///
/// Terminates when the KKT residual drops below `tol`; the active set is the
/// coordinates exceeding `10 * tol` in magnitude after convergence, with the
/// rest zeroed exactly.
pub fn solve_randomized(spec: &ProgramSpec, tol: f64, max_iter: usize) -> Result<Solution> {
    solve_randomized_traced(spec, tol, max_iter).map(|(s, _)| s)
}

/// Like [`solve_randomized`] but also returns the objective value after each
/// sweep (non-increasing along the descent).
pub fn solve_randomized_traced(
    spec: &ProgramSpec,
    tol: f64,
    max_iter: usize,
) -> Result<(Solution, Vec<f64>)> {
    if !(tol > 0.0) {
        return Err(MagicError::Argument(format!("tol must be positive, got {tol}")));
    }
    let loss = &spec.loss;
    let d = loss.dim();
    let n = loss.n_obs();
    let (lam, eps) = (spec.lam, spec.ridge_eps);

    let curv: Vec<f64> = (0..d).map(|j| loss.curvature(j)).collect();
    let mut beta = DVector::<f64>::zeros(d);
    let mut fitted = DVector::<f64>::zeros(n);
    let mut trace = Vec::new();
    let mut residual = f64::INFINITY;
    let mut sweeps = 0;

    for sweep in 1..=max_iter {
        sweeps = sweep;
        for j in 0..d {
            let cj = loss.col(j);
            let g_j = match loss {
                Loss::SquaredError { y, .. } => {
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += cj[i] * (y[i] - fitted[i]);
                    }
                    -dot
                }
                Loss::Logistic { x, y } => {
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += cj[i] * (y[i] - sigmoid(fitted[i]));
                    }
                    -dot / (x.nrows() as f64).sqrt()
                }
                Loss::NodeRegression { x, node } => {
                    let resp = x.column(*node);
                    let mut dot = 0.0;
                    for i in 0..n {
                        dot += cj[i] * (resp[i] - fitted[i]);
                    }
                    -2.0 * dot / n as f64
                }
            };
            let denom = curv[j] + eps;
            if denom == 0.0 {
                if (spec.omega[j] - g_j).abs() > lam {
                    return Err(MagicError::Numerical(format!(
                        "coordinate {j} has zero curvature and violates the subgradient bound; \
                         objective is unbounded"
                    )));
                }
                continue;
            }
            let target = curv[j] * beta[j] - g_j + spec.omega[j];
            let new = soft_threshold(target, lam) / denom;
            if new != beta[j] {
                fitted.axpy(new - beta[j], &cj, 1.0);
                beta[j] = new;
            }
        }
        trace.push(spec.objective(&beta));
        residual = kkt_residual_at(spec, &beta, &fitted);
        if residual < tol {
            break;
        }
        if sweep == max_iter {
            return Err(MagicError::NonConvergence { max_iter, residual });
        }
    }

    // hard-zero threshold, then rebuild the fit so the subgradients reported
    // below are stationarity-exact for the thresholded solution
    let threshold = 10.0 * tol;
    for j in 0..d {
        if beta[j].abs() <= threshold {
            beta[j] = 0.0;
        }
    }
    let gamma = loss.gradient(&beta);
    let mut active = Vec::new();
    let mut signs = Vec::new();
    let mut z = DVector::zeros(d);
    for j in 0..d {
        if beta[j] != 0.0 {
            active.push(j);
            signs.push(beta[j].signum());
            z[j] = beta[j].signum();
        } else {
            z[j] = (spec.omega[j] - gamma[j]) / lam;
        }
    }
    let sol = Solution {
        kkt_residual: {
            let tmp = Solution {
                beta_hat: beta.clone(),
                z_hat: z.clone(),
                active: active.clone(),
                signs: signs.clone(),
                kkt_residual: residual,
                sweeps,
            };
            kkt_residual(spec, &tmp)
        },
        beta_hat: beta,
        z_hat: z,
        active,
        signs,
        sweeps,
    };
    Ok((sol, trace))
}

fn kkt_residual_at(spec: &ProgramSpec, beta: &DVector<f64>, fitted: &DVector<f64>) -> f64 {
    let gamma = spec.loss.gradient_from_fitted(fitted);
    let mut res: f64 = 0.0;
    for j in 0..beta.len() {
        if beta[j] != 0.0 {
            res = res.max(
                (gamma[j] + spec.lam * beta[j].signum() + spec.ridge_eps * beta[j]
                    - spec.omega[j])
                    .abs(),
            );
        } else {
            let z_j = (spec.omega[j] - gamma[j]) / spec.lam;
            res = res.max((z_j.abs() - 1.0).max(0.0));
        }
    }
    res
}

/// KKT residual of a candidate solution: the sup-norm of the stationarity
/// defect `gamma + lam*z + eps*beta - omega` combined with the inactive
/// subgradient violation `max(0, ||z_{-E}||_inf - 1)`.
pub fn kkt_residual(spec: &ProgramSpec, sol: &Solution) -> f64 {
    let gamma = spec.loss.gradient(&sol.beta_hat);
    let mut stat: f64 = 0.0;
    for j in 0..gamma.len() {
        stat = stat.max(
            (gamma[j] + spec.lam * sol.z_hat[j] + spec.ridge_eps * sol.beta_hat[j]
                - spec.omega[j])
                .abs(),
        );
    }
    let mut viol: f64 = 0.0;
    for j in 0..gamma.len() {
        if sol.beta_hat[j] == 0.0 {
            viol = viol.max((sol.z_hat[j].abs() - 1.0).max(0.0));
        }
    }
    stat.max(viol)
}

/// The conditioning information fixed after selection: active set, signs,
/// penalty parameters, and the loss (with its observed data) that produced
/// them.
#[derive(Debug, Clone)]
pub struct SelectionEvent {
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    pub lam: f64,
    pub ridge_eps: f64,
    pub loss: Loss,
}

impl SelectionEvent {
    pub fn from_solution(spec: &ProgramSpec, sol: &Solution) -> Self {
        Self {
            active: sol.active.clone(),
            signs: sol.signs.clone(),
            lam: spec.lam,
            ridge_eps: spec.ridge_eps,
            loss: spec.loss.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.loss.dim()
    }

    pub fn n_active(&self) -> usize {
        self.active.len()
    }

    /// Reduced coordinates not in the active set, in increasing order.
    pub fn inactive(&self) -> Vec<usize> {
        let mut mask = vec![true; self.dim()];
        for &j in &self.active {
            mask[j] = false;
        }
        (0..self.dim()).filter(|&j| mask[j]).collect()
    }

    /// Active columns of the design as an `n x |E|` matrix.
    pub fn design_active(&self) -> DMatrix<f64> {
        let n = self.loss.n_obs();
        let mut m = DMatrix::zeros(n, self.active.len());
        for (k, &j) in self.active.iter().enumerate() {
            m.set_column(k, &self.loss.col(j));
        }
        m
    }

    /// Assembles the full coefficient vector from its active part.
    pub fn full_beta(&self, beta_e: &DVector<f64>) -> DVector<f64> {
        let mut beta = DVector::zeros(self.dim());
        for (k, &j) in self.active.iter().enumerate() {
            beta[j] = beta_e[k];
        }
        beta
    }

    /// Assembles the full subgradient from observed signs and the inactive
    /// part.
    pub fn full_z(&self, z_inactive: &DVector<f64>) -> DVector<f64> {
        let mut z = DVector::zeros(self.dim());
        for (k, &j) in self.active.iter().enumerate() {
            z[j] = self.signs[k];
        }
        for (k, &j) in self.inactive().iter().enumerate() {
            z[j] = z_inactive[k];
        }
        z
    }

    /// Checks the sign-orthant and subgradient-ball constraints.
    pub fn in_support(&self, beta_e: &DVector<f64>, z_inactive: &DVector<f64>) -> bool {
        if beta_e.len() != self.active.len() || z_inactive.len() != self.dim() - self.active.len()
        {
            return false;
        }
        for (k, &b) in beta_e.iter().enumerate() {
            if b == 0.0 || b.signum() != self.signs[k] {
                return false;
            }
        }
        z_inactive.iter().all(|&z| z.abs() < 1.0)
    }
}

/// Data part of an augmented-space state, borrowed.
#[derive(Debug, Clone, Copy)]
pub enum DataRef<'a> {
    /// Raw response vector (squared-error and logistic losses).
    Response(&'a DVector<f64>),
    /// Asymptotic statistic vector for the logistic chain.
    Statistic(&'a DVector<f64>),
    /// Full design matrix (node-regression losses).
    Design(&'a DMatrix<f64>),
}

/// Recovers the randomization vector from an augmented-space state via the
/// stationarity identity `omega = gamma(data, beta) + lam*z + eps*beta`.
///
/// `Statistic` data is handled by the logistic model, which owns the frozen
/// Taylor quantities; this function covers the raw-data variants.
pub fn reconstruct_omega(
    event: &SelectionEvent,
    data: DataRef<'_>,
    beta_e: &DVector<f64>,
    z_inactive: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !event.in_support(beta_e, z_inactive) {
        return Err(MagicError::ConstraintViolation(
            "state violates sign or subgradient constraints".into(),
        ));
    }
    let beta = event.full_beta(beta_e);
    let z = event.full_z(z_inactive);
    let gamma = match (&event.loss, data) {
        (Loss::SquaredError { x, .. }, DataRef::Response(y)) => {
            Loss::SquaredError { x: x.clone(), y: (*y).clone() }.gradient(&beta)
        }
        (Loss::Logistic { x, .. }, DataRef::Response(y)) => {
            Loss::Logistic { x: x.clone(), y: (*y).clone() }.gradient(&beta)
        }
        (Loss::NodeRegression { node, .. }, DataRef::Design(xc)) => {
            Loss::NodeRegression { x: (*xc).clone(), node: *node }.gradient(&beta)
        }
        (Loss::Logistic { .. }, DataRef::Statistic(_)) => {
            return Err(MagicError::Argument(
                "statistic-space reconstruction is provided by LogisticModel".into(),
            ))
        }
        _ => {
            return Err(MagicError::Argument(
                "data variant does not match the event's loss".into(),
            ))
        }
    };
    Ok(gamma + event.lam * z + event.ridge_eps * beta)
}

/// Log-determinant of the derivative of the reconstruction map with respect
/// to `(beta_E, z_{-E})` on the fiber over the data.
///
/// For squared error this is `logdet(X_E'X_E + eps I) + (p-|E|) ln lam` and
/// is constant along a chain; for node regression the Gram matrix carries
/// the `2/n` loss scaling and is re-evaluated from the supplied design; for
/// the raw logistic loss the Hessian block uses the weights at the supplied
/// state.
pub fn jacobian_logdet(
    event: &SelectionEvent,
    data: DataRef<'_>,
    beta_e: &DVector<f64>,
) -> Result<f64> {
    let e = event.n_active();
    let d = event.dim();
    let lam_part = (d - e) as f64 * event.lam.ln();
    let m = match (&event.loss, data) {
        (Loss::SquaredError { .. }, _) => {
            let xe = event.design_active();
            let mut g = xe.transpose() * &xe;
            for k in 0..e {
                g[(k, k)] += event.ridge_eps;
            }
            g
        }
        (Loss::Logistic { x, .. }, DataRef::Response(_) | DataRef::Statistic(_)) => {
            let beta = event.full_beta(beta_e);
            let eta = x * beta;
            let xe = event.design_active();
            let sqrt_n = (x.nrows() as f64).sqrt();
            let mut g = DMatrix::zeros(e, e);
            for a in 0..e {
                for b in a..e {
                    let mut acc = 0.0;
                    for i in 0..x.nrows() {
                        let p = sigmoid(eta[i]);
                        acc += xe[(i, a)] * xe[(i, b)] * p * (1.0 - p);
                    }
                    let v = acc / sqrt_n + if a == b { event.ridge_eps } else { 0.0 };
                    g[(a, b)] = v;
                    g[(b, a)] = v;
                }
            }
            g
        }
        (Loss::NodeRegression { node, .. }, DataRef::Design(xc)) => {
            let loss = Loss::NodeRegression { x: (*xc).clone(), node: *node };
            let n = xc.nrows() as f64;
            let mut g = DMatrix::zeros(e, e);
            for a in 0..e {
                for b in 0..e {
                    g[(a, b)] = 2.0 / n * loss.col(event.active[a]).dot(&loss.col(event.active[b]));
                }
            }
            for k in 0..e {
                g[(k, k)] += event.ridge_eps;
            }
            g
        }
        _ => {
            return Err(MagicError::Argument(
                "data variant does not match the event's loss".into(),
            ))
        }
    };
    if e == 0 {
        return Ok(lam_part);
    }
    let scale = m.diagonal().amax();
    let chol = nalgebra::Cholesky::new(m).ok_or_else(|| {
        MagicError::SingularSelection("active Gram matrix is not positive definite".into())
    })?;
    let floor = (scale.max(f64::MIN_POSITIVE)).sqrt() * 1e-6;
    if chol.l().diagonal().iter().any(|&v| !(v > floor)) {
        return Err(MagicError::SingularSelection(
            "active Gram matrix is numerically rank deficient".into(),
        ));
    }
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Ok(logdet + lam_part)
}
