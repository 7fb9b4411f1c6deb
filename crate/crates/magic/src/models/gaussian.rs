//! Gaussian linear model with known noise variance.
//!
//! The data part of a chain state is the raw response `y`; the selective
//! density is the `N(X_E b_E, sigma^2 I)` likelihood times the
//! randomization density evaluated at the reconstructed perturbation
//! `lam * z - X'(y - X_E beta_E) + eps * beta`. The Jacobian of the
//! reconstruction map depends on the fixed design only, so it drops out as
//! a constant.
//!
//! Testing one active coordinate conditions on the remaining sufficient
//! statistics `X_{E\j}' y`; proposals must therefore move `y` only inside
//! the orthogonal complement of `col(X_{E\j})`, which [`SufficientStat`]
//! encodes as a projector.

use nalgebra::{DMatrix, DVector};

use crate::error::{MagicError, Result};
use crate::randomization::RandomizationDist;
use crate::sampler::ChainState;
use crate::solver::{Loss, SelectionEvent};

/// Orthogonal projector onto the column span of a matrix, stored as an
/// orthonormal basis.
#[derive(Debug, Clone)]
pub struct Projector {
    basis: Option<DMatrix<f64>>,
}

impl Projector {
    /// Projector onto `col(m)`. An empty matrix yields the zero projector.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.ncols() == 0 {
            return Ok(Self { basis: None });
        }
        let qr = m.clone().qr();
        let q = qr.q();
        let r = qr.r();
        for k in 0..r.nrows().min(r.ncols()) {
            if r[(k, k)].abs() < 1e-10 * m.amax().max(1.0) {
                return Err(MagicError::SingularSelection(
                    "conditioning columns are rank deficient".into(),
                ));
            }
        }
        Ok(Self { basis: Some(q) })
    }

    pub fn rank(&self) -> usize {
        self.basis.as_ref().map_or(0, |b| b.ncols())
    }

    /// `P v`
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.basis {
            None => DVector::zeros(v.len()),
            Some(q) => q * (q.transpose() * v),
        }
    }

    /// `(I - P) v`
    pub fn complement(&self, v: &DVector<f64>) -> DVector<f64> {
        v - self.apply(v)
    }
}

/// Conditioning data for testing one active coordinate: its statistic, the
/// frozen remainder `X_{E\j}' y`, and the projector that keeps proposals off
/// the conditioned directions.
#[derive(Debug, Clone)]
pub struct SufficientStat {
    /// Tested variable, original coordinate index.
    pub index: usize,
    /// Position of `index` within the active set.
    pub active_pos: usize,
    pub t_j: f64,
    pub t_rest: DVector<f64>,
    pub projector: Projector,
}

/// Linear regression data model `y ~ N(X_E b_E, sigma^2 I)` conditioned on a
/// lasso selection event.
#[derive(Debug, Clone)]
pub struct GaussianLinearModel {
    event: SelectionEvent,
    sigma2: f64,
    b_e_null: DVector<f64>,
    randomization: RandomizationDist,
    x: DMatrix<f64>,
    x_active: DMatrix<f64>,
    inactive: Vec<usize>,
}

impl GaussianLinearModel {
    /// Builds the model around a selection event whose loss is squared
    /// error. `b_e_null` defaults to the all-zero vector (the null chain).
    pub fn from_event(
        event: SelectionEvent,
        sigma2: f64,
        randomization: RandomizationDist,
        b_e_null: Option<DVector<f64>>,
    ) -> Result<Self> {
        let x = match &event.loss {
            Loss::SquaredError { x, .. } => x.clone(),
            _ => {
                return Err(MagicError::Argument(
                    "GaussianLinearModel requires a squared-error selection event".into(),
                ))
            }
        };
        if !(sigma2 > 0.0) {
            return Err(MagicError::Argument(format!("sigma2 must be positive, got {sigma2}")));
        }
        if randomization.dim() != x.ncols() {
            return Err(MagicError::Dimension(format!(
                "randomization dim {} != p = {}",
                randomization.dim(),
                x.ncols()
            )));
        }
        let b_e_null = b_e_null.unwrap_or_else(|| DVector::zeros(event.n_active()));
        if b_e_null.len() != event.n_active() {
            return Err(MagicError::Dimension("b_e_null length must equal |E|".into()));
        }
        let x_active = event.design_active();
        if event.n_active() > 0 {
            // X_E must have full column rank for the fiber to be well defined
            Projector::new(x_active.clone())?;
        }
        let inactive = event.inactive();
        Ok(Self { event, sigma2, b_e_null, randomization, x, x_active, inactive })
    }

    pub fn event(&self) -> &SelectionEvent {
        &self.event
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn randomization(&self) -> &RandomizationDist {
        &self.randomization
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.x
    }

    /// Replaces the hypothesized mean parameter.
    pub fn with_null(mut self, b_e_null: DVector<f64>) -> Result<Self> {
        if b_e_null.len() != self.event.n_active() {
            return Err(MagicError::Dimension("b_e_null length must equal |E|".into()));
        }
        self.b_e_null = b_e_null;
        Ok(self)
    }

    /// The reconstructed randomization at a state (the argument of the
    /// `g` factor).
    pub fn g_argument(&self, state: &ChainState) -> Result<DVector<f64>> {
        let y = state.response()?;
        let mut resid = y.clone();
        resid.gemv(-1.0, &self.x_active, &state.beta_e, 1.0);
        let mut omega = self.x.tr_mul(&resid);
        omega.neg_mut();
        let lam = self.event.lam;
        for (k, &j) in self.event.active.iter().enumerate() {
            omega[j] += lam * self.event.signs[k] + self.event.ridge_eps * state.beta_e[k];
        }
        for (k, &j) in self.inactive.iter().enumerate() {
            omega[j] += lam * state.z_inactive[k];
        }
        Ok(omega)
    }

    /// Log selective density at a state, `-inf` outside the support.
    pub fn selective_log_density(&self, state: &ChainState) -> f64 {
        let y = match state.response() {
            Ok(y) => y,
            Err(_) => return f64::NEG_INFINITY,
        };
        if !self.event.in_support(&state.beta_e, &state.z_inactive) {
            return f64::NEG_INFINITY;
        }
        let gauss = if self.b_e_null.iter().all(|&b| b == 0.0) {
            -y.norm_squared() / (2.0 * self.sigma2)
        } else {
            let mut dev = y.clone();
            dev.gemv(-1.0, &self.x_active, &self.b_e_null, 1.0);
            -dev.norm_squared() / (2.0 * self.sigma2)
        };
        let omega = match self.g_argument(state) {
            Ok(o) => o,
            Err(_) => return f64::NEG_INFINITY,
        };
        let g: f64 = omega.iter().map(|&w| self.randomization.log_density_marginal(w)).sum();
        gauss + g
    }

    /// Smooth-loss gradient at the state restricted to inactive coordinates.
    pub fn gamma_inactive(&self, state: &ChainState) -> Result<DVector<f64>> {
        let y = state.response()?;
        let mut resid = y.clone();
        resid.gemv(-1.0, &self.x_active, &state.beta_e, 1.0);
        Ok(DVector::from_fn(self.inactive.len(), |k, _| -self.x.column(self.inactive[k]).dot(&resid)))
    }

    /// `x_j' y` for an original coordinate index `j`.
    pub fn t_statistic(&self, y: &DVector<f64>, j: usize) -> f64 {
        self.x.column(j).dot(y)
    }

    /// Conditioning information for testing active coordinate `j` (original
    /// index).
    pub fn sufficient_stat(&self, y: &DVector<f64>, j: usize) -> Result<SufficientStat> {
        let active_pos = self
            .event
            .active
            .iter()
            .position(|&a| a == j)
            .ok_or_else(|| MagicError::Argument(format!("variable {j} is not in the active set")))?;
        let rest: Vec<usize> =
            self.event.active.iter().copied().filter(|&a| a != j).collect();
        let mut cols = DMatrix::zeros(self.x.nrows(), rest.len());
        for (k, &a) in rest.iter().enumerate() {
            cols.set_column(k, &self.x.column(a));
        }
        let t_rest = DVector::from_fn(rest.len(), |k, _| self.x.column(rest[k]).dot(y));
        Ok(SufficientStat {
            index: j,
            active_pos,
            t_j: self.t_statistic(y, j),
            t_rest,
            projector: Projector::new(cols)?,
        })
    }

    /// Natural-parameter scale of the tested statistic: tilting the mean
    /// parameter `b_j` by `b` multiplies the density by `exp(b * T_j / sigma^2)`
    /// once the other sufficient statistics are held fixed.
    pub fn tilt_scale(&self) -> f64 {
        1.0 / self.sigma2
    }

    pub fn inactive(&self) -> &[usize] {
        &self.inactive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::DataPart;
    use crate::solver::{solve_randomized, ProgramSpec};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn randn_matrix(n: usize, p: usize, r: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| rand::Rng::sample(r, StandardNormal))
    }

    fn randn_vector(n: usize, r: &mut ChaCha20Rng) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rand::Rng::sample(r, StandardNormal))
    }

    /// Builds a solved lasso model with a nonempty active set.
    fn solved_model(seed: u64, n: usize, p: usize, lam: f64) -> (GaussianLinearModel, ChainState) {
        let mut r = rng(seed);
        let x = randn_matrix(n, p, &mut r);
        let y = randn_vector(n, &mut r) * 2.0;
        let dist = RandomizationDist::laplace(1.0, p).unwrap();
        let omega = dist.sample_vector(&mut r);
        let spec =
            ProgramSpec::new(Loss::SquaredError { x, y: y.clone() }, lam, 0.0, omega).unwrap();
        let sol = solve_randomized(&spec, 1e-11, 50_000).unwrap();
        assert!(!sol.active.is_empty(), "pick a smaller lam for the fixture");
        let event = SelectionEvent::from_solution(&spec, &sol);
        let beta_e = DVector::from_vec(
            event.active.iter().map(|&j| sol.beta_hat[j]).collect::<Vec<_>>(),
        );
        let z_in = DVector::from_vec(
            event.inactive().iter().map(|&j| sol.z_hat[j]).collect::<Vec<_>>(),
        );
        let model = GaussianLinearModel::from_event(event, 1.0, dist, None).unwrap();
        let state = ChainState { data: DataPart::Response(y), beta_e, z_inactive: z_in };
        (model, state)
    }

    #[test]
    fn one_dimensional_density_matches_hand_formula() {
        // p = 1, X = [1], lam = 1, sigma = 1, Gaussian randomization:
        // log h(y, beta) = -(y-b)^2/2 + log phi(lam*s - (y - beta))
        let x = DMatrix::from_element(1, 1, 1.0);
        let y = DVector::from_element(1, 1.4);
        let event = SelectionEvent {
            active: vec![0],
            signs: vec![1.0],
            lam: 1.0,
            ridge_eps: 0.0,
            loss: Loss::SquaredError { x, y: y.clone() },
        };
        let dist = RandomizationDist::gaussian(1.0, 1).unwrap();
        let model = GaussianLinearModel::from_event(event, 1.0, dist.clone(), None).unwrap();
        for (yv, bv) in [(1.4, 0.8), (0.3, 0.1), (-0.5, 2.0)] {
            let state = ChainState {
                data: DataPart::Response(DVector::from_element(1, yv)),
                beta_e: DVector::from_element(1, bv),
                z_inactive: DVector::zeros(0),
            };
            let expected = -0.5 * yv * yv + dist.log_density_marginal(1.0 - (yv - bv));
            assert_relative_eq!(model.selective_log_density(&state), expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn exponential_tilt_identity() {
        let (model, state) = solved_model(21, 20, 6, 1.0);
        let y = state.response().unwrap();
        let e = model.event().n_active();
        let mut r = rng(22);
        let b = randn_vector(e, &mut r) * 0.3;
        let tilted = model.clone().with_null(b.clone()).unwrap();
        let lhs = tilted.selective_log_density(&state) - model.selective_log_density(&state);
        let xe = model.event().design_active();
        let rhs = b.dot(&(xe.transpose() * y)) / model.sigma2()
            - (xe * &b).norm_squared() / (2.0 * model.sigma2());
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9, max_relative = 1e-9);
    }

    #[test]
    fn density_rejects_subgradient_outside_ball() {
        let (model, mut state) = solved_model(23, 20, 6, 1.0);
        if state.z_inactive.is_empty() {
            return;
        }
        state.z_inactive[0] = 1.5;
        assert_eq!(model.selective_log_density(&state), f64::NEG_INFINITY);
    }

    #[test]
    fn density_rejects_wrong_orthant() {
        let (model, mut state) = solved_model(24, 20, 6, 1.0);
        state.beta_e[0] = -state.beta_e[0];
        assert_eq!(model.selective_log_density(&state), f64::NEG_INFINITY);
    }

    #[test]
    fn projector_is_idempotent_and_preserves_conditioned_statistics() {
        let (model, state) = solved_model(25, 25, 8, 0.8);
        let y = state.response().unwrap().clone();
        let j = model.event().active[0];
        let stat = model.sufficient_stat(&y, j).unwrap();
        let mut r = rng(26);
        let v = randn_vector(25, &mut r);
        let pv = stat.projector.apply(&v);
        let ppv = stat.projector.apply(&pv);
        assert!((ppv - &pv).amax() < 1e-12);

        // moving y in the complement leaves X_{E\j}' y unchanged
        let moved = &y + stat.projector.complement(&v);
        let rest: Vec<usize> =
            model.event().active.iter().copied().filter(|&a| a != j).collect();
        for (k, &a) in rest.iter().enumerate() {
            let before = stat.t_rest[k];
            let after = model.design().column(a).dot(&moved);
            assert!((after - before).abs() < 1e-10, "stat {k}: {before} vs {after}");
        }
    }

    #[test]
    fn empty_rest_gives_zero_projector() {
        let (model, state) = solved_model(27, 12, 3, 2.2);
        let active = model.event().active.clone();
        if active.len() != 1 {
            return;
        }
        let y = state.response().unwrap();
        let stat = model.sufficient_stat(y, active[0]).unwrap();
        assert_eq!(stat.projector.rank(), 0);
        let mut r = rng(28);
        let v = randn_vector(12, &mut r);
        assert_eq!(stat.projector.apply(&v), DVector::zeros(12));
        assert_eq!(stat.projector.complement(&v), v);
    }

    #[test]
    fn sufficient_stat_rejects_inactive_index() {
        let (model, state) = solved_model(29, 20, 6, 1.0);
        let y = state.response().unwrap();
        let j = model
            .event()
            .inactive()
            .first()
            .copied()
            .unwrap_or(6); // out of range counts as "not active" too
        assert!(model.sufficient_stat(y, j).is_err());
    }

    #[test]
    fn orthonormal_design_t_is_basis_coefficient() {
        // 3 x 2 hand check with orthonormal columns
        let x = DMatrix::from_column_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let y = DVector::from_vec(vec![0.7, -0.2, 5.0]);
        let event = SelectionEvent {
            active: vec![0, 1],
            signs: vec![1.0, -1.0],
            lam: 1.0,
            ridge_eps: 0.0,
            loss: Loss::SquaredError { x, y: y.clone() },
        };
        let dist = RandomizationDist::gaussian(1.0, 2).unwrap();
        let model = GaussianLinearModel::from_event(event, 1.0, dist, None).unwrap();
        assert_relative_eq!(model.t_statistic(&y, 0), 0.7, epsilon = 1e-14);
        assert_relative_eq!(model.t_statistic(&y, 1), -0.2, epsilon = 1e-14);
    }

    #[test]
    fn tilting_untested_parameters_is_constant_on_the_conditioned_fiber() {
        // Two states sharing T_{E\j} differ in log-density by the same
        // amount under a tilt of b_{E\j}: the conditional law depends on b
        // only through b_j.
        let (model, state) = solved_model(30, 25, 7, 0.9);
        let event = model.event().clone();
        if event.n_active() < 2 {
            return;
        }
        let j = event.active[0];
        let y =
            state.response().unwrap().clone();
        let stat = model.sufficient_stat(&y, j).unwrap();
        let mut r = rng(31);
        // a second state on the same fiber: move y in the complement only
        let dir = stat.projector.complement(&randn_vector(25, &mut r));
        let y2 = &y + dir * 0.6;
        let state2 = ChainState {
            data: DataPart::Response(y2),
            beta_e: state.beta_e.clone(),
            z_inactive: state.z_inactive.clone(),
        };
        let mut b = DVector::zeros(event.n_active());
        for k in 0..event.n_active() {
            if event.active[k] != j {
                b[k] = 0.4 * (k as f64 + 1.0);
            }
        }
        let tilted = model.clone().with_null(b).unwrap();
        let d1 = tilted.selective_log_density(&state) - model.selective_log_density(&state);
        let d2 = tilted.selective_log_density(&state2) - model.selective_log_density(&state2);
        assert_relative_eq!(d1, d2, epsilon = 1e-8, max_relative = 1e-8);
    }
}
