//! Chain targets binding the vector-model densities to the Gibbs moves.

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::models::{GaussianLinearModel, LogisticModel, SufficientStat};
use crate::randomization::RandomizationDist;
use crate::sampler::{ChainState, DataPart, VectorTarget};
use crate::solver::SelectionEvent;

/// Lasso chain for one tested coordinate: the data move is a random walk on
/// the response inside the orthogonal complement of the conditioning
/// columns, so `X_{E\j}' y` never moves.
pub struct LassoChainTarget<'a> {
    model: &'a GaussianLinearModel,
    suffstat: &'a SufficientStat,
}

impl<'a> LassoChainTarget<'a> {
    pub fn new(model: &'a GaussianLinearModel, suffstat: &'a SufficientStat) -> Self {
        Self { model, suffstat }
    }
}

impl VectorTarget for LassoChainTarget<'_> {
    fn event(&self) -> &SelectionEvent {
        self.model.event()
    }

    fn randomization(&self) -> &RandomizationDist {
        self.model.randomization()
    }

    fn log_density(&self, state: &ChainState) -> f64 {
        self.model.selective_log_density(state)
    }

    fn t_statistic(&self, state: &ChainState) -> f64 {
        match state.response() {
            Ok(y) => self.model.t_statistic(y, self.suffstat.index),
            Err(_) => f64::NAN,
        }
    }

    fn propose_data(&self, state: &ChainState, step: f64, rng: &mut ChaCha20Rng) -> DataPart {
        let y = state.response().expect("lasso chain state carries a response");
        let n = y.len();
        let tau = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let dir = self.suffstat.projector.complement(&tau);
        DataPart::Response(y + dir * step)
    }

    fn gamma_inactive(&self, state: &ChainState) -> Result<DVector<f64>> {
        self.model.gamma_inactive(state)
    }

    fn data_move_dim(&self) -> usize {
        self.model.design().nrows() - self.suffstat.projector.rank()
    }
}

/// Logistic chain for one tested coordinate: the statistic coordinates
/// `T_{E\j}` are frozen and the free coordinates (the tested one plus the
/// inactive score block) take a preconditioned Gaussian random walk.
pub struct LogisticChainTarget<'a> {
    model: &'a LogisticModel,
    tested: usize,
    free: Vec<usize>,
    scales: DVector<f64>,
}

impl<'a> LogisticChainTarget<'a> {
    pub fn new(model: &'a LogisticModel, tested: usize) -> Result<Self> {
        model.tilt_scale(tested)?; // validates that `tested` is active
        let mut free = vec![tested];
        free.extend_from_slice(model.inactive());
        let scales = model.t_scales();
        Ok(Self { model, tested, free, scales })
    }

    pub fn tested(&self) -> usize {
        self.tested
    }
}

impl VectorTarget for LogisticChainTarget<'_> {
    fn event(&self) -> &SelectionEvent {
        self.model.event()
    }

    fn randomization(&self) -> &RandomizationDist {
        self.model.randomization()
    }

    fn log_density(&self, state: &ChainState) -> f64 {
        self.model.selective_log_density(state)
    }

    fn t_statistic(&self, state: &ChainState) -> f64 {
        match state.statistic() {
            Ok(t) => t[self.tested],
            Err(_) => f64::NAN,
        }
    }

    fn propose_data(&self, state: &ChainState, step: f64, rng: &mut ChaCha20Rng) -> DataPart {
        let t = state.statistic().expect("logistic chain state carries a statistic");
        let mut next = t.clone();
        for &k in &self.free {
            let z: f64 = rng.sample(StandardNormal);
            next[k] += step * self.scales[k] * z;
        }
        DataPart::Statistic(next)
    }

    fn gamma_inactive(&self, state: &ChainState) -> Result<DVector<f64>> {
        self.model.gamma_inactive(state)
    }

    fn data_move_dim(&self) -> usize {
        self.free.len()
    }
}
