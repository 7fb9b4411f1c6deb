//! Chain for graphical-model edges: sphere-conditional column moves plus
//! per-node coefficient and subgradient moves.
//!
//! Testing an edge conditions on every column norm and on every selected
//! inner product except the tested pair. A column move therefore splits the
//! column into its projection onto the constrained neighbor columns, which
//! stays fixed, and an orthogonal remainder, which is replaced by a uniform
//! random direction of the same length. The proposal is uniform on the
//! constraint sphere regardless of the current point, hence symmetric, and
//! no proposal correction enters the acceptance ratio.
//!
//! Replacing one column touches the density in a sparse pattern: the moved
//! node's own randomization factor, the factor and Jacobian of every node
//! whose active set contains the column, one coordinate of every other
//! node's factor, and (when the tested precision entry is nonzero) the
//! matrix-normal term of the tested pair. The chain keeps per-node caches
//! and applies exactly these increments.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;

use crate::error::{MagicError, Result};
use crate::models::GraphicalModel;
use crate::randomization::Bound;
use crate::sampler::{accept_log_ratio, reflected_proposal, AdaptiveStep, SampleSet, SamplerConfig};

/// Coefficient part of one node's regression state.
#[derive(Debug, Clone)]
pub struct NodeCoef {
    pub beta_e: DVector<f64>,
    pub z_inactive: DVector<f64>,
}

/// Augmented-space state for the graphical model: the design matrix plus
/// all node coefficient states.
#[derive(Debug, Clone)]
pub struct GraphState {
    pub x: DMatrix<f64>,
    pub nodes: Vec<NodeCoef>,
}

struct NodeCache {
    resid: DVector<f64>,
    omega: DVector<f64>,
    terms: DVector<f64>,
    log_g: f64,
    logdet: f64,
}

enum Pending {
    Full(usize, NodeCache),
    OneCoord { node: usize, pos: usize, omega: f64, term: f64 },
}

pub(crate) struct GraphChainRunner<'a> {
    model: &'a GraphicalModel,
    edge: (usize, usize),
    theta_edge: f64,
    pub(crate) state: GraphState,
    cache: Vec<NodeCache>,
    skipped: usize,
}

impl<'a> GraphChainRunner<'a> {
    pub(crate) fn new(
        model: &'a GraphicalModel,
        edge: (usize, usize),
        init: &GraphState,
    ) -> Result<Self> {
        let edge = (edge.0.min(edge.1), edge.0.max(edge.1));
        let theta_edge = model.edge_theta(edge)?;
        if init.nodes.len() != model.p() || init.x.ncols() != model.p() {
            return Err(MagicError::Dimension("graph state does not match the model".into()));
        }
        for (i, coef) in init.nodes.iter().enumerate() {
            if !model.node_events()[i].in_support(&coef.beta_e, &coef.z_inactive) {
                return Err(MagicError::ConstraintViolation(format!(
                    "initial state of node {i} violates the selection constraints"
                )));
            }
        }
        let mut cache = Vec::with_capacity(model.p());
        for i in 0..model.p() {
            cache.push(Self::build_node_cache(model, &init.x, i, &init.nodes[i])?);
        }
        Ok(Self { model, edge, theta_edge, state: init.clone(), cache, skipped: 0 })
    }

    fn build_node_cache(
        model: &GraphicalModel,
        x: &DMatrix<f64>,
        i: usize,
        coef: &NodeCoef,
    ) -> Result<NodeCache> {
        let resid = model.node_residual(x, i, &coef.beta_e);
        let omega = model.node_g_argument(x, i, coef);
        let terms = omega.map(|w| model.randomization().log_density_marginal(w));
        let log_g = terms.sum();
        let logdet = model.node_logdet(x, i)?;
        Ok(NodeCache { resid, omega, terms, log_g, logdet })
    }

    #[cfg(test)]
    pub(crate) fn total_log_density(&self) -> f64 {
        self.model.gaussian_part(&self.state.x)
            + self.cache.iter().map(|c| c.log_g + c.logdet).sum::<f64>()
    }

    pub(crate) fn t_statistic(&self) -> f64 {
        self.model.t_statistic(&self.state.x, self.edge)
    }

    pub(crate) fn skipped(&self) -> usize {
        self.skipped
    }

    /// Columns constrained for a move of column `c`: its selected partners
    /// except the tested pair.
    fn constrained_partners(&self, c: usize) -> Vec<usize> {
        self.model
            .edges()
            .iter()
            .filter_map(|&(a, b)| {
                if (a, b) == self.edge {
                    return None;
                }
                if a == c {
                    Some(b)
                } else if b == c {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Sphere-conditional Metropolis move of column `c`: the component
    /// orthogonal to the constrained partners rotates by a random geodesic
    /// angle `step * N(0,1)` toward a uniform tangent direction, keeping the
    /// norm and the constrained projections fixed. The kernel depends only
    /// on the angle between old and new positions, so it is symmetric and
    /// needs no proposal correction; large steps approach the uniform
    /// redraw of the whole component. Returns `None` when the move is
    /// skipped as degenerate.
    pub(crate) fn column_move(
        &mut self,
        c: usize,
        step: f64,
        rng: &mut ChaCha20Rng,
    ) -> Option<bool> {
        let n = self.state.x.nrows();
        let partners = self.constrained_partners(c);
        if partners.len() + 2 > n {
            self.skipped += 1;
            return None;
        }
        // projection onto the partner span via the small Gram system
        let k = partners.len();
        let x_c: DVector<f64> = self.state.x.column(c).into();
        let project = |v: &DVector<f64>, gram_chol: Option<&nalgebra::Cholesky<f64, nalgebra::Dyn>>| -> DVector<f64> {
            match gram_chol {
                None => DVector::zeros(n),
                Some(chol) => {
                    let mut rhs = DVector::zeros(k);
                    for (a, &j) in partners.iter().enumerate() {
                        rhs[a] = self.state.x.column(j).dot(v);
                    }
                    let coef = chol.solve(&rhs);
                    let mut out = DVector::zeros(n);
                    for (a, &j) in partners.iter().enumerate() {
                        out.axpy(coef[a], &self.state.x.column(j), 1.0);
                    }
                    out
                }
            }
        };
        let gram_chol = if k == 0 {
            None
        } else {
            let mut gram = DMatrix::zeros(k, k);
            for a in 0..k {
                for b in a..k {
                    let v = self.state.x.column(partners[a]).dot(&self.state.x.column(partners[b]));
                    gram[(a, b)] = v;
                    gram[(b, a)] = v;
                }
            }
            match nalgebra::Cholesky::new(gram) {
                Some(chol) => Some(chol),
                None => {
                    self.skipped += 1;
                    return None;
                }
            }
        };
        let proj = project(&x_c, gram_chol.as_ref());
        let w = &x_c - &proj;
        let rho = w.norm();
        if rho < 1e-12 {
            self.skipped += 1;
            return None;
        }
        let tau = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let mut tangent = &tau - project(&tau, gram_chol.as_ref());
        // orthogonalize against the current component to get a tangent
        let w_hat = &w / rho;
        let along = tangent.dot(&w_hat);
        tangent.axpy(-along, &w_hat, 1.0);
        let nt = tangent.norm();
        if nt < 1e-12 {
            self.skipped += 1;
            return None;
        }
        let theta: f64 = step * rng.sample::<f64, _>(StandardNormal);
        let x_new = proj + (w_hat * theta.cos() + tangent * (theta.sin() / nt)) * rho;

        let mut delta = 0.0;
        if self.theta_edge != 0.0 && (c == self.edge.0 || c == self.edge.1) {
            let other = self.edge.0 + self.edge.1 - c;
            let col_other = self.state.x.column(other);
            delta -= self.theta_edge * (x_new.dot(&col_other) - x_c.dot(&col_other));
        }

        let mut pending: Vec<Pending> = Vec::with_capacity(self.model.p());
        let scale = -2.0 / n as f64;
        for m in 0..self.model.p() {
            let ev = &self.model.node_events()[m];
            if m == c {
                // own response changed; the regressors do not include c
                let resid = self.model.node_residual_with_response(
                    &self.state.x,
                    m,
                    &x_new,
                    &self.state.nodes[m].beta_e,
                );
                let omega = self.node_omega_with_override(m, &resid, c, &x_new);
                let terms =
                    omega.map(|w| self.model.randomization().log_density_marginal(w));
                let log_g = terms.sum();
                delta += log_g - self.cache[m].log_g;
                pending.push(Pending::Full(
                    m,
                    NodeCache { resid, omega, terms, log_g, logdet: self.cache[m].logdet },
                ));
            } else if let Some(k) = self.model.active_original(m).iter().position(|&a| a == c) {
                // column c is a regressor of node m: residual, factor, and
                // Jacobian all change
                let beta_k = self.state.nodes[m].beta_e[k];
                let mut resid = self.cache[m].resid.clone();
                resid.axpy(-beta_k, &(&x_new - &x_c), 1.0);
                let omega = self.node_omega_with_override(m, &resid, c, &x_new);
                let terms =
                    omega.map(|w| self.model.randomization().log_density_marginal(w));
                let log_g = terms.sum();
                let logdet = match self.node_logdet_with_override(m, c, &x_new) {
                    Ok(v) => v,
                    Err(_) => return Some(self.reject_column()),
                };
                delta += log_g - self.cache[m].log_g + logdet - self.cache[m].logdet;
                pending.push(Pending::Full(m, NodeCache { resid, omega, terms, log_g, logdet }));
            } else {
                // only the coordinate of column c inside node m's gradient
                // moves
                let pos = reduced_index(c, m);
                let gamma_old = scale * x_c.dot(&self.cache[m].resid);
                let penalty = self.cache[m].omega[pos] - gamma_old;
                let omega_new = scale * x_new.dot(&self.cache[m].resid) + penalty;
                let term = self.model.randomization().log_density_marginal(omega_new);
                delta += term - self.cache[m].terms[pos];
                let _ = ev;
                pending.push(Pending::OneCoord { node: m, pos, omega: omega_new, term });
            }
        }

        if accept_log_ratio(delta, rng) {
            self.state.x.set_column(c, &x_new);
            for p in pending {
                match p {
                    Pending::Full(m, nc) => self.cache[m] = nc,
                    Pending::OneCoord { node, pos, omega, term } => {
                        let nc = &mut self.cache[node];
                        nc.log_g += term - nc.terms[pos];
                        nc.omega[pos] = omega;
                        nc.terms[pos] = term;
                    }
                }
            }
            Some(true)
        } else {
            Some(false)
        }
    }

    fn reject_column(&mut self) -> bool {
        false
    }

    fn node_omega_with_override(
        &self,
        m: usize,
        resid: &DVector<f64>,
        c: usize,
        x_c_new: &DVector<f64>,
    ) -> DVector<f64> {
        let ev = &self.model.node_events()[m];
        let n = self.state.x.nrows() as f64;
        let scale = -2.0 / n;
        let mut omega = DVector::zeros(self.model.p() - 1);
        for k in 0..self.model.p() - 1 {
            let col = ev.loss.column_index(k);
            let dot = if col == c {
                x_c_new.dot(resid)
            } else {
                self.state.x.column(col).dot(resid)
            };
            omega[k] = scale * dot;
        }
        omega += ev.lam * ev.full_z(&self.state.nodes[m].z_inactive);
        if ev.ridge_eps > 0.0 {
            omega += ev.ridge_eps * ev.full_beta(&self.state.nodes[m].beta_e);
        }
        omega
    }

    fn node_logdet_with_override(
        &self,
        m: usize,
        c: usize,
        x_c_new: &DVector<f64>,
    ) -> Result<f64> {
        let ev = &self.model.node_events()[m];
        let e = ev.n_active();
        let n = self.state.x.nrows() as f64;
        let cols: Vec<usize> = ev.active.iter().map(|&k| ev.loss.column_index(k)).collect();
        let mut gram = DMatrix::zeros(e, e);
        for a in 0..e {
            for b in a..e {
                let ca = cols[a];
                let cb = cols[b];
                let dot = match (ca == c, cb == c) {
                    (true, true) => x_c_new.dot(x_c_new),
                    (true, false) => x_c_new.dot(&self.state.x.column(cb)),
                    (false, true) => self.state.x.column(ca).dot(x_c_new),
                    (false, false) => self.state.x.column(ca).dot(&self.state.x.column(cb)),
                };
                let v = 2.0 / n * dot + if a == b { ev.ridge_eps } else { 0.0 };
                gram[(a, b)] = v;
                gram[(b, a)] = v;
            }
        }
        if e == 0 {
            return Ok((self.model.p() - 1) as f64 * ev.lam.ln());
        }
        let scale = gram.diagonal().amax();
        let chol = nalgebra::Cholesky::new(gram).ok_or_else(|| {
            MagicError::SingularSelection("proposed design degenerates a node Gram".into())
        })?;
        let floor = scale.max(f64::MIN_POSITIVE).sqrt() * 1e-6;
        if chol.l().diagonal().iter().any(|&v| !(v > floor)) {
            return Err(MagicError::SingularSelection(
                "proposed design degenerates a node Gram".into(),
            ));
        }
        let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(logdet + (self.model.p() - 1 - e) as f64 * ev.lam.ln())
    }

    /// Reflected Metropolis move of node `i`'s active coefficients.
    pub(crate) fn coef_move(&mut self, i: usize, step: f64, rng: &mut ChaCha20Rng) -> bool {
        let ev = &self.model.node_events()[i];
        let beta_new =
            reflected_proposal(&self.state.nodes[i].beta_e, &ev.signs, step, self.model.randomization(), rng);
        if beta_new.iter().any(|&b| b == 0.0) {
            return false;
        }
        let resid = self.model.node_residual(&self.state.x, i, &beta_new);
        let coef = NodeCoef { beta_e: beta_new, z_inactive: self.state.nodes[i].z_inactive.clone() };
        let mut omega = self.model.node_gamma_from_residual(&self.state.x, i, &resid);
        omega += ev.lam * ev.full_z(&coef.z_inactive);
        if ev.ridge_eps > 0.0 {
            omega += ev.ridge_eps * ev.full_beta(&coef.beta_e);
        }
        let terms = omega.map(|w| self.model.randomization().log_density_marginal(w));
        let log_g = terms.sum();
        if accept_log_ratio(log_g - self.cache[i].log_g, rng) {
            self.state.nodes[i].beta_e = coef.beta_e;
            let logdet = self.cache[i].logdet;
            self.cache[i] = NodeCache { resid, omega, terms, log_g, logdet };
            true
        } else {
            false
        }
    }

    /// Exact Gibbs redraw of node `i`'s inactive subgradients.
    pub(crate) fn subgradient_move(&mut self, i: usize, rng: &mut ChaCha20Rng) -> Result<()> {
        let ev = &self.model.node_events()[i];
        let inactive = ev.inactive();
        if inactive.is_empty() {
            return Ok(());
        }
        let lam = ev.lam;
        let dist = self.model.randomization();
        for (k, &pos) in inactive.iter().enumerate() {
            let z_old = self.state.nodes[i].z_inactive[k];
            let gamma = self.cache[i].omega[pos] - lam * z_old;
            let w = dist.sample_truncated_scalar(
                Bound::At(gamma - lam),
                Bound::At(gamma + lam),
                rng,
            )?;
            let z_new = ((w - gamma) / lam).clamp(-1.0f64.next_down(), 1.0f64.next_down());
            let omega_new = gamma + lam * z_new;
            let term = dist.log_density_marginal(omega_new);
            let nc = &mut self.cache[i];
            nc.log_g += term - nc.terms[pos];
            nc.omega[pos] = omega_new;
            nc.terms[pos] = term;
            self.state.nodes[i].z_inactive[k] = z_new;
        }
        Ok(())
    }
}

fn reduced_index(col: usize, node: usize) -> usize {
    debug_assert_ne!(col, node);
    if col < node {
        col
    } else {
        col - 1
    }
}

/// Runs the full edge chain: each sweep rotates the column move through all
/// columns, then applies the coefficient and subgradient moves node by node.
pub fn run_graph_chain(
    model: &GraphicalModel,
    edge: (usize, usize),
    init: &GraphState,
    config: &SamplerConfig,
) -> Result<SampleSet> {
    config.validate()?;
    let mut runner = GraphChainRunner::new(model, edge, init)?;
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let p = model.p();

    let coef_target = config.target_accept_coef.unwrap_or(0.44);
    let data_target = config
        .target_accept_data
        .unwrap_or_else(|| SamplerConfig::accept_target_for_dim(model.n()));
    let mut c_step = AdaptiveStep::new(config.step_coef, coef_target);
    let mut a_step = AdaptiveStep::new(config.step_data, data_target);
    let mut step_trace = Vec::new();

    let total = config.burn_in + config.n_samples * config.thin;
    let mut t_draws = Vec::with_capacity(config.n_samples);

    for sweep in 1..=total {
        let adapting = config.adapt && sweep <= config.burn_in;
        for c in 0..p {
            if let Some(acc) = runner.column_move(c, a_step.step, &mut rng) {
                a_step.update(acc, adapting);
            }
        }
        for i in 0..p {
            if model.node_events()[i].n_active() > 0 {
                let acc = runner.coef_move(i, c_step.step, &mut rng);
                c_step.update(acc, adapting);
            }
        }
        for i in 0..p {
            runner.subgradient_move(i, &mut rng)?;
        }
        if sweep <= config.burn_in {
            if sweep % 100 == 0 {
                step_trace.push((sweep, a_step.step, c_step.step));
            }
            if sweep == config.burn_in {
                a_step.reset_counts();
                c_step.reset_counts();
            }
        } else if (sweep - config.burn_in) % config.thin == 0 {
            t_draws.push(runner.t_statistic());
        }
    }

    Ok(SampleSet {
        t_draws,
        beta_draws: None,
        accept_data: a_step.rate(),
        accept_coef: c_step.rate(),
        final_step_data: a_step.step,
        final_step_coef: c_step.step,
        step_trace,
        sweeps: total,
        skipped_moves: runner.skipped(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::randomization::RandomizationDist;
    use crate::solver::{solve_randomized, Loss, ProgramSpec, SelectionEvent};

    fn randn_matrix(n: usize, p: usize, r: &mut ChaCha20Rng) -> DMatrix<f64> {
        DMatrix::from_fn(n, p, |_, _| r.sample::<f64, _>(StandardNormal))
    }

    /// Solves all node regressions on a random design and assembles the
    /// model plus its observed state.
    fn solved_graph(seed: u64, n: usize, p: usize, lam: f64) -> (GraphicalModel, GraphState) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let x = randn_matrix(n, p, &mut r);
        let dist = RandomizationDist::laplace(0.3, p - 1).unwrap();
        let mut events = Vec::new();
        let mut nodes = Vec::new();
        for i in 0..p {
            let omega = dist.sample_vector(&mut r);
            let spec = ProgramSpec::new(
                Loss::NodeRegression { x: x.clone(), node: i },
                lam,
                0.0,
                omega,
            )
            .unwrap();
            let sol = solve_randomized(&spec, 1e-11, 100_000).unwrap();
            let event = SelectionEvent::from_solution(&spec, &sol);
            nodes.push(NodeCoef {
                beta_e: DVector::from_vec(
                    event.active.iter().map(|&j| sol.beta_hat[j]).collect::<Vec<_>>(),
                ),
                z_inactive: DVector::from_vec(
                    event.inactive().iter().map(|&j| sol.z_hat[j]).collect::<Vec<_>>(),
                ),
            });
            events.push(event);
        }
        let model = GraphicalModel::from_node_events(events, dist).unwrap();
        (model, GraphState { x, nodes })
    }

    #[test]
    fn incremental_density_matches_full_recompute() {
        let (model, state) = solved_graph(61, 25, 6, 0.35);
        if model.edges().is_empty() {
            panic!("fixture selected no edges; adjust lam");
        }
        let edge = model.edges()[0];
        let mut runner = GraphChainRunner::new(&model, edge, &state).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(62);
        for sweep in 0..40 {
            for c in 0..model.p() {
                runner.column_move(c, 0.8, &mut rng);
            }
            for i in 0..model.p() {
                if model.node_events()[i].n_active() > 0 {
                    runner.coef_move(i, 0.3, &mut rng);
                }
                runner.subgradient_move(i, &mut rng).unwrap();
            }
            let _ = sweep;
        }
        let incremental = runner.total_log_density();
        let full = model.selective_log_density(&runner.state);
        assert!(
            (incremental - full).abs() < 1e-7,
            "incremental {incremental} vs full {full}"
        );
    }

    #[test]
    fn column_move_preserves_norm_and_constrained_products() {
        let (model, state) = solved_graph(63, 20, 5, 0.3);
        if model.edges().is_empty() {
            panic!("fixture selected no edges; adjust lam");
        }
        let edge = model.edges()[0];
        let mut runner = GraphChainRunner::new(&model, edge, &state).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(64);
        for c in 0..model.p() {
            let norms_before: Vec<f64> =
                (0..model.p()).map(|k| runner.state.x.column(k).norm()).collect();
            let partners = runner.constrained_partners(c);
            let products_before: Vec<f64> = partners
                .iter()
                .map(|&k| runner.state.x.column(c).dot(&runner.state.x.column(k)))
                .collect();
            // force acceptance bookkeeping aside: propose repeatedly
            for _ in 0..10 {
                runner.column_move(c, 0.8, &mut rng);
            }
            let norm_after = runner.state.x.column(c).norm();
            assert!((norm_after - norms_before[c]).abs() < 1e-10);
            for (idx, &k) in partners.iter().enumerate() {
                let prod = runner.state.x.column(c).dot(&runner.state.x.column(k));
                assert!(
                    (prod - products_before[idx]).abs() < 1e-10,
                    "constrained product moved: {} vs {}",
                    products_before[idx],
                    prod
                );
            }
        }
    }

    #[test]
    fn tested_pair_product_moves() {
        let (model, state) = solved_graph(65, 20, 5, 0.3);
        if model.edges().is_empty() {
            panic!("fixture selected no edges; adjust lam");
        }
        let edge = model.edges()[0];
        let before = model.t_statistic(&state.x, edge);
        let cfg = SamplerConfig {
            n_samples: 50,
            burn_in: 10,
            seed: 66,
            ..SamplerConfig::default()
        };
        let out = run_graph_chain(&model, edge, &state, &cfg).unwrap();
        let moved = out.t_draws.iter().any(|&t| (t - before).abs() > 1e-6);
        assert!(moved, "tested statistic never moved");
    }

    #[test]
    fn chain_is_deterministic() {
        let (model, state) = solved_graph(67, 18, 4, 0.3);
        if model.edges().is_empty() {
            panic!("fixture selected no edges; adjust lam");
        }
        let edge = model.edges()[0];
        let cfg = SamplerConfig {
            n_samples: 40,
            burn_in: 20,
            seed: 99,
            ..SamplerConfig::default()
        };
        let a = run_graph_chain(&model, edge, &state, &cfg).unwrap();
        let b = run_graph_chain(&model, edge, &state, &cfg).unwrap();
        assert_eq!(a.t_draws, b.t_draws);
    }
}
