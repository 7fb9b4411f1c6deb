//! Gaussian graphical model via nodewise regressions.
//!
//! Each column is regressed on the others with a randomized L1 program;
//! the union of selected supports (in either direction) forms the edge set.
//! The joint selective density over `(X, {beta^i}, {z^i})` is the matrix
//! normal part `exp(-0.5 * tr(X Theta X'))` restricted to the hypothesized
//! structure, times one randomization factor and one Jacobian determinant
//! per node. The determinants depend on `X`, which the chain moves, so they
//! are genuinely part of the density here.

use nalgebra::{DMatrix, DVector};

use crate::error::{MagicError, Result};
use crate::randomization::RandomizationDist;
use crate::sampler::graph::{GraphState, NodeCoef};
use crate::solver::{jacobian_logdet, DataRef, Loss, SelectionEvent};

/// Undirected edge set from per-node active sets (original column indices):
/// a pair is present when either direction selected it.
pub fn symmetrize_edges(active_sets: &[Vec<usize>]) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, set) in active_sets.iter().enumerate() {
        for &j in set {
            let e = (i.min(j), i.max(j));
            if !edges.contains(&e) {
                edges.push(e);
            }
        }
    }
    edges.sort_unstable();
    edges
}

/// Graphical model built from the `p` per-node selection events.
#[derive(Debug, Clone)]
pub struct GraphicalModel {
    n: usize,
    p: usize,
    node_events: Vec<SelectionEvent>,
    /// Active sets in original column indices, aligned with nodes.
    active_original: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    theta_diag: DVector<f64>,
    theta_edge: Vec<f64>,
    randomization: RandomizationDist,
}

impl GraphicalModel {
    /// `events[i]` must be the node-`i` regression event on a shared
    /// `n x p` design. Diagonal precision entries default to 1 and edge
    /// entries default to 0 (the null structure); both can be overridden.
    pub fn from_node_events(
        events: Vec<SelectionEvent>,
        randomization: RandomizationDist,
    ) -> Result<Self> {
        if events.len() < 2 {
            return Err(MagicError::Argument("graphical model needs p >= 2 nodes".into()));
        }
        let p = events.len();
        let mut n = 0;
        let mut active_original = Vec::with_capacity(p);
        for (i, ev) in events.iter().enumerate() {
            match &ev.loss {
                Loss::NodeRegression { x, node } => {
                    if *node != i {
                        return Err(MagicError::Argument(format!(
                            "event {i} regresses node {node}, expected {i}"
                        )));
                    }
                    if x.ncols() != p {
                        return Err(MagicError::Dimension(format!(
                            "event {i} design has {} columns, expected {p}",
                            x.ncols()
                        )));
                    }
                    if i == 0 {
                        n = x.nrows();
                    } else if x.nrows() != n {
                        return Err(MagicError::Dimension("node designs disagree on n".into()));
                    }
                }
                _ => {
                    return Err(MagicError::Argument(
                        "graphical model events must be node regressions".into(),
                    ))
                }
            }
            active_original.push(
                ev.active.iter().map(|&k| ev.loss.column_index(k)).collect::<Vec<usize>>(),
            );
        }
        if randomization.dim() != p - 1 {
            return Err(MagicError::Dimension(format!(
                "randomization dim {} != p - 1 = {}",
                randomization.dim(),
                p - 1
            )));
        }
        let edges = symmetrize_edges(&active_original);
        Ok(Self {
            n,
            p,
            node_events: events,
            active_original,
            theta_diag: DVector::from_element(p, 1.0),
            theta_edge: vec![0.0; edges.len()],
            edges,
            randomization,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_events(&self) -> &[SelectionEvent] {
        &self.node_events
    }

    pub fn active_original(&self, i: usize) -> &[usize] {
        &self.active_original[i]
    }

    pub fn randomization(&self) -> &RandomizationDist {
        &self.randomization
    }

    pub fn theta_diag(&self) -> &DVector<f64> {
        &self.theta_diag
    }

    pub fn set_theta_diag(&mut self, diag: DVector<f64>) -> Result<()> {
        if diag.len() != self.p {
            return Err(MagicError::Dimension("theta diagonal must have length p".into()));
        }
        self.theta_diag = diag;
        Ok(())
    }

    /// Hypothesized precision entry of an edge in the symmetrized set.
    pub fn edge_theta(&self, edge: (usize, usize)) -> Result<f64> {
        let e = (edge.0.min(edge.1), edge.0.max(edge.1));
        self.edges
            .iter()
            .position(|&x| x == e)
            .map(|k| self.theta_edge[k])
            .ok_or_else(|| MagicError::Argument(format!("edge {e:?} not in the selected set")))
    }

    pub fn set_edge_theta(&mut self, edge: (usize, usize), value: f64) -> Result<()> {
        let e = (edge.0.min(edge.1), edge.0.max(edge.1));
        let k = self
            .edges
            .iter()
            .position(|&x| x == e)
            .ok_or_else(|| MagicError::Argument(format!("edge {e:?} not in the selected set")))?;
        self.theta_edge[k] = value;
        Ok(())
    }

    /// Tested statistic for an edge: the column inner product.
    pub fn t_statistic(&self, x: &DMatrix<f64>, edge: (usize, usize)) -> f64 {
        x.column(edge.0).dot(&x.column(edge.1))
    }

    /// Natural-parameter scale of an edge statistic: tilting the precision
    /// entry by `d` multiplies the density by `exp(-d * x_i'x_j)`.
    pub fn tilt_scale(&self) -> f64 {
        -1.0
    }

    /// Matrix-normal part restricted to the hypothesized structure:
    /// `-0.5 * sum_c theta_cc ||x_c||^2 - sum_edges theta_e x_i'x_j`.
    pub fn gaussian_part(&self, x: &DMatrix<f64>) -> f64 {
        let mut v = 0.0;
        for c in 0..self.p {
            v -= 0.5 * self.theta_diag[c] * x.column(c).norm_squared();
        }
        for (k, &(i, j)) in self.edges.iter().enumerate() {
            if self.theta_edge[k] != 0.0 {
                v -= self.theta_edge[k] * x.column(i).dot(&x.column(j));
            }
        }
        v
    }

    /// Residual of node `i`'s regression at the given coefficients.
    pub fn node_residual(&self, x: &DMatrix<f64>, i: usize, beta_e: &DVector<f64>) -> DVector<f64> {
        let response: DVector<f64> = x.column(i).into();
        self.node_residual_with_response(x, i, &response, beta_e)
    }

    /// Residual with the node's response overridden (used by the column move
    /// before the proposal is committed to the design).
    pub fn node_residual_with_response(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        response: &DVector<f64>,
        beta_e: &DVector<f64>,
    ) -> DVector<f64> {
        let ev = &self.node_events[i];
        let mut r = response.clone();
        for (k, &a) in ev.active.iter().enumerate() {
            let col = ev.loss.column_index(a);
            r.axpy(-beta_e[k], &x.column(col), 1.0);
        }
        r
    }

    /// Smooth-loss gradient of node `i` (reduced coordinates, length p-1).
    pub fn node_gamma(&self, x: &DMatrix<f64>, i: usize, beta_e: &DVector<f64>) -> DVector<f64> {
        let r = self.node_residual(x, i, beta_e);
        self.node_gamma_from_residual(x, i, &r)
    }

    pub(crate) fn node_gamma_from_residual(
        &self,
        x: &DMatrix<f64>,
        i: usize,
        resid: &DVector<f64>,
    ) -> DVector<f64> {
        let scale = -2.0 / self.n as f64;
        let ev = &self.node_events[i];
        DVector::from_fn(self.p - 1, |k, _| {
            scale * x.column(ev.loss.column_index(k)).dot(resid)
        })
    }

    /// Reconstructed randomization of node `i` at the given coefficients.
    pub fn node_g_argument(&self, x: &DMatrix<f64>, i: usize, coef: &NodeCoef) -> DVector<f64> {
        let ev = &self.node_events[i];
        let mut omega = self.node_gamma(x, i, &coef.beta_e);
        omega += ev.lam * ev.full_z(&coef.z_inactive);
        if ev.ridge_eps > 0.0 {
            omega += ev.ridge_eps * ev.full_beta(&coef.beta_e);
        }
        omega
    }

    /// Per-node randomization log density.
    pub fn node_log_g(&self, x: &DMatrix<f64>, i: usize, coef: &NodeCoef) -> f64 {
        self.node_g_argument(x, i, coef)
            .iter()
            .map(|&w| self.randomization.log_density_marginal(w))
            .sum()
    }

    /// Per-node Jacobian log determinant at the current design.
    pub fn node_logdet(&self, x: &DMatrix<f64>, i: usize) -> Result<f64> {
        let ev = &self.node_events[i];
        jacobian_logdet(ev, DataRef::Design(x), &DVector::zeros(ev.n_active()))
    }

    /// Full selective log density of a graph state; `-inf` outside the
    /// support or when an active Gram block degenerates. This is the
    /// reference (non-incremental) evaluation.
    pub fn selective_log_density(&self, state: &GraphState) -> f64 {
        if state.nodes.len() != self.p || state.x.ncols() != self.p || state.x.nrows() != self.n {
            return f64::NEG_INFINITY;
        }
        let mut total = self.gaussian_part(&state.x);
        for i in 0..self.p {
            let ev = &self.node_events[i];
            let coef = &state.nodes[i];
            if !ev.in_support(&coef.beta_e, &coef.z_inactive) {
                return f64::NEG_INFINITY;
            }
            total += self.node_log_g(&state.x, i, coef);
            match self.node_logdet(&state.x, i) {
                Ok(v) => total += v,
                Err(_) => return f64::NEG_INFINITY,
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn symmetrize_or_rule() {
        // node 0 selects column 1, node 1 selects nothing: the edge appears
        assert_eq!(symmetrize_edges(&[vec![1], vec![]]), vec![(0, 1)]);
        assert_eq!(symmetrize_edges(&[vec![], vec![], vec![]]), Vec::<(usize, usize)>::new());
        let dense = symmetrize_edges(&[vec![1, 2], vec![0, 2], vec![0, 1]]);
        assert_eq!(dense, vec![(0, 1), (0, 2), (1, 2)]);
    }

    fn toy_model(n: usize, p: usize, seed: u64) -> (GraphicalModel, DMatrix<f64>) {
        let mut r = ChaCha20Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rand::Rng::sample(&mut r, StandardNormal));
        let mut events = Vec::new();
        for i in 0..p {
            events.push(SelectionEvent {
                active: vec![],
                signs: vec![],
                lam: 1.0,
                ridge_eps: 0.0,
                loss: Loss::NodeRegression { x: x.clone(), node: i },
            });
        }
        let dist = RandomizationDist::laplace(1.0, p - 1).unwrap();
        (GraphicalModel::from_node_events(events, dist).unwrap(), x)
    }

    #[test]
    fn identity_precision_gaussian_part_is_frobenius() {
        let (model, x) = toy_model(8, 4, 51);
        assert_relative_eq!(
            model.gaussian_part(&x),
            -0.5 * x.norm_squared(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn two_node_gaussian_part_matches_bivariate_likelihood() {
        // p = 2 with one edge: density differences must equal the exact
        // row-wise bivariate normal log-likelihood differences.
        let n = 6;
        let mut r = ChaCha20Rng::seed_from_u64(52);
        let x1 = DMatrix::from_fn(n, 2, |_, _| rand::Rng::sample(&mut r, StandardNormal));
        let x2 = DMatrix::from_fn(n, 2, |_, _| rand::Rng::sample(&mut r, StandardNormal));
        let mut events = Vec::new();
        let base = x1.clone();
        for i in 0..2 {
            events.push(SelectionEvent {
                active: vec![0],
                signs: vec![1.0],
                lam: 1.0,
                ridge_eps: 0.0,
                loss: Loss::NodeRegression { x: base.clone(), node: i },
            });
        }
        let dist = RandomizationDist::laplace(1.0, 1).unwrap();
        let mut model = GraphicalModel::from_node_events(events, dist).unwrap();
        let rho = 0.245;
        model.set_edge_theta((0, 1), rho).unwrap();
        let theta = DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]);
        let loglik = |x: &DMatrix<f64>| -> f64 {
            let mut v = 0.0;
            for i in 0..n {
                let row = DVector::from_vec(vec![x[(i, 0)], x[(i, 1)]]);
                v += -0.5 * row.dot(&(&theta * &row));
            }
            v
        };
        let lhs = model.gaussian_part(&x1) - model.gaussian_part(&x2);
        let rhs = loglik(&x1) - loglik(&x2);
        assert_relative_eq!(lhs, rhs, epsilon = 1e-9);
    }

    #[test]
    fn row_permutation_leaves_gaussian_part_invariant() {
        let (model, x) = toy_model(9, 3, 53);
        let mut permuted = x.clone();
        permuted.swap_rows(0, 5);
        assert_relative_eq!(
            model.gaussian_part(&x),
            model.gaussian_part(&permuted),
            epsilon = 1e-10
        );
    }
}
