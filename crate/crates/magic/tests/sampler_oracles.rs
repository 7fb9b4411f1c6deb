//! Stationarity of the chains against independent quadrature oracles at
//! micro scale, plus the exactness properties of the individual moves.

mod common;

use common::*;
use magic::inference::{selective_pvalue, Alternative};
use magic::models::GaussianLinearModel;
use magic::randomization::RandomizationDist;
use magic::sampler::{
    run_chain, run_graph_chain, step_data, step_subgradient, ChainState, DataPart, GraphState,
    LassoChainTarget, NodeCoef, SamplerConfig, VectorTarget,
};
use magic::solver::{solve_randomized, Loss, ProgramSpec, SelectionEvent};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// One-dimensional randomized lasso fixture: n = p = 1, X = [1], sigma = 1.
/// Returns the model and the observed chain state.
fn micro_lasso(
    lam: f64,
    omega: f64,
    y_obs: f64,
    dist: &RandomizationDist,
) -> (GaussianLinearModel, ChainState) {
    let x = DMatrix::from_element(1, 1, 1.0);
    let y = DVector::from_element(1, y_obs);
    let spec = ProgramSpec::new(
        Loss::SquaredError { x, y: y.clone() },
        lam,
        0.0,
        DVector::from_element(1, omega),
    )
    .unwrap();
    let sol = solve_randomized(&spec, 1e-12, 10_000).unwrap();
    assert_eq!(sol.active, vec![0], "fixture must select the variable");
    let event = SelectionEvent::from_solution(&spec, &sol);
    let state = ChainState {
        data: DataPart::Response(y),
        beta_e: DVector::from_element(1, sol.beta_hat[0]),
        z_inactive: DVector::zeros(0),
    };
    let model = GaussianLinearModel::from_event(event, 1.0, dist.clone(), None).unwrap();
    (model, state)
}

#[test]
fn one_dim_chain_matches_quadrature() {
    let dist = RandomizationDist::gaussian(0.7, 1).unwrap();
    let (model, state) = micro_lasso(1.0, 0.4, 1.6, &dist);
    let sign = model.event().signs[0];
    assert_eq!(sign, 1.0);

    let y_obs = state.response().unwrap()[0];
    let stat = model.sufficient_stat(state.response().unwrap(), 0).unwrap();
    let target = LassoChainTarget::new(&model, &stat);
    let cfg = SamplerConfig {
        n_samples: 100_000,
        burn_in: 10_000,
        seed: 7,
        store_states: true,
        ..SamplerConfig::default()
    };
    let out = run_chain(&target, &state, &cfg).unwrap();

    // T_j = y; its marginal integrates the coefficient out of
    // exp(-y^2/2) g1(lam - y + beta) over beta > 0
    let lam = 1.0;
    let marginal = |t: f64| -> f64 {
        let inner = simpson(|b: f64| dist.log_density_marginal(lam - t + b).exp(), 0.0, 40.0, 1201);
        (-0.5 * t * t).exp() * inner
    };
    let oracle = GridCdf::build(marginal, -9.0, 11.0, 4001);
    let sup = sup_ecdf_distance(&out.t_draws, |x| oracle.eval(x));
    assert!(sup < 0.02, "sup-CDF distance {sup}");

    // Monte-Carlo p-value against the quadrature tail
    let p_mc = selective_pvalue(&out.t_draws, y_obs, Alternative::Greater).unwrap();
    let p_quad = oracle.sf(y_obs);
    assert!(
        (p_mc - p_quad).abs() < 0.01,
        "p-value: chain {p_mc} vs quadrature {p_quad}"
    );

    // coefficient marginal from the same chain against its own quadrature
    let betas: Vec<f64> = out.beta_draws.unwrap().iter().map(|b| b[0]).collect();
    let beta_marginal = |b: f64| -> f64 {
        if b <= 0.0 {
            return 0.0;
        }
        simpson(
            |t: f64| (-0.5 * t * t).exp() * dist.log_density_marginal(lam - t + b).exp(),
            -9.0,
            11.0,
            1201,
        )
    };
    let beta_oracle = GridCdf::build(beta_marginal, 0.0, 14.0, 3001);
    let sup_b = sup_ecdf_distance(&betas, |x| beta_oracle.eval(x));
    assert!(sup_b < 0.02, "coefficient sup-CDF distance {sup_b}");
}

#[test]
fn chain_is_deterministic_and_stays_in_support() {
    let mut rng = ChaCha20Rng::seed_from_u64(77);
    let n = 20;
    let p = 6;
    let x = randn_matrix(n, p, &mut rng);
    let y = randn_vector(n, &mut rng) * 2.0;
    let dist = RandomizationDist::laplace(1.0, p).unwrap();
    let omega = dist.sample_vector(&mut rng);
    let spec =
        ProgramSpec::new(Loss::SquaredError { x, y: y.clone() }, 1.2, 0.0, omega).unwrap();
    let sol = solve_randomized(&spec, 1e-11, 50_000).unwrap();
    assert!(!sol.active.is_empty());
    let event = SelectionEvent::from_solution(&spec, &sol);
    let state = ChainState {
        data: DataPart::Response(y.clone()),
        beta_e: DVector::from_vec(
            event.active.iter().map(|&j| sol.beta_hat[j]).collect::<Vec<_>>(),
        ),
        z_inactive: DVector::from_vec(
            event.inactive().iter().map(|&j| sol.z_hat[j]).collect::<Vec<_>>(),
        ),
    };
    let j = event.active[0];
    let model = GaussianLinearModel::from_event(event, 1.0, dist, None).unwrap();
    let stat = model.sufficient_stat(&y, j).unwrap();
    let target = LassoChainTarget::new(&model, &stat);
    let cfg = SamplerConfig { n_samples: 500, burn_in: 200, seed: 3, ..SamplerConfig::default() };
    let a = run_chain(&target, &state, &cfg).unwrap();
    let b = run_chain(&target, &state, &cfg).unwrap();
    assert_eq!(a.t_draws, b.t_draws);
    assert!(a.t_draws.iter().all(|t| t.is_finite()));
}

#[test]
fn conditioned_statistics_do_not_drift() {
    // 1000 data moves leave X_{E\j}' y within 1e-10 of its start
    let mut rng = ChaCha20Rng::seed_from_u64(78);
    let n = 25;
    let p = 7;
    let x = randn_matrix(n, p, &mut rng);
    let y = randn_vector(n, &mut rng) * 2.0;
    let dist = RandomizationDist::laplace(1.0, p).unwrap();
    let omega = dist.sample_vector(&mut rng);
    let spec = ProgramSpec::new(
        Loss::SquaredError { x: x.clone(), y: y.clone() },
        0.9,
        0.0,
        omega,
    )
    .unwrap();
    let sol = solve_randomized(&spec, 1e-11, 50_000).unwrap();
    assert!(sol.active.len() >= 2, "need at least two active variables");
    let event = SelectionEvent::from_solution(&spec, &sol);
    let j = event.active[0];
    let rest: Vec<usize> = event.active.iter().copied().filter(|&a| a != j).collect();
    let mut state = ChainState {
        data: DataPart::Response(y.clone()),
        beta_e: DVector::from_vec(
            event.active.iter().map(|&k| sol.beta_hat[k]).collect::<Vec<_>>(),
        ),
        z_inactive: DVector::from_vec(
            event.inactive().iter().map(|&k| sol.z_hat[k]).collect::<Vec<_>>(),
        ),
    };
    let model = GaussianLinearModel::from_event(event, 1.0, dist, None).unwrap();
    let stat = model.sufficient_stat(&y, j).unwrap();
    let target = LassoChainTarget::new(&model, &stat);
    let before: Vec<f64> = rest.iter().map(|&a| x.column(a).dot(&y)).collect();
    let mut ld = model.selective_log_density(&state);
    for _ in 0..1000 {
        step_data(&target, &mut state, &mut ld, 0.6, &mut rng);
    }
    let y_now = state.response().unwrap();
    for (k, &a) in rest.iter().enumerate() {
        let drift = (x.column(a).dot(y_now) - before[k]).abs();
        assert!(drift < 1e-10, "conditioned statistic {k} drifted by {drift}");
    }
}

#[test]
fn detailed_balance_of_acceptance_ratio() {
    // swapping state and proposal flips the log acceptance ratio exactly
    let dist = RandomizationDist::gaussian(0.7, 1).unwrap();
    let (model, state) = micro_lasso(1.0, 0.4, 1.6, &dist);
    let other = ChainState {
        data: DataPart::Response(DVector::from_element(1, 0.3)),
        beta_e: DVector::from_element(1, 0.9),
        z_inactive: DVector::zeros(0),
    };
    let ld_a = model.selective_log_density(&state);
    let ld_b = model.selective_log_density(&other);
    let forward = ld_b - ld_a;
    let backward = ld_a - ld_b;
    assert_eq!(forward, -backward);
}

#[test]
fn subgradient_redraw_is_a_perfect_gibbs_step() {
    // Redrawing z twice must leave the distribution unchanged: rank-sum
    // test between one-redraw and two-redraw samples of max|z|.
    let n = 15;
    let p = 5;
    // find a seed whose selection is a proper nonempty subset
    let (mut rng, x, y, spec, sol) = (79..200)
        .find_map(|seed| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let x = randn_matrix(n, p, &mut rng);
            let y = randn_vector(n, &mut rng) * 2.0;
            let dist = RandomizationDist::laplace(1.0, p).unwrap();
            let omega = dist.sample_vector(&mut rng);
            let spec = ProgramSpec::new(
                Loss::SquaredError { x: x.clone(), y: y.clone() },
                5.0,
                0.0,
                omega,
            )
            .unwrap();
            let sol = solve_randomized(&spec, 1e-11, 50_000).unwrap();
            (!sol.active.is_empty() && sol.active.len() < p)
                .then_some((rng, x, y, spec, sol))
        })
        .expect("no seed produced a proper selection");
    let _ = &x;
    let dist = RandomizationDist::laplace(1.0, p).unwrap();
    let event = SelectionEvent::from_solution(&spec, &sol);
    assert!(event.dim() > event.n_active(), "need inactive coordinates");
    let state = ChainState {
        data: DataPart::Response(y.clone()),
        beta_e: DVector::from_vec(
            event.active.iter().map(|&k| sol.beta_hat[k]).collect::<Vec<_>>(),
        ),
        z_inactive: DVector::from_vec(
            event.inactive().iter().map(|&k| sol.z_hat[k]).collect::<Vec<_>>(),
        ),
    };
    let j = event.active.first().copied();
    let model = GaussianLinearModel::from_event(event, 1.0, dist, None).unwrap();
    let stat = model.sufficient_stat(&y, j.unwrap_or(0)).unwrap();
    let target = LassoChainTarget::new(&model, &stat);

    let base_ld = model.selective_log_density(&state);
    let reps = 3000;
    let mut once = Vec::with_capacity(reps);
    let mut twice = Vec::with_capacity(reps);
    for _ in 0..reps {
        let mut s1 = state.clone();
        let mut ld = base_ld;
        step_subgradient(&target, &mut s1, &mut ld, &mut rng).unwrap();
        once.push(s1.z_inactive.amax());
        let mut s2 = state.clone();
        let mut ld = base_ld;
        step_subgradient(&target, &mut s2, &mut ld, &mut rng).unwrap();
        step_subgradient(&target, &mut s2, &mut ld, &mut rng).unwrap();
        twice.push(s2.z_inactive.amax());
        assert!(s1.z_inactive.amax() < 1.0);
        assert!(s2.z_inactive.amax() < 1.0);
    }
    let z = mann_whitney_z(&once, &twice);
    assert!(z.abs() < 3.29, "rank-sum z = {z} at level 0.001");
}

#[test]
fn subgradient_marginal_matches_truncated_cdf() {
    // For fixed (y, beta), one coordinate of the redrawn z follows the
    // analytic truncated-marginal law exactly.
    let mut rng = ChaCha20Rng::seed_from_u64(80);
    let n = 15;
    let p = 5;
    let x = randn_matrix(n, p, &mut rng);
    let y = randn_vector(n, &mut rng) * 2.0;
    let dist = RandomizationDist::laplace(1.0, p).unwrap();
    let omega = dist.sample_vector(&mut rng);
    let lam = 1.6;
    let spec = ProgramSpec::new(
        Loss::SquaredError { x, y: y.clone() },
        lam,
        0.0,
        omega,
    )
    .unwrap();
    let sol = solve_randomized(&spec, 1e-11, 50_000).unwrap();
    let event = SelectionEvent::from_solution(&spec, &sol);
    assert!(event.dim() > event.n_active());
    let state = ChainState {
        data: DataPart::Response(y.clone()),
        beta_e: DVector::from_vec(
            event.active.iter().map(|&k| sol.beta_hat[k]).collect::<Vec<_>>(),
        ),
        z_inactive: DVector::from_vec(
            event.inactive().iter().map(|&k| sol.z_hat[k]).collect::<Vec<_>>(),
        ),
    };
    let tested = event.active.first().copied().unwrap_or(0);
    let model = GaussianLinearModel::from_event(event, 1.0, dist.clone(), None).unwrap();
    let stat = model.sufficient_stat(&y, tested).unwrap();
    let target = LassoChainTarget::new(&model, &stat);

    let gamma = target.gamma_inactive(&state).unwrap();
    let k = 0;
    let (fl, fu) = (dist.cdf(gamma[k] - lam), dist.cdf(gamma[k] + lam));
    let base_ld = model.selective_log_density(&state);
    let m = 100_000;
    let mut draws = Vec::with_capacity(m);
    for _ in 0..m {
        let mut s = state.clone();
        let mut ld = base_ld;
        step_subgradient(&target, &mut s, &mut ld, &mut rng).unwrap();
        let z = s.z_inactive[k];
        assert!(z > -1.0 && z < 1.0);
        draws.push(z);
    }
    let cdf = |v: f64| ((dist.cdf(gamma[k] + lam * v) - fl) / (fu - fl)).clamp(0.0, 1.0);
    let sup = sup_ecdf_distance(&draws, cdf);
    // asymptotic KS critical value at level 0.001
    assert!(sup < 1.9495 / (m as f64).sqrt(), "KS stat {sup}");
}

/// Two-node graphical chain against nested quadrature: the stationary law of
/// the tested inner product `x_0' x_1` given both column norms.
#[test]
fn two_node_graph_chain_matches_quadrature() {
    let n = 4;
    let mut rng = ChaCha20Rng::seed_from_u64(81);
    // correlated columns so both node regressions select each other
    let base = randn_vector(n, &mut rng);
    let mut x = DMatrix::zeros(n, 2);
    x.set_column(0, &base);
    x.set_column(1, &(base * 0.9 + randn_vector(n, &mut rng) * 0.45));
    let dist = RandomizationDist::laplace(0.05, 1).unwrap();
    let lam = 0.25;
    let mut events = Vec::new();
    let mut nodes = Vec::new();
    for i in 0..2 {
        let omega = dist.sample_vector(&mut rng);
        let spec = ProgramSpec::new(
            Loss::NodeRegression { x: x.clone(), node: i },
            lam,
            0.0,
            omega,
        )
        .unwrap();
        let sol = solve_randomized(&spec, 1e-12, 50_000).unwrap();
        assert_eq!(sol.active.len(), 1, "node {i} must select its partner");
        let event = SelectionEvent::from_solution(&spec, &sol);
        nodes.push(NodeCoef {
            beta_e: DVector::from_element(1, sol.beta_hat[0]),
            z_inactive: DVector::zeros(0),
        });
        events.push(event);
    }
    let signs = [events[0].signs[0], events[1].signs[0]];
    let model = magic::models::GraphicalModel::from_node_events(events, dist.clone()).unwrap();
    assert_eq!(model.edges(), &[(0, 1)]);
    let state = GraphState { x: x.clone(), nodes };

    let cfg = SamplerConfig {
        n_samples: 150_000,
        burn_in: 10_000,
        seed: 13,
        ..SamplerConfig::default()
    };
    let out = run_graph_chain(&model, (0, 1), &state, &cfg).unwrap();
    assert!(out.accept_data > 0.2 && out.accept_data < 0.7, "column acceptance {}", out.accept_data);

    // Oracle: t = r0 r1 c with c the cosine of the angle between two
    // uniform directions on S^{n-1}; density (1-c^2)^((n-3)/2) times the
    // two node factors integrated over their coefficient orthants.
    let r0 = x.column(0).norm();
    let r1 = x.column(1).norm();
    let two_over_n = 2.0 / n as f64;
    let factor0 = |t: f64| {
        simpson(
            |b: f64| {
                dist.log_density_marginal(-two_over_n * (t - r1 * r1 * b * signs[0]) + lam * signs[0])
                    .exp()
            },
            0.0,
            60.0,
            1401,
        )
    };
    let factor1 = |t: f64| {
        simpson(
            |b: f64| {
                dist.log_density_marginal(-two_over_n * (t - r0 * r0 * b * signs[1]) + lam * signs[1])
                    .exp()
            },
            0.0,
            60.0,
            1401,
        )
    };
    let density = |t: f64| -> f64 {
        let c = t / (r0 * r1);
        if c.abs() >= 1.0 {
            return 0.0;
        }
        (1.0 - c * c).powf((n as f64 - 3.0) / 2.0) * factor0(t) * factor1(t)
    };
    let oracle = GridCdf::build(density, -r0 * r1 + 1e-9, r0 * r1 - 1e-9, 2001);
    let sup = sup_ecdf_distance(&out.t_draws, |v| oracle.eval(v));
    assert!(sup < 0.025, "graph chain sup-CDF distance {sup}");
}
