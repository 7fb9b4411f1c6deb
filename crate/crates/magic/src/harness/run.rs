//! End-to-end pipelines behind the CLI subcommands.
//!
//! Each pipeline is deterministic given the resolved configuration: every
//! random draw (randomization vectors, chain proposals, synthetic data)
//! comes from a seed derived from the master seed and a structural tag
//! path, so worker count never changes the output.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::error::{MagicError, Result};
use crate::harness::config::{ProblemKind, RunConfig};
use crate::harness::report::{
    save_json, write_ecdf_csv, GraphEdgeReport, GraphReport, InferReport, PowerReport,
    RejectionRate, SelectionSummary, SimNullReport, VariableReport,
};
use crate::harness::{child_seed, data, sim};
use crate::inference::{
    ci_grid, ks_uniformity, power_estimate, selective_ci, summarize, Alternative,
};
use crate::models::{EstimatorKind, GaussianLinearModel, GraphicalModel, LogisticModel};
use crate::randomization::RandomizationDist;
use crate::sampler::{
    run_chain, run_graph_chain, ChainState, DataPart, GraphState, LassoChainTarget,
    LogisticChainTarget, NodeCoef, SampleSet,
};
use crate::solver::{solve_randomized, Loss, ProgramSpec, SelectionEvent};

const SOLVER_TOL: f64 = 1e-10;
const SOLVER_MAX_SWEEPS: usize = 200_000;

/// Which active coordinates get a chain in replication studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestScope {
    All,
    NullsOnly,
    AlternativesOnly,
}

/// One tested coordinate (or edge, when `partner` is set).
#[derive(Debug, Clone)]
pub struct TestedVariable {
    pub index: usize,
    pub partner: Option<usize>,
    pub is_null: bool,
    pub truth: f64,
    pub p_value: f64,
    pub t_obs: f64,
    pub ci: Option<(f64, f64)>,
    pub ci_low_ess: bool,
    pub n_effective: usize,
    pub mc_se: f64,
    pub accept_data: f64,
    pub accept_coef: f64,
    pub skipped_moves: usize,
}

/// One replication of a simulation study.
#[derive(Debug, Clone)]
pub struct RepOutcome {
    pub attempt: usize,
    pub kept: bool,
    pub active_size: usize,
    pub tested: Vec<TestedVariable>,
}

/// Analysis of one dataset.
pub struct DatasetAnalysis {
    pub lam: f64,
    pub randomization_scale: f64,
    pub active: Vec<usize>,
    pub signs: Vec<f64>,
    pub per_node_active: Vec<Vec<usize>>,
    pub tested: Vec<TestedVariable>,
    /// Selection screening outcome when the truth is known.
    pub kept_screen: bool,
}

fn make_pool(workers: usize) -> Result<rayon::ThreadPool> {
    let threads = if workers == 0 {
        std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1)
    } else {
        workers
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| MagicError::Numerical(format!("cannot build worker pool: {e}")))
}

fn dist_for(
    cfg: &RunConfig,
    problem: ProblemKind,
    x: &DMatrix<f64>,
    dim: usize,
) -> Result<(RandomizationDist, f64)> {
    let sigma = cfg.sigma2.sqrt();
    let scale = cfg
        .randomization
        .scale
        .unwrap_or_else(|| sim::default_randomization_scale(cfg.randomization.family, problem, x, sigma));
    Ok((RandomizationDist::new(cfg.randomization.family, scale, dim)?, scale))
}

fn lam_for(cfg: &RunConfig, problem: ProblemKind, x: &DMatrix<f64>, seed: u64) -> f64 {
    cfg.lam
        .unwrap_or_else(|| sim::auto_lambda(problem, x, cfg.sigma2.sqrt(), cfg.lam_scale, seed))
}

fn solution_state(event: &SelectionEvent, sol: &crate::solver::Solution, data: DataPart) -> ChainState {
    ChainState {
        data,
        beta_e: DVector::from_vec(event.active.iter().map(|&j| sol.beta_hat[j]).collect()),
        z_inactive: DVector::from_vec(
            event.inactive().iter().map(|&j| sol.z_hat[j]).collect(),
        ),
    }
}

fn truth_screen(active: &[usize], truth: Option<&DVector<f64>>) -> bool {
    match truth {
        None => true,
        Some(b) => (0..b.len()).filter(|&j| b[j] != 0.0).all(|j| active.contains(&j)),
    }
}

fn tested_cap(cfg: &RunConfig) -> usize {
    cfg.simulate
        .as_ref()
        .and_then(|s| s.max_tested_per_rep)
        .unwrap_or(usize::MAX)
}

fn scope_allows(scope: TestScope, is_null: bool) -> bool {
    match scope {
        TestScope::All => true,
        TestScope::NullsOnly => is_null,
        TestScope::AlternativesOnly => !is_null,
    }
}

/// Tilted-test interval with one automatic widening retry; `None` when the
/// grid still cannot bracket the interval.
fn interval_or_none(
    draws: &[f64],
    t_obs: f64,
    level: f64,
    tilt: f64,
    center: f64,
    half_width: f64,
    points: usize,
) -> (Option<(f64, f64)>, bool) {
    for widen in [1.0, 4.0] {
        let grid = ci_grid(center, half_width * widen, points);
        match selective_ci(draws, t_obs, level, tilt, &grid) {
            Ok(ci) => return (Some((ci.lower, ci.upper)), ci.low_ess_warning),
            Err(MagicError::GridTooCoarse { .. }) => continue,
            Err(_) => break,
        }
    }
    (None, true)
}

/// Full analysis of one linear-model dataset.
pub fn analyze_lasso(
    cfg: &RunConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    truth: Option<&DVector<f64>>,
    scope: TestScope,
    compute_ci: bool,
    skip_unscreened: bool,
    seed_path: &[u64],
) -> Result<DatasetAnalysis> {
    let p = x.ncols();
    if y.len() != x.nrows() {
        return Err(MagicError::Data(format!(
            "response length {} does not match {} design rows",
            y.len(),
            x.nrows()
        )));
    }
    let (dist, scale) = dist_for(cfg, ProblemKind::Lasso, x, p)?;
    let lam = lam_for(cfg, ProblemKind::Lasso, x, child_seed(cfg.seed, &[tag(seed_path, 1)]));
    let mut omega_rng =
        ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[tag(seed_path, 2)]));
    let omega = dist.sample_vector(&mut omega_rng);
    let spec = ProgramSpec::new(
        Loss::SquaredError { x: x.clone(), y: y.clone() },
        lam,
        cfg.ridge_eps_for(ProblemKind::Lasso),
        omega,
    )?;
    let sol = solve_randomized(&spec, SOLVER_TOL, SOLVER_MAX_SWEEPS)?;
    let event = SelectionEvent::from_solution(&spec, &sol);
    let kept_screen = truth_screen(&event.active, truth);
    let active = event.active.clone();
    let signs = event.signs.clone();
    if active.is_empty() || (skip_unscreened && !kept_screen) {
        return Ok(DatasetAnalysis {
            lam,
            randomization_scale: scale,
            active,
            signs,
            per_node_active: vec![],
            tested: vec![],
            kept_screen,
        });
    }

    let model = GaussianLinearModel::from_event(event, cfg.sigma2, dist, None)?;
    let init = solution_state(model.event(), &sol, DataPart::Response(y.clone()));

    // interval centers from the selected-model least squares fit
    let xe = model.event().design_active();
    let gram_chol = nalgebra::Cholesky::new(xe.transpose() * &xe).ok_or_else(|| {
        MagicError::SingularSelection("active design is rank deficient".into())
    })?;
    let ols = gram_chol.solve(&(xe.transpose() * y));
    let gram_inv = gram_chol.inverse();

    let cap = tested_cap(cfg);
    let mut jobs: Vec<(usize, usize, bool, f64)> = Vec::new();
    for (k, &j) in model.event().active.iter().enumerate() {
        let truth_j = truth.map_or(0.0, |b| b[j]);
        let is_null = truth_j == 0.0;
        if scope_allows(scope, is_null) && jobs.len() < cap {
            jobs.push((k, j, is_null, truth_j));
        }
    }
    let tested: Vec<TestedVariable> = jobs
        .par_iter()
        .map(|&(k, j, is_null, truth_j)| {
            let stat = model.sufficient_stat(y, j)?;
            let target = LassoChainTarget::new(&model, &stat);
            let chain_cfg =
                cfg.sampler_config(child_seed(cfg.seed, &[tag(seed_path, 3), j as u64]));
            let out = run_chain(&target, &init, &chain_cfg)?;
            let t_obs = stat.t_j;
            let (ci, low_ess) = if compute_ci {
                let se = (cfg.sigma2 * gram_inv[(k, k)]).sqrt();
                interval_or_none(
                    &out.t_draws,
                    t_obs,
                    cfg.ci_level,
                    model.tilt_scale(),
                    ols[k],
                    cfg.ci_grid_span * se,
                    cfg.ci_grid_points,
                )
            } else {
                (None, false)
            };
            tested_from(j, None, is_null, truth_j, &out, t_obs, cfg.alternative, ci, low_ess)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetAnalysis {
        lam,
        randomization_scale: scale,
        active,
        signs,
        per_node_active: vec![],
        tested,
        kept_screen,
    })
}

/// Full analysis of one logistic dataset.
pub fn analyze_logistic(
    cfg: &RunConfig,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    truth: Option<&DVector<f64>>,
    scope: TestScope,
    compute_ci: bool,
    skip_unscreened: bool,
    seed_path: &[u64],
) -> Result<DatasetAnalysis> {
    let p = x.ncols();
    if y.len() != x.nrows() {
        return Err(MagicError::Data(format!(
            "response length {} does not match {} design rows",
            y.len(),
            x.nrows()
        )));
    }
    let (dist, scale) = dist_for(cfg, ProblemKind::Logistic, x, p)?;
    let lam = lam_for(cfg, ProblemKind::Logistic, x, child_seed(cfg.seed, &[tag(seed_path, 1)]));
    let mut omega_rng =
        ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[tag(seed_path, 2)]));
    let omega = dist.sample_vector(&mut omega_rng);
    let spec = ProgramSpec::new(
        Loss::Logistic { x: x.clone(), y: y.clone() },
        lam,
        cfg.ridge_eps_for(ProblemKind::Logistic),
        omega,
    )?;
    let sol = solve_randomized(&spec, SOLVER_TOL, SOLVER_MAX_SWEEPS)?;
    let event = SelectionEvent::from_solution(&spec, &sol);
    let kept_screen = truth_screen(&event.active, truth);
    let active = event.active.clone();
    let signs = event.signs.clone();
    if active.is_empty() || (skip_unscreened && !kept_screen) {
        return Ok(DatasetAnalysis {
            lam,
            randomization_scale: scale,
            active,
            signs,
            per_node_active: vec![],
            tested: vec![],
            kept_screen,
        });
    }
    let model = LogisticModel::from_event(event, dist, None, EstimatorKind::Mle, None)?;
    let init = {
        let event = model.event();
        ChainState {
            data: DataPart::Statistic(model.observed_t().clone()),
            beta_e: DVector::from_vec(
                event.active.iter().map(|&j| sol.beta_hat[j]).collect(),
            ),
            z_inactive: DVector::from_vec(
                event.inactive().iter().map(|&j| sol.z_hat[j]).collect(),
            ),
        }
    };

    let cap = tested_cap(cfg);
    let mut jobs: Vec<(usize, bool, f64)> = Vec::new();
    for &j in model.event().active.iter() {
        let truth_j = truth.map_or(0.0, |b| b[j]);
        let is_null = truth_j == 0.0;
        if scope_allows(scope, is_null) && jobs.len() < cap {
            jobs.push((j, is_null, truth_j));
        }
    }
    let tested: Vec<TestedVariable> = jobs
        .par_iter()
        .map(|&(j, is_null, truth_j)| {
            let target = LogisticChainTarget::new(&model, j)?;
            let chain_cfg =
                cfg.sampler_config(child_seed(cfg.seed, &[tag(seed_path, 3), j as u64]));
            let out = run_chain(&target, &init, &chain_cfg)?;
            let t_obs = model.observed_t()[j];
            let (ci, low_ess) = if compute_ci {
                let se = model.sigma_hat()[(j, j)].sqrt();
                interval_or_none(
                    &out.t_draws,
                    t_obs,
                    cfg.ci_level,
                    model.tilt_scale(j)?,
                    t_obs,
                    cfg.ci_grid_span * se,
                    cfg.ci_grid_points,
                )
            } else {
                (None, false)
            };
            tested_from(j, None, is_null, truth_j, &out, t_obs, cfg.alternative, ci, low_ess)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetAnalysis {
        lam,
        randomization_scale: scale,
        active,
        signs,
        per_node_active: vec![],
        tested,
        kept_screen,
    })
}

/// Full analysis of one graph dataset: nodewise selection, symmetrization,
/// per-edge chains.
pub fn analyze_graph(
    cfg: &RunConfig,
    x: &DMatrix<f64>,
    true_edges: Option<&[(usize, usize)]>,
    scope: TestScope,
    skip_unscreened: bool,
    seed_path: &[u64],
) -> Result<DatasetAnalysis> {
    let p = x.ncols();
    if p < 2 {
        return Err(MagicError::Data("graph data needs at least two columns".into()));
    }
    let (dist, scale) = dist_for(cfg, ProblemKind::Graph, x, p - 1)?;
    let lam = lam_for(cfg, ProblemKind::Graph, x, child_seed(cfg.seed, &[tag(seed_path, 1)]));
    let eps = cfg.ridge_eps_for(ProblemKind::Graph);

    let mut events = Vec::with_capacity(p);
    let mut nodes = Vec::with_capacity(p);
    for i in 0..p {
        let mut omega_rng =
            ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[tag(seed_path, 2), i as u64]));
        let omega = dist.sample_vector(&mut omega_rng);
        let spec =
            ProgramSpec::new(Loss::NodeRegression { x: x.clone(), node: i }, lam, eps, omega)?;
        let sol = solve_randomized(&spec, SOLVER_TOL, SOLVER_MAX_SWEEPS)?;
        let event = SelectionEvent::from_solution(&spec, &sol);
        nodes.push(NodeCoef {
            beta_e: DVector::from_vec(
                event.active.iter().map(|&j| sol.beta_hat[j]).collect(),
            ),
            z_inactive: DVector::from_vec(
                event.inactive().iter().map(|&j| sol.z_hat[j]).collect(),
            ),
        });
        events.push(event);
    }
    let model = GraphicalModel::from_node_events(events, dist)?;
    let per_node_active: Vec<Vec<usize>> =
        (0..p).map(|i| model.active_original(i).to_vec()).collect();
    let edges = model.edges().to_vec();
    let kept_screen = match true_edges {
        None => true,
        Some(te) => te.iter().all(|e| edges.contains(e)),
    };
    if edges.is_empty() || (skip_unscreened && !kept_screen) {
        return Ok(DatasetAnalysis {
            lam,
            randomization_scale: scale,
            active: vec![],
            signs: vec![],
            per_node_active,
            tested: vec![],
            kept_screen,
        });
    }
    let init = GraphState { x: x.clone(), nodes };

    let cap = tested_cap(cfg);
    let mut jobs: Vec<((usize, usize), bool)> = Vec::new();
    for &(i, j) in &edges {
        let is_null = true_edges.map_or(true, |te| !te.contains(&(i, j)));
        if scope_allows(scope, is_null) && jobs.len() < cap {
            jobs.push(((i, j), is_null));
        }
    }
    let tested: Vec<TestedVariable> = jobs
        .par_iter()
        .map(|&((i, j), is_null)| {
            let chain_cfg = cfg.sampler_config(child_seed(
                cfg.seed,
                &[tag(seed_path, 3), i as u64, j as u64],
            ));
            let out = run_graph_chain(&model, (i, j), &init, &chain_cfg)?;
            let t_obs = model.t_statistic(x, (i, j));
            let truth_e =
                if is_null { 0.0 } else { cfg.simulate.as_ref().map_or(f64::NAN, |s| s.rho) };
            tested_from(i, Some(j), is_null, truth_e, &out, t_obs, cfg.alternative, None, false)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DatasetAnalysis {
        lam,
        randomization_scale: scale,
        active: vec![],
        signs: vec![],
        per_node_active,
        tested,
        kept_screen,
    })
}

#[allow(clippy::too_many_arguments)]
fn tested_from(
    index: usize,
    partner: Option<usize>,
    is_null: bool,
    truth: f64,
    out: &SampleSet,
    t_obs: f64,
    alternative: Alternative,
    ci: Option<(f64, f64)>,
    ci_low_ess: bool,
) -> Result<TestedVariable> {
    let summary = summarize(index, &out.t_draws, t_obs, alternative, ci, None)?;
    Ok(TestedVariable {
        index,
        partner,
        is_null,
        truth,
        p_value: summary.p_value,
        t_obs,
        ci,
        ci_low_ess,
        n_effective: summary.n_effective_draws,
        mc_se: summary.mc_se,
        accept_data: out.accept_data,
        accept_coef: out.accept_coef,
        skipped_moves: out.skipped_moves,
    })
}

fn tag(seed_path: &[u64], purpose: u64) -> u64 {
    let mut t = purpose;
    for &s in seed_path {
        t = t.wrapping_mul(0x100000001b3).wrapping_add(s);
    }
    t
}

/// One simulation replication of the configured problem.
pub fn replication(cfg: &RunConfig, attempt: usize, scope: TestScope, compute_ci: bool) -> Result<RepOutcome> {
    let spec = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| MagicError::Config("simulation spec required".into()))?;
    let seed_path = [0x9Eu64, attempt as u64];
    let mut data_rng = ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[0xDA7A, attempt as u64]));
    let analysis = match cfg.problem {
        ProblemKind::Lasso => {
            let inst = sim::lasso_instance(
                spec.n,
                spec.p,
                spec.s,
                spec.snr,
                cfg.sigma2.sqrt(),
                &mut data_rng,
            );
            analyze_lasso(cfg, &inst.x, &inst.y, Some(&inst.beta_true), scope, compute_ci, true, &seed_path)?
        }
        ProblemKind::Logistic => {
            let inst = sim::logistic_instance(spec.n, spec.p, spec.s, spec.snr, &mut data_rng);
            analyze_logistic(
                cfg,
                &inst.x,
                &inst.y,
                Some(&inst.beta_true),
                scope,
                compute_ci,
                true,
                &seed_path,
            )?
        }
        ProblemKind::Graph => {
            let inst = sim::graph_instance(spec.n, spec.p, spec.rho, spec.edge_frac, &mut data_rng)?;
            analyze_graph(cfg, &inst.x, Some(&inst.true_edges), scope, true, &seed_path)?
        }
    };
    Ok(RepOutcome {
        attempt,
        kept: analysis.kept_screen,
        active_size: analysis.active.len().max(analysis.tested.len()),
        tested: analysis.tested,
    })
}

/// Runs replications in deterministic attempt order until `n_reps` pass the
/// screening filter (or the attempt budget is exhausted). Chains inside one
/// replication only run when the replication is kept, so screening rejects
/// are cheap.
pub fn run_replications(
    cfg: &RunConfig,
    scope: TestScope,
    compute_ci: bool,
) -> Result<(Vec<RepOutcome>, usize)> {
    let spec = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| MagicError::Config("simulation spec required".into()))?;
    let budget = spec.n_reps * spec.max_attempt_factor.max(1);
    let pool = make_pool(cfg.workers)?;
    let batch = (pool.current_num_threads() * 4).max(8);
    let mut outcomes: Vec<RepOutcome> = Vec::new();
    let mut next = 0usize;
    while outcomes.iter().filter(|o| o.kept).count() < spec.n_reps && next < budget {
        let end = (next + batch).min(budget);
        let mut chunk: Vec<RepOutcome> = pool.install(|| {
            (next..end)
                .into_par_iter()
                .map(|a| replication(cfg, a, scope, compute_ci))
                .collect::<Result<Vec<_>>>()
        })?;
        outcomes.append(&mut chunk);
        next = end;
    }
    // keep the first n_reps screened replications in attempt order
    let mut used = Vec::with_capacity(spec.n_reps);
    let mut attempts = next;
    for o in outcomes.into_iter() {
        if o.kept {
            attempts = o.attempt + 1;
            used.push(o);
            if used.len() == spec.n_reps {
                break;
            }
        }
    }
    if used.len() < spec.n_reps {
        attempts = next;
    }
    Ok((used, attempts))
}

/// Ensures the output directory exists.
fn prepare_out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = PathBuf::from(&cfg.out_dir);
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn variable_reports(tested: &[TestedVariable]) -> Vec<VariableReport> {
    tested
        .iter()
        .map(|t| VariableReport {
            index: t.index,
            p_value: t.p_value,
            t_obs: t.t_obs,
            ci_lower: t.ci.map(|c| c.0),
            ci_upper: t.ci.map(|c| c.1),
            ci_level: t.ci.map(|_| 0.0),
            ci_low_ess_warning: t.ci.map(|_| t.ci_low_ess),
            n_effective_draws: t.n_effective,
            mc_se: t.mc_se,
            accept_data: t.accept_data,
            accept_coef: t.accept_coef,
        })
        .collect()
}

/// `magic infer`: selective p-values and intervals for one dataset.
pub fn cmd_infer(cfg: &RunConfig) -> Result<InferReport> {
    cfg.validate()?;
    if cfg.problem == ProblemKind::Graph {
        return Err(MagicError::Config(
            "use the graph-infer command for graph problems".into(),
        ));
    }
    let dir = prepare_out_dir(cfg)?;
    let (x, y) = load_or_simulate_xy(cfg)?;
    let pool = make_pool(cfg.workers)?;
    let analysis = pool.install(|| match cfg.problem {
        ProblemKind::Lasso => {
            analyze_lasso(cfg, &x, &y, None, TestScope::All, cfg.compute_ci, false, &[0xC0])
        }
        ProblemKind::Logistic => {
            analyze_logistic(cfg, &x, &y, None, TestScope::All, cfg.compute_ci, false, &[0xC0])
        }
        ProblemKind::Graph => unreachable!(),
    })?;

    let mut results = variable_reports(&analysis.tested);
    for r in results.iter_mut() {
        if r.ci_lower.is_some() {
            r.ci_level = Some(cfg.ci_level);
        } else {
            r.ci_level = None;
        }
    }
    let note = if analysis.active.is_empty() {
        Some("no selection, nothing to infer".to_string())
    } else {
        None
    };
    let report = InferReport {
        command: "infer".into(),
        config: cfg.clone(),
        note,
        selection: Some(SelectionSummary {
            n: x.nrows(),
            p: x.ncols(),
            lam: analysis.lam,
            ridge_eps: cfg.ridge_eps_for(cfg.problem),
            randomization_scale: analysis.randomization_scale,
            active: analysis.active.clone(),
            signs: analysis.signs.clone(),
        }),
        results,
    };
    save_json(&dir.join("report.json"), &report)?;
    let pv_rows: Vec<Vec<f64>> = analysis
        .tested
        .iter()
        .map(|t| {
            vec![t.index as f64, t.p_value, t.t_obs, t.mc_se, t.n_effective as f64]
        })
        .collect();
    data::write_rows(&dir.join("pvalues.csv"), &pv_rows)?;
    let ci_rows: Vec<Vec<f64>> = analysis
        .tested
        .iter()
        .filter_map(|t| {
            t.ci.map(|(lo, hi)| {
                vec![t.index as f64, lo, hi, cfg.ci_level, f64::from(u8::from(t.ci_low_ess))]
            })
        })
        .collect();
    data::write_rows(&dir.join("intervals.csv"), &ci_rows)?;
    Ok(report)
}

fn load_or_simulate_xy(cfg: &RunConfig) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if let Some(paths) = &cfg.data {
        let x = data::read_matrix(Path::new(&paths.design))?;
        let y_path = paths
            .response
            .as_ref()
            .ok_or_else(|| MagicError::Config("response path required".into()))?;
        let y = data::read_vector(Path::new(y_path))?;
        if cfg.problem == ProblemKind::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(MagicError::Data("logistic responses must be 0/1".into()));
        }
        Ok((x, y))
    } else {
        let spec = cfg.simulate.as_ref().expect("validated");
        let mut rng = ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[0xDA7A, 0]));
        match cfg.problem {
            ProblemKind::Lasso => {
                let inst = sim::lasso_instance(
                    spec.n,
                    spec.p,
                    spec.s,
                    spec.snr,
                    cfg.sigma2.sqrt(),
                    &mut rng,
                );
                Ok((inst.x, inst.y))
            }
            ProblemKind::Logistic => {
                let inst = sim::logistic_instance(spec.n, spec.p, spec.s, spec.snr, &mut rng);
                Ok((inst.x, inst.y))
            }
            ProblemKind::Graph => unreachable!(),
        }
    }
}

/// `magic graph-infer`: per-edge selective p-values for one data matrix.
pub fn cmd_graph_infer(cfg: &RunConfig) -> Result<GraphReport> {
    cfg.validate()?;
    if cfg.problem != ProblemKind::Graph {
        return Err(MagicError::Config("graph-infer requires problem = graph".into()));
    }
    let dir = prepare_out_dir(cfg)?;
    let x = if let Some(paths) = &cfg.data {
        data::read_matrix(Path::new(&paths.design))?
    } else {
        let spec = cfg.simulate.as_ref().expect("validated");
        let mut rng = ChaCha20Rng::seed_from_u64(child_seed(cfg.seed, &[0xDA7A, 0]));
        sim::graph_instance(spec.n, spec.p, spec.rho, spec.edge_frac, &mut rng)?.x
    };
    let pool = make_pool(cfg.workers)?;
    let analysis =
        pool.install(|| analyze_graph(cfg, &x, None, TestScope::All, false, &[0xC1]))?;
    let edges: Vec<GraphEdgeReport> = analysis
        .tested
        .iter()
        .map(|t| GraphEdgeReport {
            node_i: t.index,
            node_j: t.partner.unwrap_or(t.index),
            p_value: t.p_value,
            t_obs: t.t_obs,
            n_effective_draws: t.n_effective,
            mc_se: t.mc_se,
            accept_columns: t.accept_data,
            accept_coef: t.accept_coef,
            skipped_moves: t.skipped_moves,
        })
        .collect();
    let report = GraphReport {
        command: "graph-infer".into(),
        config: cfg.clone(),
        note: if edges.is_empty() {
            Some("no selection, nothing to infer".into())
        } else {
            None
        },
        lam: analysis.lam,
        randomization_scale: analysis.randomization_scale,
        per_node_active: analysis.per_node_active.clone(),
        edges,
    };
    save_json(&dir.join("report.json"), &report)?;
    let rows: Vec<Vec<f64>> = analysis
        .tested
        .iter()
        .map(|t| {
            vec![
                t.index as f64,
                t.partner.unwrap_or(t.index) as f64,
                t.p_value,
                t.t_obs,
                t.mc_se,
            ]
        })
        .collect();
    data::write_rows(&dir.join("pvalues.csv"), &rows)?;
    Ok(report)
}

/// `magic simulate-null`: replications of the configured problem, keeping
/// screened selections and pooling the null p-values.
pub fn cmd_simulate_null(cfg: &RunConfig) -> Result<SimNullReport> {
    cfg.validate()?;
    if cfg.simulate.is_none() {
        return Err(MagicError::Config("simulate-null requires a simulation spec".into()));
    }
    let dir = prepare_out_dir(cfg)?;
    let (used, attempts) = run_replications(cfg, TestScope::NullsOnly, false)?;
    let nulls: Vec<f64> = used
        .iter()
        .flat_map(|o| o.tested.iter().filter(|t| t.is_null).map(|t| t.p_value))
        .collect();
    let alts: Vec<f64> = used
        .iter()
        .flat_map(|o| o.tested.iter().filter(|t| !t.is_null).map(|t| t.p_value))
        .collect();
    let ks = if nulls.len() >= 20 { Some(ks_uniformity(&nulls)?) } else { None };
    let rejection = [0.05, 0.1, 0.2]
        .iter()
        .map(|&alpha| RejectionRate {
            alpha,
            rate: power_estimate(&nulls, alpha).unwrap_or(f64::NAN),
        })
        .collect();
    let mean_active = if used.is_empty() {
        0.0
    } else {
        used.iter().map(|o| o.active_size as f64).sum::<f64>() / used.len() as f64
    };
    let report = SimNullReport {
        command: "simulate-null".into(),
        config: cfg.clone(),
        attempts,
        kept: used.len(),
        n_null_pvalues: nulls.len(),
        n_alt_pvalues: alts.len(),
        ks_stat: ks.map(|k| k.0),
        ks_p: ks.map(|k| k.1),
        rejection,
        mean_active_size: mean_active,
    };
    save_json(&dir.join("report.json"), &report)?;
    let rows: Vec<Vec<f64>> = used
        .iter()
        .flat_map(|o| {
            o.tested.iter().map(move |t| {
                vec![
                    o.attempt as f64,
                    t.index as f64,
                    t.partner.unwrap_or(t.index) as f64,
                    f64::from(u8::from(t.is_null)),
                    t.p_value,
                ]
            })
        })
        .collect();
    data::write_rows(&dir.join("pvalues.csv"), &rows)?;
    write_ecdf_csv(&dir.join("ecdf.csv"), &nulls)?;
    Ok(report)
}

/// `magic simulate-power`: the logistic power study at the configured test
/// level, with alternative-coordinate chains only.
pub fn cmd_simulate_power(cfg: &RunConfig) -> Result<PowerReport> {
    cfg.validate()?;
    if cfg.problem != ProblemKind::Logistic {
        return Err(MagicError::Config("simulate-power requires problem = logistic".into()));
    }
    if cfg.simulate.is_none() {
        return Err(MagicError::Config("simulate-power requires a simulation spec".into()));
    }
    let dir = prepare_out_dir(cfg)?;
    let (used, attempts) = run_replications(cfg, TestScope::AlternativesOnly, false)?;
    let alts: Vec<f64> = used.iter().flat_map(|o| o.tested.iter().map(|t| t.p_value)).collect();
    let power = power_estimate(&alts, cfg.alpha)?;
    let report = PowerReport {
        command: "simulate-power".into(),
        config: cfg.clone(),
        attempts,
        kept: used.len(),
        selection_proportion: used.len() as f64 / attempts as f64,
        alpha: cfg.alpha,
        power,
        n_alternative_pvalues: alts.len(),
        baseline: Default::default(),
    };
    save_json(&dir.join("report.json"), &report)?;
    let rows: Vec<Vec<f64>> = used
        .iter()
        .flat_map(|o| {
            o.tested
                .iter()
                .map(move |t| vec![o.attempt as f64, t.index as f64, t.p_value])
        })
        .collect();
    data::write_rows(&dir.join("pvalues.csv"), &rows)?;
    Ok(report)
}
