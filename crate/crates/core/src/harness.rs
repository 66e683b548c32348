//! Scenario generation, user association, simulation orchestration, metrics
//! and persistence.
//!
//! Everything random flows from one seeded ChaCha stream, every map is
//! ordered, and floats are written in shortest round-trip form, so a fixed
//! configuration always exports byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::balancer::{
    balance_round, BalancerError, BalancerParams, HandoverEvent, LoadState, Policy, RadioContext,
};
use crate::dynamics::{mean, EpsilonMatrix, LinearModel, StepKind, Trajectory};
use crate::radio::{BaseStation, Position, RadioConstants, RadioMap, Scenario, User};
use crate::stability::{
    check_conservative_hetero, check_discrete_step, check_nonconservative_hetero,
    check_nonconservative_run, lyapunov_series, oscillation_bound, tail_supremum, OscillationBound,
    StabilityError, StabilityReport,
};
use crate::topology::{build_coverage_graph, laplacian, CoverageGraph, TopologyError};

/// Rounds run by the greedy baseline when the configuration does not say.
pub const GREEDY_DEFAULT_ROUNDS: usize = 60;

pub const HISTORY_FILE: &str = "history.csv";
pub const OMEGA_FILE: &str = "omega.csv";
pub const EVENTS_FILE: &str = "events.json";
pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.json";
pub const EXPORT_FILES: [&str; 5] = [
    HISTORY_FILE,
    OMEGA_FILE,
    EVENTS_FILE,
    REPORT_FILE,
    TRACE_FILE,
];

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("user {user} cannot be served by any base station")]
    UncoverableUser { user: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} already exists (pass --force to overwrite)")]
    WouldOverwrite { path: PathBuf },
    #[error("malformed {what}: {message}")]
    Parse { what: String, message: String },
    #[error(transparent)]
    Balancer(#[from] BalancerError),
    #[error(transparent)]
    Stability(#[from] StabilityError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    fn parse(what: &str, message: impl ToString) -> Self {
        HarnessError::Parse {
            what: what.to_owned(),
            message: message.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutConfig {
    pub rows: usize,
    pub cols: usize,
    pub spacing_m: f64,
    /// Users are dropped over the grid's bounding box grown by this margin.
    pub user_margin_m: f64,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            rows: 4,
            cols: 4,
            spacing_m: 500.0,
            user_margin_m: 250.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StationConfig {
    pub tx_power_dbm: f64,
    pub antenna_gain_dbi: f64,
    pub total_prbs: u32,
    pub coverage_radius_m: f64,
}

impl Default for StationConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 46.0,
            antenna_gain_dbi: 14.0,
            total_prbs: 50,
            coverage_radius_m: 300.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UserConfig {
    pub rx_gain_dbi: f64,
}

impl Default for UserConfig {
    fn default() -> Self {
        Self { rx_gain_dbi: 5.0 }
    }
}

/// Complete description of one simulation; the TOML form mirrors the field
/// names and rejects unknown keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub user_count: usize,
    pub user_demand_bps: f64,
    /// Round cap; defaults to `balancer.max_rounds`, or 60 for the greedy
    /// baseline.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rounds: Option<usize>,
    pub layout: LayoutConfig,
    pub station: StationConfig,
    pub user: UserConfig,
    pub radio: RadioConstants,
    pub balancer: BalancerParams,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            user_count: 300,
            user_demand_bps: 500e3,
            rounds: None,
            layout: LayoutConfig::default(),
            station: StationConfig::default(),
            user: UserConfig::default(),
            radio: RadioConstants::default(),
            balancer: BalancerParams::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let config: Self = toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            HarnessError::Config(msg) => HarnessError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: &str| Err(HarnessError::Config(msg.to_owned()));
        if self.layout.rows == 0 || self.layout.cols == 0 {
            return fail("layout.rows and layout.cols must be positive");
        }
        if !(self.layout.spacing_m > 0.0) || !(self.layout.user_margin_m >= 0.0) {
            return fail("layout.spacing_m must be positive and layout.user_margin_m non-negative");
        }
        if self.user_count == 0 {
            return fail("user_count must be positive");
        }
        if !(self.user_demand_bps > 0.0) {
            return fail("user_demand_bps must be positive");
        }
        if self.station.total_prbs == 0 || !(self.station.coverage_radius_m > 0.0) {
            return fail("station.total_prbs and station.coverage_radius_m must be positive");
        }
        if self.rounds == Some(0) {
            return fail("rounds must be positive");
        }
        self.balancer
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn station_count(&self) -> usize {
        self.layout.rows * self.layout.cols
    }

    pub fn effective_rounds(&self) -> usize {
        self.rounds.unwrap_or(match self.balancer.policy {
            Policy::Greedy => GREEDY_DEFAULT_ROUNDS,
            _ => self.balancer.max_rounds,
        })
    }
}

/// Stations on a row-major grid, users uniform over the padded bounding box.
pub fn generate_scenario(config: &ScenarioConfig) -> Scenario {
    let layout = &config.layout;
    let stations = (0..layout.rows)
        .flat_map(|r| (0..layout.cols).map(move |c| (r, c)))
        .enumerate()
        .map(|(id, (r, c))| BaseStation {
            id,
            position: Position::new(c as f64 * layout.spacing_m, r as f64 * layout.spacing_m),
            tx_power_dbm: config.station.tx_power_dbm,
            antenna_gain_dbi: config.station.antenna_gain_dbi,
            total_prbs: config.station.total_prbs,
            coverage_radius_m: config.station.coverage_radius_m,
            cio_db: BTreeMap::new(),
        })
        .collect();

    let m = layout.user_margin_m;
    let x_max = (layout.cols - 1) as f64 * layout.spacing_m + m;
    let y_max = (layout.rows - 1) as f64 * layout.spacing_m + m;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let users = (0..config.user_count)
        .map(|id| {
            let x = sample(&mut rng, -m, x_max);
            let y = sample(&mut rng, -m, y_max);
            User {
                id,
                position: Position::new(x, y),
                demand_bps: config.user_demand_bps,
                rx_gain_dbi: config.user.rx_gain_dbi,
            }
        })
        .collect();

    Scenario {
        stations,
        users,
        constants: config.radio.clone(),
    }
}

fn sample(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Attaches every user to its strongest station (ties to the lower id).
pub fn associate_users(scenario: &Scenario, map: &RadioMap) -> Result<LoadState, HarnessError> {
    let serving = (0..scenario.users.len())
        .map(|u| {
            (0..scenario.stations.len())
                .filter(|&i| map.prbs[u][i].is_some())
                .fold(None, |best: Option<usize>, i| match best {
                    Some(b) if map.rsrp_dbm[u][b] >= map.rsrp_dbm[u][i] => Some(b),
                    _ => Some(i),
                })
                .ok_or(HarnessError::UncoverableUser { user: u })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LoadState::new(serving, &RadioContext::new(scenario, map))?)
}

/// Per-round summary of a load vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean: f64,
    /// Population standard deviation; `sd² · N` is the squared error norm.
    pub sd: f64,
    pub handovers: usize,
}

pub fn load_mean_sd(loads: &[f64]) -> (f64, f64) {
    let m = mean(loads);
    let var = loads.iter().map(|x| (x - m).powi(2)).sum::<f64>() / loads.len() as f64;
    (m, var.sqrt())
}

/// Everything a run produced. `load_history[k]` is the state at the start of
/// round `k`; `omega_history[k]` and `eps_history[k]` describe the transfer
/// that round performed, ending in the next row (or `final_loads`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub params: BalancerParams,
    pub adjacency: Vec<Vec<u8>>,
    pub load_history: Vec<Vec<f64>>,
    pub final_loads: Vec<f64>,
    pub omega_history: Vec<Vec<f64>>,
    /// Realized per-pair rates; `None` where the round's transfers admit no
    /// rate in `[0, 1)` (e.g. a transfer between equally loaded stations).
    pub eps_history: Vec<Option<EpsilonMatrix>>,
    pub events: Vec<HandoverEvent>,
    pub metrics: Vec<RoundMetrics>,
    pub stability: Vec<StabilityReport>,
    /// The run ended on a round without handovers (never set for the greedy
    /// baseline, which always runs to the round cap).
    pub quiesced: bool,
    pub notes: Vec<String>,
}

impl SimulationTrace {
    pub fn rounds(&self) -> usize {
        self.load_history.len()
    }

    pub fn station_count(&self) -> usize {
        self.final_loads.len()
    }

    pub fn graph(&self) -> Result<CoverageGraph, HarnessError> {
        Ok(CoverageGraph::from_adjacency(&self.adjacency)?)
    }

    pub fn initial_loads(&self) -> &[f64] {
        self.load_history.first().unwrap_or(&self.final_loads)
    }

    pub fn final_metrics(&self) -> (f64, f64) {
        load_mean_sd(&self.final_loads)
    }

    pub fn total_handovers(&self) -> usize {
        self.events.len()
    }

    /// The run as a discrete trajectory: all start-of-round states followed
    /// by the final state.
    pub fn trajectory(&self) -> Trajectory {
        let mut states = self.load_history.clone();
        states.push(self.final_loads.clone());
        Trajectory {
            states,
            omegas: self.omega_history.clone(),
            kind: StepKind::DiscreteNonconservative,
            blew_up: false,
        }
    }

    /// Realized rates for every round, if all of them are admissible.
    pub fn complete_eps_history(&self) -> Option<Vec<EpsilonMatrix>> {
        self.eps_history.iter().cloned().collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::parse("trace", e))
    }
}

/// Per-round metrics recomputed from the load history and event log.
pub fn metrics(trace: &SimulationTrace) -> Vec<RoundMetrics> {
    let mut per_round = vec![0usize; trace.rounds()];
    for e in &trace.events {
        if let Some(c) = per_round.get_mut(e.round) {
            *c += 1;
        }
    }
    trace
        .load_history
        .iter()
        .enumerate()
        .map(|(round, loads)| {
            let (mean, sd) = load_mean_sd(loads);
            RoundMetrics {
                round,
                mean,
                sd,
                handovers: per_round[round],
            }
        })
        .collect()
}

/// `ω_i = Σ_j (ε_ij − ε_ji)/2 · (ρ_j − ρ_i)`, which for realized transfers is
/// half the non-conserved amount of each pair, credited to both endpoints.
fn realized_omega(n: usize, events: &[HandoverEvent]) -> Vec<f64> {
    let mut omega = vec![0.0; n];
    for e in events {
        let residual = (e.request.load_in - e.request.load_out) / 2.0;
        omega[e.request.source] += residual;
        omega[e.request.target] += residual;
    }
    omega
}

/// Rates `ε_ij` such that `ρ_i + Σ_j ε_ij (ρ_j − ρ_i)` reproduces the round.
fn realized_eps(loads: &[f64], events: &[HandoverEvent]) -> Option<EpsilonMatrix> {
    let n = loads.len();
    let mut received = BTreeMap::<(usize, usize), f64>::new();
    for e in events {
        let r = &e.request;
        *received.entry((r.target, r.source)).or_default() += r.load_in;
        *received.entry((r.source, r.target)).or_default() -= r.load_out;
    }
    let mut values = nalgebra::DMatrix::zeros(n, n);
    for (&(i, j), &amount) in &received {
        if amount == 0.0 {
            continue;
        }
        let gap = loads[j] - loads[i];
        if gap == 0.0 {
            return None;
        }
        values[(i, j)] = amount / gap;
    }
    EpsilonMatrix::new(values).ok()
}

/// Runs up to `rounds` balancing rounds from the max-RSRP attachment.
pub fn run_simulation(
    scenario: &Scenario,
    params: &BalancerParams,
    rounds: usize,
) -> Result<SimulationTrace, HarnessError> {
    params.validate()?;
    let graph = build_coverage_graph(&scenario.positions(), &scenario.radii())?;
    let map = scenario.radio_map();
    let ctx = RadioContext::new(scenario, &map);
    let mut state = associate_users(scenario, &map)?;
    let n = state.n();

    let mut trace = SimulationTrace {
        params: params.clone(),
        adjacency: graph.adjacency_rows(),
        load_history: Vec::new(),
        final_loads: Vec::new(),
        omega_history: Vec::new(),
        eps_history: Vec::new(),
        events: Vec::new(),
        metrics: Vec::new(),
        stability: Vec::new(),
        quiesced: false,
        notes: Vec::new(),
    };

    for round in 0..rounds {
        let loads = state.loads();
        let (next, events) = balance_round(&state, &graph, params, &ctx, round);
        let (mean, sd) = load_mean_sd(&loads);
        trace.metrics.push(RoundMetrics {
            round,
            mean,
            sd,
            handovers: events.len(),
        });
        trace.omega_history.push(realized_omega(n, &events));
        trace.eps_history.push(realized_eps(&loads, &events));
        trace.load_history.push(loads);
        // the greedy baseline has no quiescence rule: its offsets keep
        // integrating through rounds without handovers
        let quiet = events.is_empty() && params.policy != Policy::Greedy;
        trace.events.extend(events);
        state = next;
        if quiet {
            trace.quiesced = true;
            break;
        }
    }
    trace.final_loads = state.loads();
    trace.stability = analyze_trace(&trace, &graph)?;
    Ok(trace)
}

/// Discrete-step check at the configured accommodation factor plus, when
/// every round's rates are admissible, the bounded-oscillation report.
fn analyze_trace(
    trace: &SimulationTrace,
    graph: &CoverageGraph,
) -> Result<Vec<StabilityReport>, HarnessError> {
    let mut reports = vec![check_discrete_step(
        &laplacian(graph),
        trace.params.accommodation_factor,
    )?];
    match trace.complete_eps_history() {
        Some(eps) => {
            let traj = trace.trajectory();
            let tail_from = traj.states.len() / 2;
            reports.push(check_nonconservative_run(&traj, &eps, graph, tail_from)?);
        }
        None => log::info!("skipping oscillation analysis: some rounds have no admissible rates"),
    }
    Ok(reports)
}

/// Oscillation bound of a recorded run.
pub fn trace_bound(trace: &SimulationTrace) -> Result<OscillationBound, HarnessError> {
    let eps = trace.complete_eps_history().ok_or_else(|| {
        HarnessError::parse("trace", "some rounds have no admissible transfer rates")
    })?;
    Ok(oscillation_bound(
        &trace.trajectory(),
        &eps,
        &trace.graph()?,
    )?)
}

/// A bare discrete run: everything the oscillation bound needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteTrace {
    pub adjacency: Vec<Vec<u8>>,
    pub states: Vec<Vec<f64>>,
    /// Empty for conservative runs.
    #[serde(default)]
    pub omegas: Vec<Vec<f64>>,
    pub eps_history: Vec<EpsilonMatrix>,
}

impl DiscreteTrace {
    pub fn from_run(
        graph: &CoverageGraph,
        trajectory: &Trajectory,
        eps_history: &[EpsilonMatrix],
    ) -> Self {
        Self {
            adjacency: graph.adjacency_rows(),
            states: trajectory.states.clone(),
            omegas: trajectory.omegas.clone(),
            eps_history: eps_history.to_vec(),
        }
    }

    pub fn trajectory(&self) -> Trajectory {
        Trajectory {
            states: self.states.clone(),
            omegas: self.omegas.clone(),
            kind: if self.omegas.is_empty() {
                StepKind::DiscreteConservative
            } else {
                StepKind::DiscreteNonconservative
            },
            blew_up: false,
        }
    }
}

/// Inputs accepted by [`bound_summary`]: a simulation trace, a bare discrete
/// run, or precomputed `α`/`γ̃` series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BoundInput {
    Simulation(Box<SimulationTrace>),
    Discrete(DiscreteTrace),
    Series {
        alpha_series: Vec<f64>,
        gamma_series: Vec<f64>,
    },
}

impl BoundInput {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|_| {
            HarnessError::parse(
                "bound input",
                "expected a simulation trace, a discrete trace or alpha/gamma series",
            )
        })
    }
}

/// Bound next to the empirical tail of `V(e(k)) = ‖e(k)‖²` it should cap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSummary {
    pub gamma_max: f64,
    pub alpha_max: f64,
    pub v_tilde: Option<f64>,
    /// `sup V` over the second half of the recorded states, when states exist.
    pub tail_sup_v: Option<f64>,
    pub notes: Vec<String>,
}

pub fn bound_summary(input: &BoundInput) -> Result<BoundSummary, HarnessError> {
    let (bound, states) = match input {
        BoundInput::Simulation(trace) => (trace_bound(trace)?, Some(trace.trajectory())),
        BoundInput::Discrete(run) => {
            let graph = CoverageGraph::from_adjacency(&run.adjacency)?;
            let traj = run.trajectory();
            (
                oscillation_bound(&traj, &run.eps_history, &graph)?,
                Some(traj),
            )
        }
        BoundInput::Series {
            alpha_series,
            gamma_series,
        } => (
            OscillationBound::from_series(alpha_series.clone(), gamma_series.clone()),
            None,
        ),
    };
    let tail_sup_v = states.map(|t| {
        let v = lyapunov_series(&t);
        tail_supremum(&v, v.len() / 2)
    });
    let mut notes = Vec::new();
    if bound.alpha_max == 0.0 {
        notes.push("all transfers conservative: the bound collapses to 0".to_owned());
    }
    if bound.v_tilde.is_none() {
        notes.push(format!(
            "bound undefined: contraction factor {} is not below 1",
            bound.gamma_max
        ));
    }
    Ok(BoundSummary {
        gamma_max: bound.gamma_max,
        alpha_max: bound.alpha_max,
        v_tilde: bound.v_tilde,
        tail_sup_v,
        notes,
    })
}

/// Linearized model given directly by its slopes, for offline analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub adjacency: Vec<Vec<u8>>,
    /// `f_i'(ρ̄)` per node.
    pub f_prime: Vec<f64>,
    /// `h_ij`, read on edges only.
    pub h: Vec<Vec<f64>>,
    /// Optional discrete step to check against the Laplacian.
    #[serde(default)]
    pub step: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub model: ModelSpec,
}

impl ModelFile {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        toml::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

/// Continuous-time verdict for the model (conservative check when the
/// coupling slopes are symmetric, non-conservative otherwise) plus the
/// discrete-step check when a step is given.
pub fn analyze_model(spec: &ModelSpec) -> Result<Vec<StabilityReport>, HarnessError> {
    let graph = CoverageGraph::from_adjacency(&spec.adjacency)?;
    let n = graph.n();
    if spec.f_prime.len() != n || spec.h.len() != n || spec.h.iter().any(|r| r.len() != n) {
        return Err(HarnessError::Config(format!(
            "model dimensions disagree with the {n}-node adjacency"
        )));
    }
    let h = nalgebra::DMatrix::from_fn(n, n, |i, j| spec.h[i][j]);
    let model = LinearModel::from_parts(&graph, &spec.f_prime, &h)
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let continuous = match check_conservative_hetero(&model) {
        Ok(report) => report,
        Err(StabilityError::RegimeMismatch(_)) => check_nonconservative_hetero(&model)?,
        Err(e) => return Err(e.into()),
    };
    let mut reports = vec![continuous];
    if let Some(step) = spec.step {
        reports.push(check_discrete_step(&laplacian(&graph), step)?);
    }
    Ok(reports)
}

/// Static analysis of a scenario: discrete-step check of its coverage graph
/// at the configured accommodation factor.
pub fn analyze_scenario(config: &ScenarioConfig) -> Result<Vec<StabilityReport>, HarnessError> {
    config.validate()?;
    let scenario = generate_scenario(config);
    let graph = build_coverage_graph(&scenario.positions(), &scenario.radii())?;
    Ok(vec![check_discrete_step(
        &laplacian(&graph),
        config.balancer.accommodation_factor,
    )?])
}

/// Convenience: generate, associate and run a configuration.
pub fn run_config(config: &ScenarioConfig) -> Result<SimulationTrace, HarnessError> {
    config.validate()?;
    let scenario = generate_scenario(config);
    run_simulation(&scenario, &config.balancer, config.effective_rounds())
}

fn history_header(n: usize) -> Vec<String> {
    let mut header = vec!["round".to_owned()];
    header.extend((0..n).map(|i| format!("bs_{i}")));
    header.extend(["mean", "sd", "handovers"].map(String::from));
    header
}

fn write_csv(rows: impl IntoIterator<Item = Vec<String>>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.write_record(&row).expect("in-memory csv write");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("csv is utf-8")
}

/// Load history plus metrics, one row per round.
pub fn history_csv(trace: &SimulationTrace) -> String {
    let header = history_header(trace.station_count());
    let rows = trace
        .load_history
        .iter()
        .zip(&trace.metrics)
        .map(|(loads, m)| {
            let mut row = vec![m.round.to_string()];
            row.extend(loads.iter().map(|x| x.to_string()));
            row.extend([
                m.mean.to_string(),
                m.sd.to_string(),
                m.handovers.to_string(),
            ]);
            row
        });
    write_csv(std::iter::once(header).chain(rows))
}

pub fn omega_csv(trace: &SimulationTrace) -> String {
    let mut header = vec!["round".to_owned()];
    header.extend((0..trace.station_count()).map(|i| format!("bs_{i}")));
    let rows = trace.omega_history.iter().enumerate().map(|(k, w)| {
        let mut row = vec![k.to_string()];
        row.extend(w.iter().map(|x| x.to_string()));
        row
    });
    write_csv(std::iter::once(header).chain(rows))
}

/// Inverse of [`history_csv`].
pub fn parse_history(text: &str) -> Result<(Vec<Vec<f64>>, Vec<RoundMetrics>), HarnessError> {
    let bad = |m: String| HarnessError::parse("history", m);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.len() < 4 || &header[0] != "round" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let n = header.len() - 4;
    if header.iter().collect::<Vec<_>>() != history_header(n) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut loads = Vec::new();
    let mut metrics = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let float = |k: usize| {
            record[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("row {}: column {k}: {e}", line + 1)))
        };
        let int = |k: usize| {
            record[k]
                .parse::<usize>()
                .map_err(|e| bad(format!("row {}: column {k}: {e}", line + 1)))
        };
        loads.push((1..=n).map(float).collect::<Result<Vec<_>, _>>()?);
        metrics.push(RoundMetrics {
            round: int(0)?,
            mean: float(n + 1)?,
            sd: float(n + 2)?,
            handovers: int(n + 3)?,
        });
    }
    Ok((loads, metrics))
}

/// Writes the five export files into `dir`, creating it if needed. Existing
/// files are only replaced when `force` is set.
pub fn export(
    trace: &SimulationTrace,
    dir: &Path,
    force: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    if !force {
        if let Some(existing) = EXPORT_FILES
            .iter()
            .map(|f| dir.join(f))
            .find(|p| p.exists())
        {
            return Err(HarnessError::WouldOverwrite { path: existing });
        }
    }
    let contents = [
        history_csv(trace),
        omega_csv(trace),
        serde_json::to_string_pretty(&trace.events).expect("events serialize"),
        serde_json::to_string_pretty(&trace.stability).expect("reports serialize"),
        trace.to_json(),
    ];
    EXPORT_FILES
        .iter()
        .zip(contents)
        .map(|(name, body)| {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| HarnessError::io(&path, e))?;
            Ok(path)
        })
        .collect()
}

pub fn load_trace(path: &Path) -> Result<SimulationTrace, HarnessError> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    SimulationTrace::from_json(&text)
}

/// Cross product of parameter axes run over a seed set.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub users: Vec<usize>,
    pub accommodation: Vec<f64>,
    pub policies: Vec<Policy>,
    pub seeds: Vec<u64>,
    /// Overload threshold per user count; counts not listed keep the base
    /// configuration's value.
    pub thresholds: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellKey {
    pub users: usize,
    pub accommodation: f64,
    pub policy: Policy,
}

impl CellKey {
    /// Directory-safe label, e.g. `u300_c0.25_alg1`.
    pub fn label(&self) -> String {
        format!("u{}_c{}_{}", self.users, self.accommodation, self.policy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub initial_mean: f64,
    pub initial_sd: f64,
    pub final_mean: f64,
    pub final_sd: f64,
    pub rounds: usize,
    pub handovers: usize,
    pub quiesced: bool,
}

impl RunSummary {
    pub fn of(seed: u64, trace: &SimulationTrace) -> Self {
        let (initial_mean, initial_sd) = load_mean_sd(trace.initial_loads());
        let (final_mean, final_sd) = trace.final_metrics();
        Self {
            seed,
            initial_mean,
            initial_sd,
            final_mean,
            final_sd,
            rounds: trace.rounds(),
            handovers: trace.total_handovers(),
            quiesced: trace.quiesced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub key: CellKey,
    pub rho_th: f64,
    pub runs: Vec<RunSummary>,
}

impl SweepCell {
    fn average(&self, f: impl Fn(&RunSummary) -> f64) -> f64 {
        self.runs.iter().map(f).sum::<f64>() / self.runs.len() as f64
    }

    pub fn mean_initial_load(&self) -> f64 {
        self.average(|r| r.initial_mean)
    }

    pub fn mean_final_sd(&self) -> f64 {
        self.average(|r| r.final_sd)
    }

    pub fn quiesced_runs(&self) -> usize {
        self.runs.iter().filter(|r| r.quiesced).count()
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.users.is_empty()
            || self.accommodation.is_empty()
            || self.policies.is_empty()
            || self.seeds.is_empty()
        {
            return Err(HarnessError::Config(
                "every sweep axis needs at least one value".into(),
            ));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &users in &self.users {
            for &accommodation in &self.accommodation {
                for &policy in &self.policies {
                    cells.push(CellKey {
                        users,
                        accommodation,
                        policy,
                    });
                }
            }
        }
        cells
    }

    pub fn config_for(&self, base: &ScenarioConfig, key: &CellKey, seed: u64) -> ScenarioConfig {
        let mut config = base.clone();
        config.seed = seed;
        config.user_count = key.users;
        config.balancer.accommodation_factor = key.accommodation;
        config.balancer.policy = key.policy;
        if let Some(&th) = self.thresholds.get(&key.users) {
            config.balancer.rho_th = th;
        }
        config
    }
}

/// Runs every (cell, seed) pair on a pool of `workers` threads. `on_run` sees
/// each finished trace (e.g. to export it) before it is reduced to a summary.
pub fn run_sweep<F>(
    base: &ScenarioConfig,
    spec: &SweepSpec,
    workers: usize,
    on_run: F,
) -> Result<Vec<SweepCell>, HarnessError>
where
    F: Fn(&CellKey, u64, &SimulationTrace) -> Result<(), HarnessError> + Sync,
{
    spec.validate()?;
    let jobs: Vec<(CellKey, u64)> = spec
        .cells()
        .into_iter()
        .flat_map(|key| spec.seeds.iter().map(move |&seed| (key, seed)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("cannot start worker pool: {e}")))?;
    let summaries: Vec<RunSummary> = pool.install(|| {
        jobs.par_iter()
            .map(|(key, seed)| {
                let config = spec.config_for(base, key, *seed);
                let trace = run_config(&config)?;
                on_run(key, *seed, &trace)?;
                Ok(RunSummary::of(*seed, &trace))
            })
            .collect::<Result<_, HarnessError>>()
    })?;

    let per_cell = spec.seeds.len();
    Ok(spec
        .cells()
        .into_iter()
        .zip(summaries.chunks(per_cell))
        .map(|(key, runs)| SweepCell {
            rho_th: spec.config_for(base, &key, 0).balancer.rho_th,
            key,
            runs: runs.to_vec(),
        })
        .collect())
}

/// Aggregate table: one row per cell with seed-averaged loads.
pub fn sweep_table_csv(cells: &[SweepCell]) -> String {
    let header = [
        "users",
        "accommodation",
        "policy",
        "rho_th",
        "seeds",
        "average_load",
        "final_sd",
        "quiesced",
    ]
    .map(String::from)
    .to_vec();
    let rows = cells.iter().map(|c| {
        vec![
            c.key.users.to_string(),
            c.key.accommodation.to_string(),
            c.key.policy.to_string(),
            c.rho_th.to_string(),
            c.runs.len().to_string(),
            c.mean_initial_load().to_string(),
            c.mean_final_sd().to_string(),
            c.quiesced_runs().to_string(),
        ]
    });
    write_csv(std::iter::once(header).chain(rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(users: usize, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            user_count: users,
            ..Default::default()
        }
    }

    #[test]
    fn default_grid_topology() {
        let s = generate_scenario(&ScenarioConfig::default());
        assert_eq!(s.stations.len(), 16);
        let g = build_coverage_graph(&s.positions(), &s.radii()).unwrap();
        assert_eq!(g.edge_count(), 24);
        assert_eq!(s.stations[5].position, Position::new(500.0, 500.0));
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate_scenario(&small(50, 9));
        let b = generate_scenario(&small(50, 9));
        let c = generate_scenario(&small(50, 10));
        assert_eq!(a, b);
        assert_ne!(a.users, c.users);
        assert_eq!(a.stations, c.stations);
        for u in &a.users {
            assert!((-250.0..=1750.0).contains(&u.position.x));
            assert!((-250.0..=1750.0).contains(&u.position.y));
        }
    }

    #[test]
    fn association_rules() {
        let mut s = generate_scenario(&small(3, 1));
        s.users[0].position = s.stations[6].position;
        s.users[1].position = Position::new(250.0, 0.0); // between stations 0 and 1
        let map = s.radio_map();
        let state = associate_users(&s, &map).unwrap();
        assert_eq!(state.serving[0], 6);
        assert_eq!(state.serving[1], 0);
        let total: u64 = (0..3)
            .map(|u| u64::from(map.prbs[u][state.serving[u]].unwrap()))
            .sum();
        assert_eq!(state.prbs_used.iter().sum::<u64>(), total);
    }

    #[test]
    fn metrics_examples() {
        assert_eq!(load_mean_sd(&[0.5, 0.5]), (0.5, 0.0));
        let (m, sd) = load_mean_sd(&[0.8, 0.2]);
        assert_abs_diff_eq!(m, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sd, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn no_overload_means_flat_history() {
        let mut config = small(100, 3);
        config.balancer.rho_th = 1.0;
        let trace = run_config(&config).unwrap();
        assert!(trace.events.is_empty());
        assert!(trace.quiesced);
        assert_eq!(trace.rounds(), 1);
        assert_eq!(trace.final_loads, trace.load_history[0]);
    }

    #[test]
    fn trace_bookkeeping() {
        let trace = run_config(&small(300, 4)).unwrap();
        assert_eq!(trace.metrics, metrics(&trace));
        assert_eq!(trace.omega_history.len(), trace.rounds());
        assert_eq!(trace.eps_history.len(), trace.rounds());
        let states = trace.trajectory().states;
        for k in 0..trace.rounds() {
            let drift = mean(&states[k + 1]) - mean(&states[k]);
            let deltas: f64 = trace
                .events
                .iter()
                .filter(|e| e.round == k)
                .map(|e| e.delta_source + e.delta_target)
                .sum();
            assert_abs_diff_eq!(drift, deltas / 16.0, epsilon = 1e-12);
            assert_abs_diff_eq!(drift, mean(&trace.omega_history[k]), epsilon = 1e-12);
        }
    }

    #[test]
    fn realized_rates_reproduce_the_round() {
        let trace = run_config(&small(300, 5)).unwrap();
        let graph = trace.graph().unwrap();
        let states = trace.trajectory().states;
        for (k, eps) in trace.eps_history.iter().enumerate() {
            let Some(eps) = eps else { continue };
            let (next, omega) = crate::dynamics::step_nonconservative(&states[k], eps, &graph);
            for i in 0..16 {
                assert_abs_diff_eq!(next[i], states[k + 1][i], epsilon = 1e-12);
                assert_abs_diff_eq!(omega[i], trace.omega_history[k][i], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn history_round_trip_and_header_only() {
        let trace = run_config(&small(200, 6)).unwrap();
        let (loads, m) = parse_history(&history_csv(&trace)).unwrap();
        assert_eq!(loads, trace.load_history);
        assert_eq!(m, trace.metrics);

        let mut empty = trace.clone();
        empty.load_history.clear();
        empty.metrics.clear();
        empty.omega_history.clear();
        assert_eq!(history_csv(&empty).lines().count(), 1);
        assert_eq!(omega_csv(&empty).lines().count(), 1);
    }

    #[test]
    fn config_rejects_unknown_keys() {
        assert!(ScenarioConfig::from_toml_str("user_count = 10\nbogus = 1\n").is_err());
        let err = ScenarioConfig::from_toml_str("[balancer]\npolicy = \"alg9\"\n").unwrap_err();
        assert!(err.to_string().contains("line"), "{err}");
        let c = ScenarioConfig::from_toml_str("user_count = 10\n[balancer]\npolicy = \"greedy\"\n")
            .unwrap();
        assert_eq!(c.effective_rounds(), GREEDY_DEFAULT_ROUNDS);
        let back = ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn export_refuses_overwrite() {
        let dir = tempfile::tempdir().unwrap();
        let trace = run_config(&small(100, 7)).unwrap();
        export(&trace, dir.path(), false).unwrap();
        assert!(matches!(
            export(&trace, dir.path(), false),
            Err(HarnessError::WouldOverwrite { .. })
        ));
        export(&trace, dir.path(), true).unwrap();
        assert_eq!(load_trace(&dir.path().join(TRACE_FILE)).unwrap(), trace);
    }
}
