//! Handover-based load balancing.
//!
//! One balancing round works on the loads at the start of the round:
//!
//! 1. every station gets a signed accommodation budget, negative when it
//!    sits above its neighborhood and must shed load, positive when it can
//!    absorb, with magnitude `c · Σ_j a_ij |ρ_j - ρ_i|`;
//! 2. overloaded stations with a negative budget build ranked request lists
//!    of their users toward each under-threshold neighbor with a positive
//!    budget;
//! 3. targets accept, in rank order, the first request whose load still fits
//!    their remaining budget. Lists, loads and budgets are refreshed after
//!    every accept and a user moves at most once per round.
//!
//! Afterwards the cell individual offsets are raised just enough that every
//! executed handover satisfies the A3 entry condition.
//!
//! The greedy baseline skips budgets and thresholds entirely and steers load
//! by stepping offsets toward the less loaded side of every pair, which is
//! what makes it oscillate.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::{RadioMap, Scenario};
use crate::topology::CoverageGraph;

/// Added on top of the computed requirement so the strict A3 inequality holds.
pub const CIO_MARGIN_DB: f64 = 0.001;

/// Loads are ratios of small integers; comparisons between sums of them use
/// this slack to stay clear of rounding noise.
pub const LOAD_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BalancerError {
    #[error("invalid balancer parameter: {0}")]
    InvalidParams(String),
    #[error("user {user} has no serving base station")]
    UncoverableUser { user: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    /// Smallest `|ρ_{u,source} - ρ_{u,target}|` first.
    Alg1,
    /// Ranked by the user's load at the source.
    Alg2,
    /// Ranked by the user's load at the target.
    Alg3,
    /// Load-difference-driven CIO, no accommodation.
    Greedy,
}

impl Policy {
    pub const ALL: [Policy; 4] = [Policy::Alg1, Policy::Alg2, Policy::Alg3, Policy::Greedy];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Alg1 => "alg1",
            Policy::Alg2 => "alg2",
            Policy::Alg3 => "alg3",
            Policy::Greedy => "greedy",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown policy `{s}` (expected alg1, alg2, alg3 or greedy)"))
    }
}

impl std::fmt::Display for Policy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankOrder {
    Ascending,
    Descending,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BalancerParams {
    pub policy: Policy,
    /// Overload threshold `ρ_th`.
    pub rho_th: f64,
    /// `c` in `|η_i| ≤ c · Σ_j a_ij |ρ_j - ρ_i|`.
    pub accommodation_factor: f64,
    /// Round cap `k_th`.
    pub max_rounds: usize,
    pub alg2_order: RankOrder,
    pub alg3_order: RankOrder,
    /// Greedy baseline: CIO change per round, in dB.
    pub greedy_cio_step_db: f64,
    /// Greedy baseline: CIO magnitude cap in dB.
    pub greedy_cio_limit_db: f64,
}

impl Default for BalancerParams {
    fn default() -> Self {
        Self {
            policy: Policy::Alg1,
            rho_th: 0.6,
            accommodation_factor: 0.25,
            max_rounds: 100,
            alg2_order: RankOrder::Descending,
            alg3_order: RankOrder::Ascending,
            greedy_cio_step_db: 1.5,
            greedy_cio_limit_db: 15.0,
        }
    }
}

impl BalancerParams {
    pub fn validate(&self) -> Result<(), BalancerError> {
        if !(self.rho_th > 0.0 && self.rho_th <= 1.0) {
            return Err(BalancerError::InvalidParams(format!(
                "rho_th must lie in (0, 1], got {}",
                self.rho_th
            )));
        }
        if !(self.accommodation_factor > 0.0 && self.accommodation_factor <= 1.0) {
            return Err(BalancerError::InvalidParams(format!(
                "accommodation_factor must lie in (0, 1], got {}",
                self.accommodation_factor
            )));
        }
        if self.max_rounds == 0 {
            return Err(BalancerError::InvalidParams(
                "max_rounds must be at least 1".into(),
            ));
        }
        if !(self.greedy_cio_step_db >= 0.0) || !(self.greedy_cio_limit_db >= 0.0) {
            return Err(BalancerError::InvalidParams(
                "greedy CIO step and limit must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Offsets `θ_ij` keyed by `(target i, serving j)`, in dB.
pub type CioMap = BTreeMap<(usize, usize), f64>;

pub fn cio(map: &CioMap, target: usize, serving: usize) -> f64 {
    map.get(&(target, serving)).copied().unwrap_or(0.0)
}

/// Read-only radio view shared by all rounds of a simulation.
#[derive(Debug, Clone, Copy)]
pub struct RadioContext<'a> {
    pub scenario: &'a Scenario,
    pub map: &'a RadioMap,
}

impl<'a> RadioContext<'a> {
    pub fn new(scenario: &'a Scenario, map: &'a RadioMap) -> Self {
        Self { scenario, map }
    }

    pub fn total_prbs(&self, bs: usize) -> u32 {
        self.scenario.stations[bs].total_prbs
    }

    /// `ρ_{u,i}`, `None` when the user cannot be served by `bs`.
    pub fn load_share(&self, user: usize, bs: usize) -> Option<f64> {
        self.map.load_share(user, bs, self.total_prbs(bs))
    }

    pub fn rsrp(&self, user: usize, bs: usize) -> f64 {
        self.map.rsrp_dbm[user][bs]
    }

    pub fn hysteresis_db(&self) -> f64 {
        self.scenario.constants.hysteresis_db
    }
}

/// Attachments, PRB usage and offsets. Loads are derived from integer PRB
/// counts so they carry no accumulated rounding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadState {
    /// Serving station of every user.
    pub serving: Vec<usize>,
    pub prbs_used: Vec<u64>,
    pub total_prbs: Vec<u32>,
    pub cio: CioMap,
}

impl LoadState {
    pub fn new(serving: Vec<usize>, ctx: &RadioContext<'_>) -> Result<Self, BalancerError> {
        let n = ctx.scenario.stations.len();
        let mut prbs_used = vec![0u64; n];
        for (u, &bs) in serving.iter().enumerate() {
            let p = ctx.map.prbs[u][bs].ok_or(BalancerError::UncoverableUser { user: u })?;
            prbs_used[bs] += u64::from(p);
        }
        let mut cio = CioMap::new();
        for bs in &ctx.scenario.stations {
            for (&neighbor, &offset) in &bs.cio_db {
                cio.insert((bs.id, neighbor), offset);
            }
        }
        Ok(Self {
            serving,
            prbs_used,
            total_prbs: ctx.scenario.total_prbs(),
            cio,
        })
    }

    pub fn n(&self) -> usize {
        self.prbs_used.len()
    }

    pub fn load(&self, bs: usize) -> f64 {
        self.prbs_used[bs] as f64 / f64::from(self.total_prbs[bs])
    }

    pub fn loads(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.load(i)).collect()
    }

    pub fn users_of(&self, bs: usize) -> impl Iterator<Item = usize> + '_ {
        self.serving
            .iter()
            .enumerate()
            .filter_map(move |(u, &s)| (s == bs).then_some(u))
    }

    fn move_user(&mut self, user: usize, target: usize, ctx: &RadioContext<'_>) {
        let source = self.serving[user];
        let out = ctx.map.prbs[user][source].expect("served user is reachable");
        let inc = ctx.map.prbs[user][target].expect("target checked reachable");
        self.prbs_used[source] -= u64::from(out);
        self.prbs_used[target] += u64::from(inc);
        self.serving[user] = target;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverRequest {
    pub user: usize,
    pub source: usize,
    pub target: usize,
    pub load_out: f64,
    pub load_in: f64,
    pub rank_key: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandoverEvent {
    pub round: usize,
    pub request: HandoverRequest,
    pub delta_source: f64,
    pub delta_target: f64,
}

impl HandoverEvent {
    fn new(round: usize, request: HandoverRequest) -> Self {
        Self {
            round,
            delta_source: -request.load_out,
            delta_target: request.load_in,
            request,
        }
    }
}

/// Signed accommodation budget of station `i`: magnitude
/// `c · Σ_j a_ij |ρ_j - ρ_i|`, sign of `Σ_j a_ij (ρ_j - ρ_i)`.
pub fn accommodation(
    i: usize,
    loads: &[f64],
    graph: &CoverageGraph,
    params: &BalancerParams,
) -> f64 {
    let (signed, magnitude) = graph
        .neighbors(i)
        .map(|j| loads[j] - loads[i])
        .fold((0.0, 0.0), |(s, m), d| (s + d, m + d.abs()));
    if signed == 0.0 {
        return 0.0;
    }
    signed.signum() * params.accommodation_factor * magnitude
}

/// A3 entry condition `M_target + θ > Hys + M_serving`.
pub fn a3_trigger(m_target: f64, m_serving: f64, theta: f64, hys: f64) -> bool {
    m_target + theta > hys + m_serving
}

fn rank_key(policy: Policy, load_out: f64, load_in: f64) -> f64 {
    match policy {
        Policy::Alg1 => (load_out - load_in).abs(),
        Policy::Alg2 => load_out,
        Policy::Alg3 | Policy::Greedy => load_in,
    }
}

fn rank_order(params: &BalancerParams) -> RankOrder {
    match params.policy {
        Policy::Alg1 | Policy::Greedy => RankOrder::Ascending,
        Policy::Alg2 => params.alg2_order,
        Policy::Alg3 => params.alg3_order,
    }
}

fn compare_requests(order: RankOrder, a: &HandoverRequest, b: &HandoverRequest) -> Ordering {
    let by_key = a.rank_key.total_cmp(&b.rank_key);
    let by_key = match order {
        RankOrder::Ascending => by_key,
        RankOrder::Descending => by_key.reverse(),
    };
    by_key
        .then(a.user.cmp(&b.user))
        .then(a.source.cmp(&b.source))
}

/// Ranked requests from one overloaded source toward one eligible target.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestList {
    pub source: usize,
    pub target: usize,
    pub requests: Vec<HandoverRequest>,
}

fn is_source(i: usize, loads: &[f64], budgets: &[f64], params: &BalancerParams) -> bool {
    loads[i] > params.rho_th && budgets[i] < 0.0
}

fn is_target(j: usize, loads: &[f64], budgets: &[f64], params: &BalancerParams) -> bool {
    loads[j] < params.rho_th && budgets[j] > 0.0
}

/// Request lists for the current state, given the remaining budgets of the
/// round. Users in `exclude` (already moved this round) are skipped.
pub fn build_requests(
    state: &LoadState,
    graph: &CoverageGraph,
    params: &BalancerParams,
    ctx: &RadioContext<'_>,
    budgets: &[f64],
    exclude: &BTreeSet<usize>,
) -> Vec<RequestList> {
    let loads = state.loads();
    let order = rank_order(params);
    let mut lists = Vec::new();
    for source in 0..state.n() {
        if !is_source(source, &loads, budgets, params) {
            continue;
        }
        for target in graph.neighbors(source) {
            if !is_target(target, &loads, budgets, params) {
                continue;
            }
            let mut requests = Vec::new();
            for user in state.users_of(source) {
                if exclude.contains(&user) {
                    continue;
                }
                let load_out = ctx
                    .load_share(user, source)
                    .expect("served user is reachable from its source");
                let Some(load_in) = ctx.load_share(user, target) else {
                    log::debug!("dropping user {user} toward {target}: unreachable");
                    continue;
                };
                requests.push(HandoverRequest {
                    user,
                    source,
                    target,
                    load_out,
                    load_in,
                    rank_key: rank_key(params.policy, load_out, load_in),
                });
            }
            requests.sort_by(|a, b| compare_requests(order, a, b));
            lists.push(RequestList {
                source,
                target,
                requests,
            });
        }
    }
    lists
}

/// Opening budgets of a round.
pub fn round_budgets(loads: &[f64], graph: &CoverageGraph, params: &BalancerParams) -> Vec<f64> {
    (0..loads.len())
        .map(|i| accommodation(i, loads, graph, params))
        .collect()
}

/// Cumulative transfer over one ordered (source, target) pair in a round.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct PairFlow {
    load_in: f64,
    load_out: f64,
}

/// A pair may move at most its round-start load gap in either direction
/// (strictly less), so the realized rates stay in `[0, 1)` and transfers
/// never overshoot into a reversal that the next round would undo.
fn pair_admits(flow: PairFlow, request: &HandoverRequest, start: &[f64]) -> bool {
    let gap = start[request.source] - start[request.target] - LOAD_TOL;
    flow.load_in + request.load_in < gap && flow.load_out + request.load_out < gap
}

/// One round of the accommodation-capped balancer (ALG1/ALG2/ALG3).
pub fn execute_round(
    state: &LoadState,
    graph: &CoverageGraph,
    params: &BalancerParams,
    ctx: &RadioContext<'_>,
    round: usize,
) -> (LoadState, Vec<HandoverEvent>) {
    let mut state = state.clone();
    let start = state.loads();
    let mut budgets = round_budgets(&start, graph, params);
    let order = rank_order(params);
    let mut moved = BTreeSet::new();
    let mut flows: BTreeMap<(usize, usize), PairFlow> = BTreeMap::new();
    let mut events = Vec::new();
    let n = state.n();
    let mut cursor = 0;
    let mut idle = 0;

    // round-robin over targets; stop after a full pass without an accept
    while idle < n {
        let target = cursor;
        cursor = (cursor + 1) % n;
        let lists = build_requests(&state, graph, params, ctx, &budgets, &moved);
        let best = lists
            .iter()
            .filter(|l| l.target == target)
            .flat_map(|l| l.requests.iter())
            .filter(|r| r.load_in <= budgets[target] + LOAD_TOL)
            .filter(|r| {
                let flow = flows
                    .get(&(r.source, r.target))
                    .copied()
                    .unwrap_or_default();
                pair_admits(flow, r, &start)
            })
            .min_by(|a, b| compare_requests(order, a, b))
            .cloned();
        let Some(request) = best else {
            idle += 1;
            continue;
        };
        idle = 0;
        state.move_user(request.user, request.target, ctx);
        budgets[request.target] -= request.load_in;
        budgets[request.source] += request.load_out;
        let flow = flows.entry((request.source, request.target)).or_default();
        flow.load_in += request.load_in;
        flow.load_out += request.load_out;
        moved.insert(request.user);
        events.push(HandoverEvent::new(round, request));
    }
    (state, events)
}

/// Sets `θ_ij` for every pair that saw a handover from `j` to `i` to the
/// largest `M_j + Hys - M_i` over the moved users, plus [`CIO_MARGIN_DB`].
pub fn update_cio(
    events: &[HandoverEvent],
    cio_map: &CioMap,
    ctx: &RadioContext<'_>,
    hys: f64,
) -> CioMap {
    let mut required: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for e in events {
        let r = &e.request;
        let need = ctx.rsrp(r.user, r.source) + hys - ctx.rsrp(r.user, r.target);
        required
            .entry((r.target, r.source))
            .and_modify(|v| *v = v.max(need))
            .or_insert(need);
    }
    let mut out = cio_map.clone();
    for (pair, need) in required {
        out.insert(pair, need + CIO_MARGIN_DB);
    }
    out
}

/// One round of the greedy baseline.
///
/// Each adjacent pair's offsets follow the load difference in fixed steps:
/// `θ_ji` moves by `step` toward the less loaded side every round
/// (`θ_ij = -θ_ji`, clamped), so cell borders keep creeping as long as any
/// difference remains. Pairs are then
/// visited by decreasing load difference, and A3-eligible users of the more
/// loaded station move one at a time, strongest trigger first, until the
/// pair's ordering flips.
pub fn greedy_baseline_round(
    state: &LoadState,
    graph: &CoverageGraph,
    params: &BalancerParams,
    ctx: &RadioContext<'_>,
    round: usize,
) -> (LoadState, Vec<HandoverEvent>) {
    let mut state = state.clone();
    let start = state.loads();
    let hys = ctx.hysteresis_db();
    let limit = params.greedy_cio_limit_db;

    let mut pairs = Vec::new();
    for (i, j) in graph.edges() {
        let diff = start[i] - start[j];
        let step = if diff.abs() <= LOAD_TOL {
            0.0
        } else {
            params.greedy_cio_step_db * diff.signum()
        };
        let theta = (cio(&state.cio, j, i) + step).clamp(-limit, limit);
        state.cio.insert((j, i), theta);
        state.cio.insert((i, j), -theta);
        let (hi, lo) = if start[i] >= start[j] { (i, j) } else { (j, i) };
        pairs.push((start[hi] - start[lo], hi, lo));
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut moved = BTreeSet::new();
    let mut events = Vec::new();
    for (_, source, target) in pairs {
        if state.load(source) <= state.load(target) {
            continue;
        }
        let theta = cio(&state.cio, target, source);
        let mut eligible: Vec<(f64, usize)> = state
            .users_of(source)
            .filter(|u| !moved.contains(u) && ctx.load_share(*u, target).is_some())
            .filter_map(|u| {
                let margin = ctx.rsrp(u, target) + theta - hys - ctx.rsrp(u, source);
                (margin > 0.0).then_some((margin, u))
            })
            .collect();
        eligible.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, user) in eligible {
            if state.load(source) <= state.load(target) {
                break;
            }
            let load_out = ctx
                .load_share(user, source)
                .expect("served user is reachable");
            let load_in = ctx.load_share(user, target).expect("filtered reachable");
            state.move_user(user, target, ctx);
            moved.insert(user);
            events.push(HandoverEvent::new(
                round,
                HandoverRequest {
                    user,
                    source,
                    target,
                    load_out,
                    load_in,
                    rank_key: rank_key(Policy::Greedy, load_out, load_in),
                },
            ));
        }
    }
    (state, events)
}

/// Dispatches on `params.policy`. For ALG1/2/3 the offsets are updated from
/// the round's events.
pub fn balance_round(
    state: &LoadState,
    graph: &CoverageGraph,
    params: &BalancerParams,
    ctx: &RadioContext<'_>,
    round: usize,
) -> (LoadState, Vec<HandoverEvent>) {
    match params.policy {
        Policy::Greedy => greedy_baseline_round(state, graph, params, ctx, round),
        _ => {
            let (mut next, events) = execute_round(state, graph, params, ctx, round);
            next.cio = update_cio(&events, &next.cio, ctx, ctx.hysteresis_db());
            (next, events)
        }
    }
}
