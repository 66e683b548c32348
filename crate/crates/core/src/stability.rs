//! Stability criteria for the continuous and discrete load models, and the
//! oscillation bound under non-conservative transfer.
//!
//! Every check yields a [`StabilityReport`]. A criterion that is only
//! sufficient (sign conditions, Gershgorin discs) can prove stability but
//! never instability; when it fails without spectral evidence of growth the
//! verdict is [`Verdict::Inconclusive`].

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    central_difference, error_state, linearize, mean_drift, DynamicsError, DynamicsSpec,
    EpsilonMatrix, LinearModel, StepKind, Trajectory,
};
use crate::topology::{
    convergence_factor_from_spectrum, deflate_mean_mode, gershgorin_discs, laplacian,
    symmetric_eigenvalues, zero_mode_count, CoverageGraph, TopologyError, DEFAULT_EIGEN_TOL,
};

/// Minimum slack for a strict inequality to count as satisfied.
pub const SLACK_TOL: f64 = 1e-9;
/// Tolerance when testing whether `f` or `H` is identical across nodes/edges.
pub const HOMOGENEITY_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StabilityError {
    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),
    #[error("trajectory has {steps} steps but {given} transfer-rate matrices were supplied")]
    HistoryLength { steps: usize, given: usize },
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    HomogeneousContinuous,
    HeterogeneousConservative,
    HeterogeneousNonconservative,
    DiscreteConservative,
    DiscreteNonconservative,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::HomogeneousContinuous => "homogeneous-continuous",
            Regime::HeterogeneousConservative => "heterogeneous-conservative",
            Regime::HeterogeneousNonconservative => "heterogeneous-nonconservative",
            Regime::DiscreteConservative => "discrete-conservative",
            Regime::DiscreteNonconservative => "discrete-nonconservative",
        })
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Stable => "stable",
            Verdict::Unstable => "unstable",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Evidence {
    Count(usize),
    Scalar(f64),
    Series(Vec<f64>),
}

impl From<f64> for Evidence {
    fn from(v: f64) -> Self {
        Evidence::Scalar(v)
    }
}

impl From<usize> for Evidence {
    fn from(v: usize) -> Self {
        Evidence::Count(v)
    }
}

impl From<Vec<f64>> for Evidence {
    fn from(v: Vec<f64>) -> Self {
        Evidence::Series(v)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub regime: Regime,
    pub verdict: Verdict,
    pub evidence: BTreeMap<String, Evidence>,
    /// Human-readable findings, e.g. which node or edge violates a condition.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl StabilityReport {
    fn new(regime: Regime) -> Self {
        Self {
            regime,
            verdict: Verdict::Inconclusive,
            evidence: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    fn put(&mut self, key: &str, value: impl Into<Evidence>) {
        self.evidence.insert(key.to_owned(), value.into());
    }

    pub fn scalar(&self, key: &str) -> Option<f64> {
        match self.evidence.get(key)? {
            Evidence::Scalar(v) => Some(*v),
            Evidence::Count(c) => Some(*c as f64),
            Evidence::Series(_) => None,
        }
    }

    pub fn series(&self, key: &str) -> Option<&[f64]> {
        match self.evidence.get(key)? {
            Evidence::Series(v) => Some(v),
            _ => None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn max_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn min_of(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Identical `f` and `g` everywhere: stable iff `f'(ρ̄) < 0` and `g'(0) < 0`.
///
/// The modes of the linearization are `f'(ρ̄) + g'(0) λ_i` over the
/// Laplacian spectrum.
pub fn check_homogeneous(
    spec: &DynamicsSpec,
    graph: &CoverageGraph,
) -> Result<StabilityReport, StabilityError> {
    let model = linearize(spec, graph)?;
    let n = model.n();
    let f_prime = model.d_f[0];
    if let Some(i) = (0..n).find(|&i| (model.d_f[i] - f_prime).abs() > HOMOGENEITY_TOL) {
        return Err(StabilityError::RegimeMismatch(format!(
            "f'_{i}(ρ̄) = {} differs from f'_0(ρ̄) = {f_prime}",
            model.d_f[i]
        )));
    }
    let edges = graph.edges();
    let e = spec.equilibrium();
    let g_prime = match edges.first() {
        Some(&(i, j)) => model.h[(i, j)],
        None if n >= 2 => central_difference(|r| spec.coupling(0, 1, r, e), e),
        None => 0.0,
    };
    for &(i, j) in &edges {
        for (a, b) in [(i, j), (j, i)] {
            if (model.h[(a, b)] - g_prime).abs() > HOMOGENEITY_TOL {
                return Err(StabilityError::RegimeMismatch(format!(
                    "h_{a}{b} = {} differs from g'(0) = {g_prime}",
                    model.h[(a, b)]
                )));
            }
        }
    }

    let spectrum = symmetric_eigenvalues(&laplacian(graph), DEFAULT_EIGEN_TOL)?;
    let modes: Vec<f64> = spectrum
        .eigenvalues
        .iter()
        .map(|l| f_prime + g_prime * l)
        .collect();
    let max_mode = max_of(&modes);

    let mut report = StabilityReport::new(Regime::HomogeneousContinuous);
    report.put("f_prime", f_prime);
    report.put("g_prime", g_prime);
    report.put("laplacian_eigenvalues", spectrum.eigenvalues.clone());
    report.put("mode_eigenvalues", modes);
    report.put("max_mode_eigenvalue", max_mode);

    report.verdict = if f_prime < -SLACK_TOL && g_prime < -SLACK_TOL {
        Verdict::Stable
    } else if max_mode > SLACK_TOL {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    if f_prime >= -SLACK_TOL {
        report
            .notes
            .push(format!("f'(ρ̄) = {f_prime} is not negative"));
    }
    if g_prime >= -SLACK_TOL {
        report
            .notes
            .push(format!("g'(0) = {g_prime} is not negative"));
    }
    Ok(report)
}

fn edge_list(model: &LinearModel) -> Vec<(usize, usize)> {
    let n = model.n();
    let mut out = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if model.is_adjacent(i, j) {
                out.push((i, j));
            }
        }
    }
    out
}

fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    (m - m.transpose()).amax() <= tol
}

/// Conservative transfer (`h_ij = h_ji` on every edge): stable iff every
/// `f_i'(ρ̄) < 0` and every present-edge `h_ij < 0`.
pub fn check_conservative_hetero(model: &LinearModel) -> Result<StabilityReport, StabilityError> {
    if !is_symmetric(&model.q, 1e-9) {
        return Err(StabilityError::RegimeMismatch(
            "coupling slopes are asymmetric; use the nonconservative check".to_owned(),
        ));
    }
    let mut report = StabilityReport::new(Regime::HeterogeneousConservative);
    let slopes: Vec<f64> = model.d_f.iter().copied().collect();
    let mut ok = true;
    for (i, &f) in slopes.iter().enumerate() {
        if f >= -SLACK_TOL {
            ok = false;
            report
                .notes
                .push(format!("node {i}: f'(ρ̄) = {f} is not negative"));
        }
    }
    let mut max_edge = f64::NEG_INFINITY;
    for (i, j) in edge_list(model) {
        let h = model.h[(i, j)];
        max_edge = max_edge.max(h);
        if h >= -SLACK_TOL {
            ok = false;
            report
                .notes
                .push(format!("edge ({i}, {j}): h = {h} is not negative"));
        }
    }

    let spectrum = symmetric_eigenvalues(&model.s, DEFAULT_EIGEN_TOL)?;
    let right_edges: Vec<f64> = gershgorin_discs(&model.m)
        .iter()
        .map(|d| d.right_edge())
        .collect();
    let max_eig = spectrum.max();
    report.put("self_slopes", slopes.clone());
    report.put("max_self_slope", max_of(&slopes));
    if max_edge.is_finite() {
        report.put("max_edge_slope", max_edge);
    }
    report.put("m_eigenvalues", spectrum.eigenvalues.clone());
    report.put("max_m_eigenvalue", max_eig);
    report.put("gershgorin_right_edges", right_edges.clone());
    report.put("max_gershgorin_right_edge", max_of(&right_edges));

    report.verdict = if ok {
        Verdict::Stable
    } else if max_eig > SLACK_TOL {
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    Ok(report)
}

/// Per-row slack of the relaxed non-conservative condition
/// `|2 f_i' + Σ_j a_ij h_ij| - |Σ_j a_ji h_ji|`.
pub fn row_slacks(model: &LinearModel) -> Vec<f64> {
    let n = model.n();
    (0..n)
        .map(|i| {
            let out: f64 = (0..n)
                .map(|j| model.adjacency[(i, j)] * model.h[(i, j)])
                .sum();
            let inc: f64 = (0..n)
                .map(|j| model.adjacency[(j, i)] * model.h[(j, i)])
                .sum();
            (2.0 * model.d_f[i] + out).abs() - inc.abs()
        })
        .collect()
}

/// Possibly asymmetric coupling. Stable iff for every node `f_i' < 0`, all
/// outgoing `h_ij ≤ 0`, and the row slack is positive; these make every
/// Gershgorin disc of `S = (M + Mᵀ)/2` lie left of zero.
#[allow(clippy::needless_range_loop)]
pub fn check_nonconservative_hetero(
    model: &LinearModel,
) -> Result<StabilityReport, StabilityError> {
    let n = model.n();
    let mut report = StabilityReport::new(Regime::HeterogeneousNonconservative);
    let slacks = row_slacks(model);
    let mut ok = true;
    for i in 0..n {
        if model.d_f[i] >= -SLACK_TOL {
            ok = false;
            report.notes.push(format!(
                "node {i}: f'(ρ̄) = {} is not negative",
                model.d_f[i]
            ));
        }
        for j in 0..n {
            if model.is_adjacent(i, j) && model.h[(i, j)] > SLACK_TOL {
                ok = false;
                report.notes.push(format!(
                    "edge ({i}, {j}): h = {} is positive",
                    model.h[(i, j)]
                ));
            }
        }
        if slacks[i] <= SLACK_TOL {
            ok = false;
            report.notes.push(format!(
                "node {i}: row condition violated (slack {:.6})",
                slacks[i]
            ));
        }
    }

    let spectrum = symmetric_eigenvalues(&model.s, DEFAULT_EIGEN_TOL)?;
    let right_edges: Vec<f64> = gershgorin_discs(&model.s)
        .iter()
        .map(|d| d.right_edge())
        .collect();
    let trace = model.m.trace();
    let max_s = spectrum.max();
    report.put("row_slack", slacks.clone());
    report.put("min_row_slack", min_of(&slacks));
    report.put("s_eigenvalues", spectrum.eigenvalues.clone());
    report.put("max_s_eigenvalue", max_s);
    report.put("gershgorin_right_edges", right_edges.clone());
    report.put("max_gershgorin_right_edge", max_of(&right_edges));
    report.put("m_trace", trace);

    let m_symmetric = is_symmetric(&model.m, 1e-12);
    report.verdict = if ok {
        Verdict::Stable
    } else if trace > SLACK_TOL || (m_symmetric && max_s > SLACK_TOL) {
        // a positive trace forces an eigenvalue of M into the right half-plane
        Verdict::Unstable
    } else {
        Verdict::Inconclusive
    };
    Ok(report)
}

/// Conservative discrete stepping with a uniform rate: stable iff
/// `0 < eps < 2/λ_max`, i.e. the convergence factor is below one.
pub fn check_discrete_step(l: &DMatrix<f64>, eps: f64) -> Result<StabilityReport, StabilityError> {
    let spectrum = symmetric_eigenvalues(l, DEFAULT_EIGEN_TOL)?;
    let mut report = StabilityReport::new(Regime::DiscreteConservative);
    let components = zero_mode_count(&spectrum);
    let lambda_max = spectrum.max();
    report.put("laplacian_eigenvalues", spectrum.eigenvalues.clone());
    report.put("lambda_max", lambda_max);
    report.put("step", eps);
    report.put("components", components);
    if lambda_max > 0.0 {
        report.put("step_limit", 2.0 / lambda_max);
    }
    match convergence_factor_from_spectrum(&spectrum, eps) {
        Err(TopologyError::Disconnected { components }) => {
            report.verdict = Verdict::Inconclusive;
            report
                .notes
                .push(format!("graph is disconnected ({components} components)"));
        }
        Err(e) => return Err(e.into()),
        Ok(eta) => {
            report.put("convergence_factor", eta);
            report.verdict = if eps > 0.0 && eta < 1.0 - SLACK_TOL {
                Verdict::Stable
            } else {
                Verdict::Unstable
            };
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OscillationBound {
    /// `sup_k γ̃(k)`
    pub gamma_max: f64,
    /// `sup_k α(k)`
    pub alpha_max: f64,
    /// `(α_max / (1 - γ_max))²`; `None` when `γ_max ≥ 1`.
    pub v_tilde: Option<f64>,
    pub alpha_series: Vec<f64>,
    pub gamma_series: Vec<f64>,
}

impl OscillationBound {
    pub fn from_series(alpha_series: Vec<f64>, gamma_series: Vec<f64>) -> Self {
        let alpha_max = alpha_series.iter().copied().fold(0.0, f64::max);
        let gamma_max = gamma_series.iter().copied().fold(0.0, f64::max);
        let v_tilde = (gamma_max < 1.0).then(|| (alpha_max / (1.0 - gamma_max)).powi(2));
        Self {
            gamma_max,
            alpha_max,
            v_tilde,
            alpha_series,
            gamma_series,
        }
    }

    pub fn is_defined(&self) -> bool {
        self.v_tilde.is_some()
    }
}

/// `α = ‖ω - ω̄·1‖₂`.
pub fn transfer_error(omega: &[f64]) -> f64 {
    let m = mean_drift(omega);
    omega.iter().map(|w| (w - m).powi(2)).sum::<f64>().sqrt()
}

/// `γ̃ = max |γ_i|` over the eigenvalues of `I - L̂` restricted to the
/// subspace orthogonal to the all-ones vector.
pub fn contraction_factor(
    eps: &EpsilonMatrix,
    graph: &CoverageGraph,
) -> Result<f64, StabilityError> {
    let n = graph.n();
    let step = DMatrix::<f64>::identity(n, n) - eps.averaged_laplacian(graph);
    let projected = deflate_mean_mode(&step);
    let spectrum = symmetric_eigenvalues(&projected, DEFAULT_EIGEN_TOL)?;
    Ok(spectrum
        .eigenvalues
        .iter()
        .map(|g| g.abs())
        .fold(0.0, f64::max))
}

/// Oscillation bound of a discrete run. `eps_history[k]` must be the rates
/// used for step `k`. A trajectory without recorded `ω` is treated as
/// conservative (`ω ≡ 0`).
pub fn oscillation_bound(
    trajectory: &Trajectory,
    eps_history: &[EpsilonMatrix],
    graph: &CoverageGraph,
) -> Result<OscillationBound, StabilityError> {
    let steps = trajectory.steps();
    if !eps_history.is_empty() && eps_history.len() != steps {
        return Err(StabilityError::HistoryLength {
            steps,
            given: eps_history.len(),
        });
    }
    if trajectory.kind == StepKind::Continuous {
        return Err(StabilityError::RegimeMismatch(
            "oscillation bound applies to discrete trajectories".to_owned(),
        ));
    }
    let alpha_series: Vec<f64> = if trajectory.omegas.is_empty() {
        vec![0.0; steps]
    } else {
        trajectory
            .omegas
            .iter()
            .map(|w| transfer_error(w))
            .collect()
    };

    let mut gamma_series = Vec::with_capacity(eps_history.len());
    let mut cached: Option<(&EpsilonMatrix, f64)> = None;
    for eps in eps_history {
        let gamma = match cached {
            Some((prev, g)) if prev == eps => g,
            _ => contraction_factor(eps, graph)?,
        };
        cached = Some((eps, gamma));
        gamma_series.push(gamma);
    }
    Ok(OscillationBound::from_series(alpha_series, gamma_series))
}

/// `V(e(k)) = e(k)ᵀ e(k)` for every recorded state.
pub fn lyapunov_series(trajectory: &Trajectory) -> Vec<f64> {
    trajectory
        .states
        .iter()
        .map(|rho| error_state(rho).iter().map(|e| e * e).sum())
        .collect()
}

/// Largest `V(e(k))` over states `from..`.
pub fn tail_supremum(series: &[f64], from: usize) -> f64 {
    series.iter().skip(from).copied().fold(0.0, f64::max)
}

/// Bounded-oscillation report for a non-conservative run: stable when the
/// bound is defined and the tail of `V` respects it.
pub fn check_nonconservative_run(
    trajectory: &Trajectory,
    eps_history: &[EpsilonMatrix],
    graph: &CoverageGraph,
    tail_from: usize,
) -> Result<StabilityReport, StabilityError> {
    let bound = oscillation_bound(trajectory, eps_history, graph)?;
    let v = lyapunov_series(trajectory);
    let tail = tail_supremum(&v, tail_from);
    let mut report = StabilityReport::new(Regime::DiscreteNonconservative);
    report.put("gamma_max", bound.gamma_max);
    report.put("alpha_max", bound.alpha_max);
    report.put("tail_sup_v", tail);
    report.put("steps", trajectory.steps());
    match bound.v_tilde {
        Some(vt) => {
            report.put("v_tilde", vt);
            if tail <= vt + SLACK_TOL {
                report.verdict = Verdict::Stable;
            } else {
                report
                    .notes
                    .push(format!("tail sup V = {tail} exceeds the bound {vt}"));
            }
        }
        None => report.notes.push(format!(
            "bound undefined: contraction factor {} ≥ 1",
            bound.gamma_max
        )),
    }
    Ok(report)
}
