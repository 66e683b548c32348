//! Load evolution as a networked dynamical system.
//!
//! Continuous model, per node `i`:
//!
//! ```text
//! dρ_i/dt = f_i(ρ_i) + Σ_j a_ij g_ij(ρ_i, ρ_j)
//! ```
//!
//! Discrete models:
//!
//! ```text
//! conservative:      ρ(k+1) = (I - εL) ρ(k)
//! non-conservative:  ρ_i(k+1) = ρ_i(k) + Σ_j ε_ij(k) a_ij (ρ_j(k) - ρ_i(k))
//!                             = [(I - L̂(k)) ρ(k)]_i + ω_i(k)
//! ```
//!
//! where `L̂` is the Laplacian weighted by the averaged rates
//! `ε̃_ij = (ε_ij + ε_ji)/2` and `ω` carries the antisymmetric remainder.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::topology::CoverageGraph;

/// Central-difference step on the load scale.
pub const FD_STEP: f64 = 1e-6;
/// Tolerance for `f_i(ρ̄) = 0` and `g_ij(ρ̄, ρ̄) = 0`.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;
/// Continuous integration stops once any load leaves `[-BLOW_UP_LIMIT, BLOW_UP_LIMIT]`.
pub const BLOW_UP_LIMIT: f64 = 10.0;
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("f_{node}(ρ̄) = {value:e}, equilibrium requires 0")]
    SelfTermNotAtEquilibrium { node: usize, value: f64 },
    #[error("g_{from}{to}(ρ̄, ρ̄) = {value:e}, equilibrium requires 0")]
    CouplingNotAtEquilibrium { from: usize, to: usize, value: f64 },
    #[error("non-smooth dynamics: derivative of {term} is not finite")]
    NonSmooth { term: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid transfer rate ε[{row}][{col}] = {value}")]
    InvalidEpsilon { row: usize, col: usize, value: f64 },
    #[error("time step must be positive, got {0}")]
    InvalidTimeStep(f64),
}

pub type SelfFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
pub type CouplingFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Standard coupling shapes. Each moves load from the more loaded node to
/// the less loaded one, so `∂g/∂ρ_i < 0` at equilibrium for positive gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum CouplingFamily {
    /// `-gain · (ρ_i - ρ_j)`
    Linear { gain: f64 },
    /// `gain · sin(ρ_j - ρ_i)`
    Sine { gain: f64 },
    /// `-gain · tanh(ρ_i - ρ_j)`
    Tanh { gain: f64 },
}

impl CouplingFamily {
    pub fn into_fn(self) -> CouplingFn {
        match self {
            CouplingFamily::Linear { gain } => Arc::new(move |ri, rj| -gain * (ri - rj)),
            CouplingFamily::Sine { gain } => Arc::new(move |ri, rj| gain * (rj - ri).sin()),
            CouplingFamily::Tanh { gain } => Arc::new(move |ri, rj| -gain * (ri - rj).tanh()),
        }
    }
}

/// Self and coupling functions of a load network together with the
/// equilibrium load `ρ̄` they are built around.
#[derive(Clone)]
pub struct DynamicsSpec {
    equilibrium: f64,
    self_terms: Vec<SelfFn>,
    default_coupling: CouplingFn,
    couplings: BTreeMap<(usize, usize), CouplingFn>,
}

impl fmt::Debug for DynamicsSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DynamicsSpec")
            .field("n", &self.self_terms.len())
            .field("equilibrium", &self.equilibrium)
            .field("edge_overrides", &self.couplings.keys().collect::<Vec<_>>())
            .finish()
    }
}

pub struct DynamicsSpecBuilder {
    equilibrium: f64,
    self_terms: Vec<SelfFn>,
    default_coupling: CouplingFn,
    couplings: BTreeMap<(usize, usize), CouplingFn>,
}

impl DynamicsSpecBuilder {
    pub fn self_term(
        mut self,
        node: usize,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.self_terms[node] = Arc::new(f);
        self
    }

    pub fn all_self_terms(mut self, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        let f: SelfFn = Arc::new(f);
        self.self_terms.iter_mut().for_each(|t| *t = f.clone());
        self
    }

    pub fn default_coupling(mut self, g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        self.default_coupling = Arc::new(g);
        self
    }

    /// Overrides `g_ij` for the ordered pair `(from, to)`.
    pub fn coupling(
        mut self,
        from: usize,
        to: usize,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        self.couplings.insert((from, to), Arc::new(g));
        self
    }

    pub fn build(self) -> Result<DynamicsSpec, DynamicsError> {
        let spec = DynamicsSpec {
            equilibrium: self.equilibrium,
            self_terms: self.self_terms,
            default_coupling: self.default_coupling,
            couplings: self.couplings,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl DynamicsSpec {
    /// Starts from zero self terms and zero coupling everywhere.
    pub fn builder(n: usize, equilibrium: f64) -> DynamicsSpecBuilder {
        let zero: SelfFn = Arc::new(|_| 0.0);
        DynamicsSpecBuilder {
            equilibrium,
            self_terms: vec![zero; n],
            default_coupling: Arc::new(|_, _| 0.0),
            couplings: BTreeMap::new(),
        }
    }

    pub fn homogeneous(
        n: usize,
        equilibrium: f64,
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self, DynamicsError> {
        Self::builder(n, equilibrium)
            .all_self_terms(f)
            .default_coupling(g)
            .build()
    }

    /// Linear dynamics `f_i(ρ) = slope_i (ρ - ρ̄)`, `g_ij = h_ij (ρ_i - ρ_j)`.
    pub fn linear(
        equilibrium: f64,
        self_slopes: &[f64],
        coupling_slopes: &DMatrix<f64>,
    ) -> Result<Self, DynamicsError> {
        let n = self_slopes.len();
        if coupling_slopes.nrows() != n || coupling_slopes.ncols() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: coupling_slopes.nrows(),
            });
        }
        let mut b = Self::builder(n, equilibrium);
        for (i, &a) in self_slopes.iter().enumerate() {
            b = b.self_term(i, move |r| a * (r - equilibrium));
        }
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let h = coupling_slopes[(i, j)];
                    b = b.coupling(i, j, move |ri, rj| h * (ri - rj));
                }
            }
        }
        b.build()
    }

    fn validate(&self) -> Result<(), DynamicsError> {
        let e = self.equilibrium;
        for (node, f) in self.self_terms.iter().enumerate() {
            let value = f(e);
            if !(value.abs() <= EQUILIBRIUM_TOL) {
                return Err(DynamicsError::SelfTermNotAtEquilibrium { node, value });
            }
        }
        let value = (self.default_coupling)(e, e);
        if !(value.abs() <= EQUILIBRIUM_TOL) {
            return Err(DynamicsError::CouplingNotAtEquilibrium {
                from: usize::MAX,
                to: usize::MAX,
                value,
            });
        }
        for (&(from, to), g) in &self.couplings {
            let value = g(e, e);
            if !(value.abs() <= EQUILIBRIUM_TOL) {
                return Err(DynamicsError::CouplingNotAtEquilibrium { from, to, value });
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.self_terms.len()
    }

    pub fn equilibrium(&self) -> f64 {
        self.equilibrium
    }

    pub fn self_term(&self, i: usize, rho: f64) -> f64 {
        (self.self_terms[i])(rho)
    }

    pub fn coupling(&self, i: usize, j: usize, rho_i: f64, rho_j: f64) -> f64 {
        match self.couplings.get(&(i, j)) {
            Some(g) => g(rho_i, rho_j),
            None => (self.default_coupling)(rho_i, rho_j),
        }
    }

    /// Right-hand side of the continuous model.
    pub fn rate(&self, rho: &[f64], graph: &CoverageGraph) -> Vec<f64> {
        (0..rho.len())
            .map(|i| {
                self.self_term(i, rho[i])
                    + graph
                        .neighbors(i)
                        .map(|j| self.coupling(i, j, rho[i], rho[j]))
                        .sum::<f64>()
            })
            .collect()
    }
}

pub fn central_difference(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    (f(x + FD_STEP) - f(x - FD_STEP)) / (2.0 * FD_STEP)
}

/// Linearization of a [`DynamicsSpec`] at `ρ̄·1`.
///
/// `m = D_f + K - Q` with `Q = A ⊙ H` and `K = diag(row sums of Q)`; the
/// perturbation obeys `dδ/dt = m δ`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub adjacency: DMatrix<f64>,
    /// Diagonal of `D_f`: `f_i'(ρ̄)`.
    pub d_f: DVector<f64>,
    /// `h_ij(ρ̄, ρ̄)`; zero where there is no edge.
    pub h: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// Diagonal of `K`.
    pub k: DVector<f64>,
    pub m: DMatrix<f64>,
    /// `(m + mᵀ) / 2`.
    pub s: DMatrix<f64>,
}

impl LinearModel {
    pub fn from_parts(
        graph: &CoverageGraph,
        self_slopes: &[f64],
        coupling_slopes: &DMatrix<f64>,
    ) -> Result<Self, DynamicsError> {
        let n = graph.n();
        if self_slopes.len() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: self_slopes.len(),
            });
        }
        if coupling_slopes.nrows() != n || coupling_slopes.ncols() != n {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: coupling_slopes.nrows(),
            });
        }
        let adjacency = graph.adjacency_matrix();
        let h = DMatrix::from_fn(n, n, |i, j| {
            if graph.is_adjacent(i, j) {
                coupling_slopes[(i, j)]
            } else {
                0.0
            }
        });
        let q = adjacency.component_mul(&h);
        let k = DVector::from_fn(n, |i, _| q.row(i).sum());
        let d_f = DVector::from_column_slice(self_slopes);
        let m = DMatrix::from_diagonal(&d_f) + DMatrix::from_diagonal(&k) - &q;
        let s = (&m + m.transpose()) * 0.5;
        Ok(Self {
            adjacency,
            d_f,
            h,
            q,
            k,
            m,
            s,
        })
    }

    pub fn n(&self) -> usize {
        self.d_f.len()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[(i, j)] != 0.0
    }
}

/// Finite-difference linearization of `spec` around its equilibrium.
pub fn linearize(spec: &DynamicsSpec, graph: &CoverageGraph) -> Result<LinearModel, DynamicsError> {
    let n = graph.n();
    if spec.n() != n {
        return Err(DynamicsError::DimensionMismatch {
            expected: n,
            got: spec.n(),
        });
    }
    let e = spec.equilibrium();
    let mut slopes = Vec::with_capacity(n);
    for i in 0..n {
        let d = central_difference(|r| spec.self_term(i, r), e);
        if !d.is_finite() {
            return Err(DynamicsError::NonSmooth {
                term: format!("f_{i}"),
            });
        }
        slopes.push(d);
    }
    let mut h = DMatrix::zeros(n, n);
    for (i, j) in graph.edges() {
        for (a, b) in [(i, j), (j, i)] {
            let d = central_difference(|r| spec.coupling(a, b, r, e), e);
            if !d.is_finite() {
                return Err(DynamicsError::NonSmooth {
                    term: format!("g_{a}{b}"),
                });
            }
            h[(a, b)] = d;
        }
    }
    LinearModel::from_parts(graph, &slopes, &h)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepKind {
    Continuous,
    DiscreteConservative,
    DiscreteNonconservative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    /// One entry per step for non-conservative runs, empty otherwise.
    pub omegas: Vec<Vec<f64>>,
    pub kind: StepKind,
    /// Continuous runs only: integration stopped because a load left the
    /// admissible range.
    #[serde(default)]
    pub blew_up: bool,
}

impl Trajectory {
    pub fn steps(&self) -> usize {
        self.states.len().saturating_sub(1)
    }

    pub fn last(&self) -> &[f64] {
        self.states.last().expect("trajectory has an initial state")
    }
}

/// Forward-Euler integration of the continuous model.
pub fn integrate_continuous(
    spec: &DynamicsSpec,
    graph: &CoverageGraph,
    rho0: &[f64],
    dt: f64,
    steps: usize,
) -> Result<Trajectory, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidTimeStep(dt));
    }
    if rho0.len() != graph.n() || spec.n() != graph.n() {
        return Err(DynamicsError::DimensionMismatch {
            expected: graph.n(),
            got: rho0.len(),
        });
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(rho0.to_vec());
    let mut blew_up = false;
    let mut rho = rho0.to_vec();
    for _ in 0..steps {
        let rate = spec.rate(&rho, graph);
        for (r, d) in rho.iter_mut().zip(rate) {
            *r += dt * d;
        }
        states.push(rho.clone());
        if rho.iter().any(|r| !(r.abs() <= BLOW_UP_LIMIT)) {
            blew_up = true;
            break;
        }
    }
    Ok(Trajectory {
        states,
        omegas: Vec::new(),
        kind: StepKind::Continuous,
        blew_up,
    })
}

/// `ρ' = (I - εL) ρ`.
pub fn step_conservative(rho: &[f64], eps: f64, graph: &CoverageGraph) -> Vec<f64> {
    (0..rho.len())
        .map(|i| {
            let flow: f64 = graph.neighbors(i).map(|j| rho[j] - rho[i]).sum();
            rho[i] + eps * flow
        })
        .collect()
}

/// Pairwise transfer rates `ε_ij`, possibly asymmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct EpsilonMatrix(DMatrix<f64>);

impl EpsilonMatrix {
    /// Requires `0 ≤ ε_ij < 1` and a zero diagonal.
    pub fn new(values: DMatrix<f64>) -> Result<Self, DynamicsError> {
        let (rows, cols) = values.shape();
        if rows != cols {
            return Err(DynamicsError::DimensionMismatch {
                expected: rows,
                got: cols,
            });
        }
        for i in 0..rows {
            for j in 0..cols {
                let v = values[(i, j)];
                let ok = if i == j {
                    v == 0.0
                } else {
                    (0.0..1.0).contains(&v)
                };
                if !ok {
                    return Err(DynamicsError::InvalidEpsilon {
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
        Ok(Self(values))
    }

    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Result<Self, DynamicsError> {
        Self::new(DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { 0.0 } else { f(i, j) },
        ))
    }

    pub fn uniform(n: usize, eps: f64) -> Result<Self, DynamicsError> {
        Self::from_fn(n, |_, _| eps)
    }

    pub fn n(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    /// `ε̃_ij = (ε_ij + ε_ji) / 2`.
    pub fn averaged(&self, i: usize, j: usize) -> f64 {
        0.5 * (self.0[(i, j)] + self.0[(j, i)])
    }

    pub fn is_symmetric(&self) -> bool {
        self.0 == self.0.transpose()
    }

    /// `L̂`: off-diagonal `-ε̃_ij a_ij`, diagonal `Σ_j ε̃_ij a_ij`.
    pub fn averaged_laplacian(&self, graph: &CoverageGraph) -> DMatrix<f64> {
        let n = graph.n();
        let mut l = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in graph.neighbors(i) {
                let w = self.averaged(i, j);
                l[(i, j)] = -w;
                l[(i, i)] += w;
            }
        }
        l
    }
}

impl TryFrom<Vec<Vec<f64>>> for EpsilonMatrix {
    type Error = DynamicsError;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return Err(DynamicsError::DimensionMismatch {
                expected: n,
                got: r.len(),
            });
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }
}

impl From<EpsilonMatrix> for Vec<Vec<f64>> {
    fn from(e: EpsilonMatrix) -> Self {
        let n = e.n();
        (0..n)
            .map(|i| (0..n).map(|j| e.0[(i, j)]).collect())
            .collect()
    }
}

/// One non-conservative step. Returns the new loads and `ω(k)`.
pub fn step_nonconservative(
    rho: &[f64],
    eps: &EpsilonMatrix,
    graph: &CoverageGraph,
) -> (Vec<f64>, Vec<f64>) {
    let n = rho.len();
    let mut next = Vec::with_capacity(n);
    let mut omega = Vec::with_capacity(n);
    for i in 0..n {
        let mut flow = 0.0;
        let mut residual = 0.0;
        for j in graph.neighbors(i) {
            let diff = rho[j] - rho[i];
            flow += eps.get(i, j) * diff;
            residual += 0.5 * (eps.get(i, j) - eps.get(j, i)) * diff;
        }
        next.push(rho[i] + flow);
        omega.push(residual);
    }
    (next, omega)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// `e = ρ - mean(ρ)·1`.
pub fn error_state(rho: &[f64]) -> Vec<f64> {
    let m = mean(rho);
    rho.iter().map(|r| r - m).collect()
}

/// `ω̄ = 1ᵀω / N`.
pub fn mean_drift(omega: &[f64]) -> f64 {
    mean(omega)
}

/// Conservative discrete run of `steps` steps.
pub fn run_conservative(rho0: &[f64], eps: f64, graph: &CoverageGraph, steps: usize) -> Trajectory {
    let mut states = Vec::with_capacity(steps + 1);
    states.push(rho0.to_vec());
    for _ in 0..steps {
        let next = step_conservative(states.last().unwrap(), eps, graph);
        states.push(next);
    }
    Trajectory {
        states,
        omegas: Vec::new(),
        kind: StepKind::DiscreteConservative,
        blew_up: false,
    }
}

/// Non-conservative discrete run. `eps_at(k, ρ(k))` supplies the rates for
/// step `k`; the rates used are returned alongside the trajectory.
///
/// With `self_term` set, `f_i(ρ_i(k))` is added to every node after the
/// transfer, modelling intra-station scheduling.
pub fn run_nonconservative(
    rho0: &[f64],
    graph: &CoverageGraph,
    steps: usize,
    mut eps_at: impl FnMut(usize, &[f64]) -> EpsilonMatrix,
    self_term: Option<&DynamicsSpec>,
) -> (Trajectory, Vec<EpsilonMatrix>) {
    let mut states = Vec::with_capacity(steps + 1);
    let mut omegas = Vec::with_capacity(steps);
    let mut history = Vec::with_capacity(steps);
    states.push(rho0.to_vec());
    for k in 0..steps {
        let rho = states.last().unwrap();
        let eps = eps_at(k, rho);
        let (mut next, omega) = step_nonconservative(rho, &eps, graph);
        if let Some(spec) = self_term {
            for (i, r) in next.iter_mut().enumerate() {
                *r += spec.self_term(i, rho[i]);
            }
        }
        states.push(next);
        omegas.push(omega);
        history.push(eps);
    }
    (
        Trajectory {
            states,
            omegas,
            kind: StepKind::DiscreteNonconservative,
            blew_up: false,
        },
        history,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn k2() -> CoverageGraph {
        CoverageGraph::complete(2)
    }

    #[test]
    fn equilibrium_is_checked() {
        let bad = DynamicsSpec::homogeneous(2, 0.5, |r| -(r - 0.4), |_, _| 0.0);
        assert!(matches!(
            bad,
            Err(DynamicsError::SelfTermNotAtEquilibrium { .. })
        ));
        let bad = DynamicsSpec::builder(2, 0.5)
            .coupling(0, 1, |_, _| 0.1)
            .build();
        assert!(matches!(
            bad,
            Err(DynamicsError::CouplingNotAtEquilibrium { from: 0, to: 1, .. })
        ));
    }

    #[test]
    fn linear_spec_is_its_own_linearization() {
        let g = CoverageGraph::from_edges(3, &[(0, 1), (1, 2)]);
        let spec =
            DynamicsSpec::homogeneous(3, 0.4, |r| -0.7 * (r - 0.4), |ri, rj| -1.3 * (ri - rj))
                .unwrap();
        let lin = linearize(&spec, &g).unwrap();
        let expected = DMatrix::<f64>::identity(3, 3) * -0.7 - crate::topology::laplacian(&g) * 1.3;
        assert!((&lin.m - expected).amax() < 1e-8);
        assert_eq!(lin.s, lin.s.transpose());
        for i in 0..3 {
            assert_abs_diff_eq!(lin.k[i], lin.q.row(i).sum(), epsilon = 1e-15);
        }
    }

    #[test]
    fn sine_coupling_slope_is_minus_one() {
        let spec = DynamicsSpec::homogeneous(2, 0.3, |_| 0.0, |ri, rj| (rj - ri).sin()).unwrap();
        let lin = linearize(&spec, &k2()).unwrap();
        assert_abs_diff_eq!(lin.h[(0, 1)], -1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(lin.h[(1, 0)], -1.0, epsilon = 1e-9);
    }

    #[test]
    fn non_smooth_is_reported() {
        let spec = DynamicsSpec::builder(2, 0.0)
            .self_term(0, |r: f64| {
                if r == 0.0 {
                    0.0
                } else {
                    r.abs().sqrt() * f64::INFINITY
                }
            })
            .build()
            .unwrap();
        assert!(matches!(
            linearize(&spec, &k2()),
            Err(DynamicsError::NonSmooth { .. })
        ));
    }

    #[test]
    fn equilibrium_trajectory_is_constant() {
        let spec = DynamicsSpec::homogeneous(3, 0.5, |r| -(r - 0.5), |ri, rj| -(ri - rj)).unwrap();
        let g = CoverageGraph::complete(3);
        let t = integrate_continuous(&spec, &g, &[0.5; 3], 0.01, 100).unwrap();
        assert!(t.states.iter().all(|s| s == &vec![0.5; 3]));
        assert!(!t.blew_up);
    }

    #[test]
    fn continuous_two_node_matches_closed_form() {
        // dρ1/dt = -0.5(ρ1-ρ2): difference decays as exp(-t), mean constant
        let spec = DynamicsSpec::homogeneous(2, 0.5, |_| 0.0, |ri, rj| -0.5 * (ri - rj)).unwrap();
        let dt = 1e-3;
        let t = integrate_continuous(&spec, &k2(), &[0.8, 0.2], dt, 2000).unwrap();
        let end = t.last();
        let exact_diff = 0.6 * (-2.0f64).exp();
        assert_abs_diff_eq!(end[0] - end[1], exact_diff, epsilon = 1e-3);
        for s in &t.states {
            assert_abs_diff_eq!(mean(s), 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn unstable_dynamics_flag_blow_up() {
        let spec = DynamicsSpec::homogeneous(2, 0.0, |r| 2.0 * r, |_, _| 0.0).unwrap();
        let t = integrate_continuous(&spec, &k2(), &[0.1, 0.1], 0.1, 10_000).unwrap();
        assert!(t.blew_up);
        assert!(t.steps() < 10_000);
        assert!(matches!(
            integrate_continuous(&spec, &k2(), &[0.1, 0.1], 0.0, 1),
            Err(DynamicsError::InvalidTimeStep(_))
        ));
    }

    #[test]
    fn conservative_step_examples() {
        let next = step_conservative(&[0.8, 0.2], 0.25, &k2());
        assert_abs_diff_eq!(next[0], 0.65, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 0.35, epsilon = 1e-15);
        assert_eq!(
            step_conservative(&[0.1, 0.9, 0.4], 0.3, &CoverageGraph::empty(3)),
            vec![0.1, 0.9, 0.4]
        );
        let a = step_conservative(&[0.8, 0.2], 1.0, &k2());
        assert_abs_diff_eq!(a[0], 0.2, epsilon = 1e-15);
        let b = step_conservative(&a, 1.0, &k2());
        assert_abs_diff_eq!(b[0], 0.8, epsilon = 1e-15);
        assert_abs_diff_eq!(b[1], 0.2, epsilon = 1e-15);
    }

    #[test]
    fn nonconservative_step_example() {
        let eps = EpsilonMatrix::from_fn(2, |i, _| if i == 0 { 0.3 } else { 0.1 }).unwrap();
        let (next, omega) = step_nonconservative(&[0.2, 0.8], &eps, &k2());
        assert_abs_diff_eq!(next[0], 0.38, epsilon = 1e-15);
        assert_abs_diff_eq!(next[1], 0.74, epsilon = 1e-15);
        assert_abs_diff_eq!(omega[0], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(omega[1], 0.06, epsilon = 1e-15);
        assert_abs_diff_eq!(mean_drift(&omega), 0.06, epsilon = 1e-15);
    }

    #[test]
    fn symmetric_eps_reduces_to_conservative() {
        let g = CoverageGraph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let rho = [0.9, 0.1, 0.5, 0.3];
        let eps = EpsilonMatrix::uniform(4, 0.2).unwrap();
        let (next, omega) = step_nonconservative(&rho, &eps, &g);
        assert!(omega.iter().all(|&w| w == 0.0));
        let cons = step_conservative(&rho, 0.2, &g);
        for (a, b) in next.iter().zip(cons) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn epsilon_validation() {
        assert!(EpsilonMatrix::uniform(2, 1.0).is_err());
        assert!(EpsilonMatrix::uniform(2, -0.1).is_err());
        let diag = DMatrix::from_row_slice(2, 2, &[0.1, 0.2, 0.2, 0.0]);
        assert!(matches!(
            EpsilonMatrix::new(diag),
            Err(DynamicsError::InvalidEpsilon { row: 0, col: 0, .. })
        ));
    }

    #[test]
    fn error_state_examples() {
        assert_eq!(error_state(&[0.5, 0.5]), vec![0.0, 0.0]);
        let e = error_state(&[0.8, 0.2]);
        assert_abs_diff_eq!(e[0], 0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(e[1], -0.3, epsilon = 1e-15);
        assert_eq!(mean_drift(&[0.0, 0.0, 0.0]), 0.0);
    }

    #[test]
    fn self_term_pulls_nonconservative_run_back() {
        // asymmetric rates inject load; intra-station scheduling drains it
        let g = k2();
        let spec = DynamicsSpec::homogeneous(2, 0.5, |r| -0.2 * (r - 0.5), |_, _| 0.0).unwrap();
        let eps = EpsilonMatrix::from_fn(2, |i, _| if i == 0 { 0.3 } else { 0.1 }).unwrap();
        let (free, _) = run_nonconservative(&[0.2, 0.8], &g, 200, |_, _| eps.clone(), None);
        let (held, _) = run_nonconservative(&[0.2, 0.8], &g, 200, |_, _| eps.clone(), Some(&spec));
        let drift_free = (mean(free.last()) - 0.5).abs();
        let drift_held = (mean(held.last()) - 0.5).abs();
        assert!(drift_held < drift_free, "{drift_held} vs {drift_free}");
        assert_eq!(free.omegas.len(), 200);
    }
}
