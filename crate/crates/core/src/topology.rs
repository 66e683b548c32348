//! Coverage graph, Laplacian, symmetric eigensolver and Gershgorin discs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::radio::Position;

pub const DEFAULT_EIGEN_TOL: f64 = 1e-12;
pub const MAX_JACOBI_SWEEPS: usize = 100;

/// Eigenvalues within this distance of zero count as the zero mode when
/// deciding connectivity.
pub const ZERO_EIGEN_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("position and radius lists differ in length ({positions} vs {radii})")]
    LengthMismatch { positions: usize, radii: usize },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("empty matrix")]
    Empty,
    #[error("asymmetric input: |m[{row}][{col}] - m[{col}][{row}]| = {gap:e} exceeds tolerance")]
    AsymmetricInput { row: usize, col: usize, gap: f64 },
    #[error("Jacobi sweeps did not converge (off-diagonal norm {residual:e})")]
    NoConvergence { residual: f64 },
    #[error("graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("step size must be positive, got {0}")]
    InvalidStep(f64),
}

/// Undirected coverage graph over base stations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageGraph {
    adjacency: Vec<Vec<bool>>,
}

impl CoverageGraph {
    /// Builds a graph from an explicit 0/1 matrix. The matrix is symmetrized
    /// (an edge in either direction connects both) and the diagonal ignored.
    pub fn from_adjacency(rows: &[Vec<u8>]) -> Result<Self, TopologyError> {
        let n = rows.len();
        if let Some(bad) = rows.iter().find(|r| r.len() != n) {
            return Err(TopologyError::NotSquare {
                rows: n,
                cols: bad.len(),
            });
        }
        let mut adjacency = vec![vec![false; n]; n];
        for i in 0..n {
            for j in 0..n {
                if i != j && (rows[i][j] != 0 || rows[j][i] != 0) {
                    adjacency[i][j] = true;
                }
            }
        }
        Ok(Self { adjacency })
    }

    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adjacency = vec![vec![false; n]; n];
        for &(i, j) in edges {
            if i != j {
                adjacency[i][j] = true;
                adjacency[j][i] = true;
            }
        }
        Self { adjacency }
    }

    pub fn empty(n: usize) -> Self {
        Self {
            adjacency: vec![vec![false; n]; n],
        }
    }

    pub fn complete(n: usize) -> Self {
        let mut g = Self::empty(n);
        for i in 0..n {
            for j in 0..n {
                g.adjacency[i][j] = i != j;
            }
        }
        g
    }

    pub fn n(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.adjacency[i][j]
    }

    /// `a_ij` as a real number.
    pub fn a(&self, i: usize, j: usize) -> f64 {
        if self.adjacency[i][j] {
            1.0
        } else {
            0.0
        }
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adjacency[i]
            .iter()
            .enumerate()
            .filter_map(|(j, &a)| a.then_some(j))
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].iter().filter(|&&a| a).count()
    }

    pub fn edge_count(&self) -> usize {
        (0..self.n()).map(|i| self.degree(i)).sum::<usize>() / 2
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let n = self.n();
        let mut out = Vec::new();
        for i in 0..n {
            for j in (i + 1)..n {
                if self.adjacency[i][j] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn adjacency_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |i, j| self.a(i, j))
    }

    pub fn degree_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(
            n,
            n,
            |i, j| if i == j { self.degree(i) as f64 } else { 0.0 },
        )
    }

    pub fn adjacency_rows(&self) -> Vec<Vec<u8>> {
        self.adjacency
            .iter()
            .map(|r| r.iter().map(|&a| u8::from(a)).collect())
            .collect()
    }

    /// Connected components by breadth-first search.
    pub fn component_count(&self) -> usize {
        let n = self.n();
        let mut seen = vec![false; n];
        let mut components = 0;
        for start in 0..n {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            let mut queue = std::collections::VecDeque::from([start]);
            while let Some(v) = queue.pop_front() {
                for w in self.neighbors(v) {
                    if !seen[w] {
                        seen[w] = true;
                        queue.push_back(w);
                    }
                }
            }
        }
        components
    }

    pub fn is_connected(&self) -> bool {
        self.component_count() <= 1
    }
}

/// Two stations share load iff their coverage disks overlap strictly:
/// `r_i + r_j > d_ij`.
pub fn build_coverage_graph(
    positions: &[Position],
    radii: &[f64],
) -> Result<CoverageGraph, TopologyError> {
    if positions.len() != radii.len() {
        return Err(TopologyError::LengthMismatch {
            positions: positions.len(),
            radii: radii.len(),
        });
    }
    let n = positions.len();
    let mut g = CoverageGraph::empty(n);
    for i in 0..n {
        for j in (i + 1)..n {
            if radii[i] + radii[j] > positions[i].distance_m(&positions[j]) {
                g.adjacency[i][j] = true;
                g.adjacency[j][i] = true;
            }
        }
    }
    Ok(g)
}

/// `L = D - A`.
pub fn laplacian(graph: &CoverageGraph) -> DMatrix<f64> {
    graph.degree_matrix() - graph.adjacency_matrix()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    /// Off-diagonal Frobenius norm left after the final sweep.
    pub achieved_tolerance: f64,
}

impl SpectrumResult {
    pub fn min(&self) -> f64 {
        self.eigenvalues[0]
    }

    pub fn max(&self) -> f64 {
        *self.eigenvalues.last().expect("non-empty spectrum")
    }
}

/// Eigenvalues plus orthonormal eigenvectors (column `k` pairs with
/// `eigenvalues[k]`).
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: DMatrix<f64>,
    pub achieved_tolerance: f64,
}

fn check_symmetric(m: &DMatrix<f64>, tol: f64) -> Result<(), TopologyError> {
    let (rows, cols) = m.shape();
    if rows != cols {
        return Err(TopologyError::NotSquare { rows, cols });
    }
    if rows == 0 {
        return Err(TopologyError::Empty);
    }
    let scale = m.amax().max(1.0);
    for i in 0..rows {
        for j in (i + 1)..rows {
            let gap = (m[(i, j)] - m[(j, i)]).abs();
            if gap > tol * scale {
                return Err(TopologyError::AsymmetricInput {
                    row: i,
                    col: j,
                    gap,
                });
            }
        }
    }
    Ok(())
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Cyclic Jacobi eigen-decomposition of a real symmetric matrix.
///
/// Sweeps over every `(p, q)` pair with `p < q`, annihilating `a[p][q]` by a
/// plane rotation, until the off-diagonal Frobenius norm drops below
/// `tol * max(1, ||m||_F)` or [`MAX_JACOBI_SWEEPS`] is reached.
pub fn symmetric_eigen(m: &DMatrix<f64>, tol: f64) -> Result<SymmetricEigen, TopologyError> {
    check_symmetric(m, tol.max(DEFAULT_EIGEN_TOL))?;
    let n = m.nrows();
    // work on the exact symmetric part so tiny asymmetries do not bias the rotations
    let mut a = (m + m.transpose()) * 0.5;
    let mut v = DMatrix::<f64>::identity(n, n);
    let threshold = tol * a.norm().max(1.0);

    let mut residual = off_diagonal_norm(&a);
    let mut sweeps = 0;
    while residual > threshold && sweeps < MAX_JACOBI_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;

                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
        sweeps += 1;
        residual = off_diagonal_norm(&a);
    }
    if residual > threshold {
        return Err(TopologyError::NoConvergence { residual });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let eigenvalues = order.iter().map(|&i| a[(i, i)]).collect();
    let eigenvectors = DMatrix::from_fn(n, n, |row, col| v[(row, order[col])]);
    Ok(SymmetricEigen {
        eigenvalues,
        eigenvectors,
        achieved_tolerance: residual,
    })
}

pub fn symmetric_eigenvalues(m: &DMatrix<f64>, tol: f64) -> Result<SpectrumResult, TopologyError> {
    let eig = symmetric_eigen(m, tol)?;
    Ok(SpectrumResult {
        eigenvalues: eig.eigenvalues,
        achieved_tolerance: eig.achieved_tolerance,
    })
}

/// `(M + Mᵀ) / 2`.
pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GershgorinDisc {
    pub center: f64,
    pub radius: f64,
}

impl GershgorinDisc {
    pub fn right_edge(&self) -> f64 {
        self.center + self.radius
    }

    pub fn left_edge(&self) -> f64 {
        self.center - self.radius
    }

    pub fn contains(&self, x: f64, tol: f64) -> bool {
        (x - self.center).abs() <= self.radius + tol
    }
}

/// One disc per row: center `M_ii`, radius `Σ_{j≠i} |M_ij|`.
pub fn gershgorin_discs(m: &DMatrix<f64>) -> Vec<GershgorinDisc> {
    (0..m.nrows())
        .map(|i| GershgorinDisc {
            center: m[(i, i)],
            radius: (0..m.ncols())
                .filter(|&j| j != i)
                .map(|j| m[(i, j)].abs())
                .sum(),
        })
        .collect()
}

/// Number of Laplacian eigenvalues within [`ZERO_EIGEN_TOL`] of zero, i.e.
/// the number of connected components.
pub fn zero_mode_count(spectrum: &SpectrumResult) -> usize {
    let scale = spectrum.max().abs().max(1.0);
    spectrum
        .eigenvalues
        .iter()
        .filter(|l| l.abs() <= ZERO_EIGEN_TOL * scale)
        .count()
}

/// `max_{i≥2} |1 - eps·λ_i|` for the Laplacian `l` of a connected graph.
pub fn convergence_factor(l: &DMatrix<f64>, eps: f64) -> Result<f64, TopologyError> {
    if !(eps > 0.0) {
        return Err(TopologyError::InvalidStep(eps));
    }
    let spectrum = symmetric_eigenvalues(l, DEFAULT_EIGEN_TOL)?;
    convergence_factor_from_spectrum(&spectrum, eps)
}

pub fn convergence_factor_from_spectrum(
    spectrum: &SpectrumResult,
    eps: f64,
) -> Result<f64, TopologyError> {
    let zeros = zero_mode_count(spectrum);
    if zeros > 1 {
        return Err(TopologyError::Disconnected { components: zeros });
    }
    Ok(spectrum
        .eigenvalues
        .iter()
        .skip(1)
        .map(|l| (1.0 - eps * l).abs())
        .fold(0.0, f64::max))
}

/// Projects onto the subspace orthogonal to the all-ones vector: `P M P`
/// with `P = I - 11ᵀ/n`.
pub fn deflate_mean_mode(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    let p = DMatrix::<f64>::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64);
    &p * m * &p
}

pub fn dvector(values: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(values)
}
