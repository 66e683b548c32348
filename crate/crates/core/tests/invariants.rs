use loadsync::dynamics::{
    error_state, linearize, mean, mean_drift, step_conservative, step_nonconservative,
    DynamicsSpec, EpsilonMatrix,
};
use loadsync::topology::{
    gershgorin_discs, laplacian, symmetric_eigen, symmetric_eigenvalues, CoverageGraph,
    DEFAULT_EIGEN_TOL,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn symmetric(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(-5.0..5.0f64, n * n).prop_map(move |v| {
        let m = DMatrix::from_vec(n, n, v);
        (&m + m.transpose()) * 0.5
    })
}

fn any_symmetric() -> impl Strategy<Value = DMatrix<f64>> {
    (1usize..=8).prop_flat_map(symmetric)
}

/// Connected graph: a random tree (each node hangs off an earlier one) plus
/// random extra edges.
fn connected_graph() -> impl Strategy<Value = CoverageGraph> {
    (2usize..=12).prop_flat_map(|n| {
        let parents = prop::collection::vec(any::<prop::sample::Index>(), n - 1);
        let extra = prop::collection::vec(any::<bool>(), n * n);
        (Just(n), parents, extra).prop_map(|(n, parents, extra)| {
            let mut edges: Vec<(usize, usize)> = parents
                .iter()
                .enumerate()
                .map(|(k, p)| (p.index(k + 1), k + 1))
                .collect();
            for i in 0..n {
                for j in (i + 1)..n {
                    if extra[i * n + j] && extra[j * n + i] && !edges.contains(&(i, j)) {
                        edges.push((i, j));
                    }
                }
            }
            CoverageGraph::from_edges(n, &edges)
        })
    })
}

fn loads(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0..1.5f64, n)
}

fn rates(graph: &CoverageGraph, raw: &[f64]) -> EpsilonMatrix {
    let n = graph.n();
    let max_degree = (0..n).map(|i| graph.degree(i)).max().unwrap_or(1).max(1) as f64;
    EpsilonMatrix::new(DMatrix::from_fn(n, n, |i, j| {
        if graph.is_adjacent(i, j) {
            raw[i * n + j] / max_degree
        } else {
            0.0
        }
    }))
    .unwrap()
}

proptest! {
    #[test]
    fn eigenvalues_lie_in_gershgorin_discs(m in any_symmetric()) {
        let spectrum = symmetric_eigenvalues(&m, DEFAULT_EIGEN_TOL).unwrap();
        let discs = gershgorin_discs(&m);
        for lambda in spectrum.eigenvalues {
            prop_assert!(discs.iter().any(|d| d.contains(lambda, 1e-9)), "{lambda} outside every disc");
        }
    }

    #[test]
    fn jacobi_agrees_with_reference_solver(m in any_symmetric()) {
        let ours = symmetric_eigenvalues(&m, DEFAULT_EIGEN_TOL).unwrap().eigenvalues;
        let mut reference: Vec<f64> = nalgebra::SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().collect();
        reference.sort_by(f64::total_cmp);
        for (a, b) in ours.iter().zip(&reference) {
            prop_assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn eigenvectors_reconstruct_the_matrix(m in any_symmetric()) {
        let eig = symmetric_eigen(&m, DEFAULT_EIGEN_TOL).unwrap();
        let lambda = DMatrix::from_diagonal(&DVector::from_vec(eig.eigenvalues.clone()));
        let rebuilt = &eig.eigenvectors * lambda * eig.eigenvectors.transpose();
        prop_assert!((rebuilt - &m).amax() <= 1e-9);
        let gram = eig.eigenvectors.transpose() * &eig.eigenvectors;
        prop_assert!((gram - DMatrix::identity(m.nrows(), m.nrows())).amax() <= 1e-9);
    }

    #[test]
    fn laplacian_has_one_zero_mode_per_component(graph in connected_graph()) {
        let spectrum = symmetric_eigenvalues(&laplacian(&graph), DEFAULT_EIGEN_TOL).unwrap();
        prop_assert!(spectrum.min().abs() <= 1e-9);
        prop_assert!(spectrum.eigenvalues[1] > 1e-9);
    }

    #[test]
    fn conservative_step_keeps_the_mean(
        (graph, rho) in connected_graph().prop_flat_map(|g| { let n = g.n(); (Just(g), loads(n)) }),
        eps in 0.0..0.5f64,
    ) {
        let next = step_conservative(&rho, eps, &graph);
        prop_assert!((mean(&next) - mean(&rho)).abs() <= 1e-12);
    }

    #[test]
    fn conservative_error_follows_the_laplacian(
        (graph, rho) in connected_graph().prop_flat_map(|g| { let n = g.n(); (Just(g), loads(n)) }),
        eps in 0.0..0.5f64,
    ) {
        let n = graph.n();
        let e = DVector::from_vec(error_state(&rho));
        let expected = (DMatrix::identity(n, n) - laplacian(&graph) * eps) * e;
        let got = DVector::from_vec(error_state(&step_conservative(&rho, eps, &graph)));
        prop_assert!((got - expected).amax() <= 1e-12);
    }

    #[test]
    fn nonconservative_error_evolution(
        (graph, rho, raw) in connected_graph().prop_flat_map(|g| {
            let n = g.n();
            (Just(g), loads(n), prop::collection::vec(0.0..0.99f64, n * n))
        }),
    ) {
        let n = graph.n();
        let eps = rates(&graph, &raw);
        let (next, omega) = step_nonconservative(&rho, &eps, &graph);
        // the mean drifts by exactly the mean residual
        prop_assert!((mean(&next) - mean(&rho) - mean_drift(&omega)).abs() <= 1e-12);
        // e(k+1) = (I - L̂) e(k) + ω - ω̄·1
        let e = DVector::from_vec(error_state(&rho));
        let drift = mean_drift(&omega);
        let residual = DVector::from_iterator(n, omega.iter().map(|w| w - drift));
        let expected = (DMatrix::identity(n, n) - eps.averaged_laplacian(&graph)) * e + residual;
        let got = DVector::from_vec(error_state(&next));
        prop_assert!((got - expected).amax() <= 1e-12);
    }

    #[test]
    fn symmetric_rates_transfer_conservatively(
        (graph, rho, raw) in connected_graph().prop_flat_map(|g| {
            let n = g.n();
            (Just(g), loads(n), prop::collection::vec(0.0..0.99f64, n * n))
        }),
    ) {
        let n = graph.n();
        let sym: Vec<f64> = (0..n * n).map(|k| raw[(k % n) * n + k / n].min(raw[k])).collect();
        let eps = rates(&graph, &sym);
        prop_assert!(eps.is_symmetric());
        let (_, omega) = step_nonconservative(&rho, &eps, &graph);
        prop_assert!(omega.iter().all(|w| w.abs() <= 1e-15));
    }

    #[test]
    fn diffusive_coupling_has_negative_slope(k in 0.01..5.0f64, rho_bar in 0.1..0.9f64) {
        let graph = CoverageGraph::complete(3);
        let spec = DynamicsSpec::homogeneous(3, rho_bar, move |r| -(r - rho_bar), move |ri, rj| k * (rj - ri)).unwrap();
        let model = linearize(&spec, &graph).unwrap();
        for (i, j) in graph.edges() {
            prop_assert!(model.h[(i, j)] < 0.0);
            prop_assert!((model.h[(i, j)] + k).abs() <= 1e-6);
        }
    }
}
