// Conservative discrete balancing on a 6-cycle just below and just above
// the step-size limit 2/λmax.

use loadsync::dynamics::{error_state, run_conservative};
use loadsync::topology::{laplacian, symmetric_eigenvalues, CoverageGraph, DEFAULT_EIGEN_TOL};

fn error_norm(rho: &[f64]) -> f64 {
    error_state(rho).iter().map(|e| e * e).sum::<f64>().sqrt()
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let n = 6;
    let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
    let graph = CoverageGraph::from_edges(n, &edges);
    let lambda_max = symmetric_eigenvalues(&laplacian(&graph), DEFAULT_EIGEN_TOL)?.max();
    let rho0 = [0.9, 0.2, 0.7, 0.1, 0.8, 0.3];

    for factor in [1.9, 2.05] {
        let eps = factor / lambda_max;
        let traj = run_conservative(&rho0, eps, &graph, 200);
        println!(
            "ε = {factor}/λmax = {eps:.4}: ‖e‖ {:.3e} -> {:.3e} after {} steps",
            error_norm(&rho0),
            error_norm(traj.last()),
            traj.steps()
        );
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
