// Coverage graph of the 4×4 station grid, its Laplacian spectrum, the
// Gershgorin discs that bound it, and the admissible consensus step sizes.

use loadsync::harness::{generate_scenario, ScenarioConfig};
use loadsync::topology::{
    build_coverage_graph, convergence_factor, gershgorin_discs, laplacian, symmetric_eigenvalues,
    DEFAULT_EIGEN_TOL,
};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let scenario = generate_scenario(&ScenarioConfig::default());
    let graph = build_coverage_graph(&scenario.positions(), &scenario.radii())?;
    println!(
        "{} stations, {} coverage edges, connected: {}",
        graph.n(),
        graph.edge_count(),
        graph.is_connected()
    );

    let l = laplacian(&graph);
    let spectrum = symmetric_eigenvalues(&l, DEFAULT_EIGEN_TOL)?;
    let rounded: Vec<String> = spectrum
        .eigenvalues
        .iter()
        .map(|v| format!("{:.3}", v + 0.0).replace("-0.000", "0.000"))
        .collect();
    println!("Laplacian spectrum: [{}]", rounded.join(", "));

    let widest = gershgorin_discs(&l)
        .iter()
        .map(|d| d.right_edge())
        .fold(0.0, f64::max);
    println!(
        "λmax = {:.3} ≤ Gershgorin bound {widest:.1}; any step below {:.3} converges",
        spectrum.max(),
        2.0 / spectrum.max()
    );
    for eps in [0.1, 0.25, 0.3, 0.4] {
        println!("  ε = {eps}: η = {:.4}", convergence_factor(&l, eps)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
