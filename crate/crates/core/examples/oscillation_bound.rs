// Non-conservative transfer on a 3×3 lattice: asymmetric rates leave a
// residual that the oscillation bound caps.

use loadsync::dynamics::{run_nonconservative, EpsilonMatrix};
use loadsync::harness::{bound_summary, BoundInput, DiscreteTrace};
use loadsync::topology::CoverageGraph;
use nalgebra::DMatrix;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let mut edges = Vec::new();
    for r in 0..3 {
        for c in 0..3 {
            let i = r * 3 + c;
            if c < 2 {
                edges.push((i, i + 1));
            }
            if r < 2 {
                edges.push((i, i + 3));
            }
        }
    }
    let graph = CoverageGraph::from_edges(9, &edges);
    // stations take in more readily toward higher indices
    let eps = EpsilonMatrix::new(DMatrix::from_fn(9, 9, |i, j| {
        match graph.is_adjacent(i, j) {
            true if j > i => 0.20,
            true => 0.08,
            false => 0.0,
        }
    }))?;
    let rho0 = [0.9, 0.1, 0.5, 0.3, 0.8, 0.2, 0.6, 0.4, 0.7];
    let (traj, history) = run_nonconservative(&rho0, &graph, 300, |_, _| eps.clone(), None);

    let summary = bound_summary(&BoundInput::Discrete(DiscreteTrace::from_run(
        &graph, &traj, &history,
    )))?;
    println!(
        "γ̃ = {:.4}, α_max = {:.4}, Ṽ = {}",
        summary.gamma_max,
        summary.alpha_max,
        summary
            .v_tilde
            .map_or("undefined".to_owned(), |v| format!("{v:.4}"))
    );
    println!(
        "sup V over the second half: {:.3e}",
        summary.tail_sup_v.unwrap_or(f64::NAN)
    );
    println!(
        "mean load {:.4} -> {:.4}",
        rho0.iter().sum::<f64>() / 9.0,
        traj.last().iter().sum::<f64>() / 9.0
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
