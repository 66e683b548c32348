// Every continuous-time and discrete stability check on small models.

use loadsync::dynamics::{DynamicsSpec, LinearModel};
use loadsync::stability::{
    check_conservative_hetero, check_discrete_step, check_homogeneous,
    check_nonconservative_hetero, StabilityReport,
};
use loadsync::topology::{laplacian, CoverageGraph};
use nalgebra::DMatrix;

fn show(report: &StabilityReport) {
    println!("{}: {}", report.regime, report.verdict);
    for note in &report.notes {
        println!("  {note}");
    }
}

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let triangle = CoverageGraph::complete(3);

    // identical nonlinear terms: saturating self term, sine coupling
    let spec = DynamicsSpec::homogeneous(3, 0.5, |r| -(r - 0.5).tanh(), |ri, rj| (rj - ri).sin())?;
    show(&check_homogeneous(&spec, &triangle)?);

    // heterogeneous but symmetric coupling
    let h = DMatrix::from_row_slice(3, 3, &[0.0, -0.4, -0.2, -0.4, 0.0, -0.7, -0.2, -0.7, 0.0]);
    show(&check_conservative_hetero(&LinearModel::from_parts(
        &triangle,
        &[-0.3, -0.5, -0.2],
        &h,
    )?)?);

    // asymmetric coupling: node 2 receives far more than it sends
    let h = DMatrix::from_row_slice(3, 3, &[0.0, -0.4, -0.1, -0.4, 0.0, -0.1, -1.5, -1.5, 0.0]);
    let model = LinearModel::from_parts(&triangle, &[-0.8, -0.8, -0.1], &h)?;
    let report = check_nonconservative_hetero(&model)?;
    show(&report);
    println!(
        "  row slacks {:?}",
        report.series("row_slack").unwrap_or_default()
    );

    // discrete step sizes on the triangle (λmax = 3)
    for eps in [0.5, 0.7] {
        show(&check_discrete_step(&laplacian(&triangle), eps)?);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
