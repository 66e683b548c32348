// A small parameter sweep over user counts and policies, reduced to the
// seed-averaged table.

use std::collections::BTreeMap;

use loadsync::balancer::Policy;
use loadsync::harness::{run_sweep, sweep_table_csv, ScenarioConfig, SweepSpec};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let base = ScenarioConfig {
        user_demand_bps: 175e3,
        ..ScenarioConfig::default()
    };
    let spec = SweepSpec {
        users: vec![200, 400],
        accommodation: vec![0.25],
        policies: vec![Policy::Alg1, Policy::Alg2, Policy::Alg3],
        seeds: (1..=5).collect(),
        thresholds: BTreeMap::from([(200, 0.5), (400, 0.6)]),
    };
    let cells = run_sweep(&base, &spec, 2, |_, _, _| Ok(()))?;
    print!("{}", sweep_table_csv(&cells));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
