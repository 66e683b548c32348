// The greedy offset baseline against ALG1 on the same scenario: the greedy
// run keeps handing users back and forth, ALG1 goes quiet.

use loadsync::balancer::Policy;
use loadsync::harness::{run_config, ScenarioConfig};

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    for policy in [Policy::Greedy, Policy::Alg1] {
        let mut config = ScenarioConfig {
            user_demand_bps: 175e3,
            ..ScenarioConfig::default()
        };
        config.balancer.policy = policy;
        config.balancer.rho_th = 0.5;
        let trace = run_config(&config)?;
        let counts: Vec<String> = trace
            .metrics
            .iter()
            .map(|m| m.handovers.to_string())
            .collect();
        let (mean, sd) = trace.final_metrics();
        println!(
            "{policy}: {} rounds, quiesced: {}, final mean {mean:.4}, sd {sd:.4}",
            trace.rounds(),
            trace.quiesced
        );
        println!("  handovers per round: {}", counts.join(" "));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
