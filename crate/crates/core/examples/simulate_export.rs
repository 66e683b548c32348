// Runs a configuration written in TOML and exports the trace files, then
// reads the trace back for the oscillation bound.

use loadsync::harness::{
    bound_summary, export, load_trace, run_config, BoundInput, ScenarioConfig, TRACE_FILE,
};

const CONFIG: &str = r#"
seed = 7
user_count = 250
user_demand_bps = 175e3

[balancer]
policy = "alg3"
rho_th = 0.5
accommodation_factor = 0.3
"#;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let config = ScenarioConfig::from_toml_str(CONFIG)?;
    let trace = run_config(&config)?;
    let dir = std::env::temp_dir().join(format!("loadsync-example-{}", std::process::id()));
    for path in export(&trace, &dir, true)? {
        println!("wrote {}", path.display());
    }

    let reloaded = load_trace(&dir.join(TRACE_FILE))?;
    let summary = bound_summary(&BoundInput::Simulation(Box::new(reloaded)))?;
    println!(
        "{} rounds, {} handovers; γ̃ = {:.3}, α_max = {:.4}, Ṽ = {:?}, sup V = {:?}",
        trace.rounds(),
        trace.total_handovers(),
        summary.gamma_max,
        summary.alpha_max,
        summary.v_tilde,
        summary.tail_sup_v
    );
    for report in &trace.stability {
        println!("{}: {}", report.regime, report.verdict);
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
