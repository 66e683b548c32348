// One accommodation-capped balancing round (ALG1) on the default
// scenario: budgets, accepted handovers and the offsets written back.

use loadsync::balancer::{balance_round, round_budgets, RadioContext};
use loadsync::harness::{associate_users, generate_scenario, load_mean_sd, ScenarioConfig};
use loadsync::topology::build_coverage_graph;

pub fn run_example() -> Result<(), Box<dyn std::error::Error>> {
    let config = ScenarioConfig::default();
    let scenario = generate_scenario(&config);
    let graph = build_coverage_graph(&scenario.positions(), &scenario.radii())?;
    let map = scenario.radio_map();
    let ctx = RadioContext::new(&scenario, &map);
    let state = associate_users(&scenario, &map)?;
    let params = &config.balancer;

    let loads = state.loads();
    let budgets = round_budgets(&loads, &graph, params);
    for (i, (load, budget)) in loads.iter().zip(&budgets).enumerate() {
        println!("bs {i:>2}: load {load:.3}, budget {budget:+.3}");
    }

    let (next, events) = balance_round(&state, &graph, params, &ctx, 0);
    for e in &events {
        let r = &e.request;
        println!(
            "user {} : {} -> {} (out {:.2}, in {:.2}), θ now {:.2} dB",
            r.user,
            r.source,
            r.target,
            r.load_out,
            r.load_in,
            next.cio
                .get(&(r.target, r.source))
                .copied()
                .unwrap_or_default()
        );
    }
    let (m0, sd0) = load_mean_sd(&loads);
    let (m1, sd1) = load_mean_sd(&next.loads());
    println!(
        "{} handovers; mean {m0:.4} -> {m1:.4}, sd {sd0:.4} -> {sd1:.4}",
        events.len()
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Box<dyn std::error::Error>> {
    run_example()
}
