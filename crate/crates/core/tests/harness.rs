use loadsync::balancer::Policy;
use loadsync::harness::{history_csv, parse_history, run_config, ScenarioConfig, SimulationTrace};

fn config(seed: u64, policy: Policy) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        seed,
        user_count: 220,
        user_demand_bps: 175e3,
        ..ScenarioConfig::default()
    };
    c.balancer.policy = policy;
    c.balancer.rho_th = 0.5;
    c
}

#[test]
fn configuration_survives_a_toml_round_trip() {
    for policy in Policy::ALL {
        let c = config(9, policy);
        assert_eq!(
            ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap(),
            c
        );
    }
}

#[test]
fn same_seed_same_trace() {
    for policy in Policy::ALL {
        let a = run_config(&config(4, policy)).unwrap();
        let b = run_config(&config(4, policy)).unwrap();
        assert_eq!(a.to_json(), b.to_json(), "{policy}");
        let c = run_config(&config(5, policy)).unwrap();
        assert_ne!(
            a.load_history[0], c.load_history[0],
            "{policy}: seeds should move users"
        );
    }
}

#[test]
fn traces_round_trip_through_json_and_csv() {
    let trace = run_config(&config(2, Policy::Greedy)).unwrap();
    let back = SimulationTrace::from_json(&trace.to_json()).unwrap();
    assert_eq!(back, trace);
    let (history, metrics) = parse_history(&history_csv(&trace)).unwrap();
    assert_eq!(history, trace.load_history);
    assert_eq!(metrics, trace.metrics);
}

#[test]
fn realized_rates_reproduce_each_round() {
    let trace = run_config(&config(6, Policy::Alg1)).unwrap();
    let graph = trace.graph().unwrap();
    let mut states = trace.load_history.clone();
    states.push(trace.final_loads.clone());
    for (k, eps) in trace.eps_history.iter().enumerate() {
        let eps = eps.as_ref().expect("admissible rates");
        let (next, omega) = loadsync::dynamics::step_nonconservative(&states[k], eps, &graph);
        for (a, b) in next.iter().zip(&states[k + 1]) {
            assert!((a - b).abs() <= 1e-12, "round {k}");
        }
        for (a, b) in omega.iter().zip(&trace.omega_history[k]) {
            assert!((a - b).abs() <= 1e-12, "round {k}");
        }
    }
}

#[test]
fn sd_squared_times_n_is_the_lyapunov_value() {
    let trace = run_config(&config(8, Policy::Greedy)).unwrap();
    let v = loadsync::stability::lyapunov_series(&trace.trajectory());
    let n = trace.station_count() as f64;
    for (m, v) in trace.metrics.iter().zip(&v) {
        assert!((m.sd * m.sd * n - v).abs() <= 1e-12, "round {}", m.round);
    }
}

#[test]
fn hundred_rounds_make_a_hundred_and_one_line_history() {
    let mut c = config(1, Policy::Greedy);
    c.rounds = Some(100);
    let trace = run_config(&c).unwrap();
    assert_eq!(trace.rounds(), 100);
    assert_eq!(history_csv(&trace).lines().count(), 101);
}
