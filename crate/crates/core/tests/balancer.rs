use std::collections::BTreeSet;

use loadsync::balancer::{
    a3_trigger, balance_round, build_requests, cio, round_budgets, HandoverEvent, LoadState,
    Policy, RadioContext, LOAD_TOL,
};
use loadsync::harness::{associate_users, generate_scenario, run_config, ScenarioConfig};
use loadsync::radio::Scenario;
use loadsync::topology::{build_coverage_graph, CoverageGraph};

fn config(seed: u64, users: usize, policy: Policy) -> ScenarioConfig {
    let mut c = ScenarioConfig {
        seed,
        user_count: users,
        user_demand_bps: 175e3,
        ..ScenarioConfig::default()
    };
    c.balancer.policy = policy;
    c.balancer.rho_th = 0.5;
    c
}

struct Setup {
    scenario: Scenario,
    graph: CoverageGraph,
}

fn setup(c: &ScenarioConfig) -> Setup {
    let scenario = generate_scenario(c);
    let graph = build_coverage_graph(&scenario.positions(), &scenario.radii()).unwrap();
    Setup { scenario, graph }
}

/// Drives a run round by round, handing each round's input and output to `check`.
fn each_round(
    c: &ScenarioConfig,
    mut check: impl FnMut(&LoadState, &LoadState, &[HandoverEvent], &RadioContext<'_>, &CoverageGraph),
) {
    let s = setup(c);
    let map = s.scenario.radio_map();
    let ctx = RadioContext::new(&s.scenario, &map);
    let mut state = associate_users(&s.scenario, &map).unwrap();
    for round in 0..c.effective_rounds() {
        let (next, events) = balance_round(&state, &s.graph, &c.balancer, &ctx, round);
        check(&state, &next, &events, &ctx, &s.graph);
        let quiet = events.is_empty() && c.balancer.policy != Policy::Greedy;
        state = next;
        if quiet {
            break;
        }
    }
}

const SEEDS: std::ops::RangeInclusive<u64> = 1..=6;

#[test]
fn moved_users_satisfy_a3_under_the_updated_offsets() {
    for policy in [Policy::Alg1, Policy::Alg2, Policy::Alg3] {
        for seed in SEEDS {
            each_round(&config(seed, 300, policy), |_, next, events, ctx, _| {
                for e in events {
                    let r = &e.request;
                    let theta = cio(&next.cio, r.target, r.source);
                    assert!(
                        a3_trigger(
                            ctx.rsrp(r.user, r.target),
                            ctx.rsrp(r.user, r.source),
                            theta,
                            ctx.hysteresis_db()
                        ),
                        "{policy} seed {seed}: user {} not covered by θ = {theta}",
                        r.user
                    );
                }
            });
        }
    }
}

#[test]
fn intake_stays_within_the_opening_budget() {
    for policy in [Policy::Alg1, Policy::Alg2, Policy::Alg3] {
        for seed in SEEDS {
            let c = config(seed, 400, policy);
            each_round(&c, |before, _, events, _, graph| {
                let budgets = round_budgets(&before.loads(), graph, &c.balancer);
                let mut intake = vec![0.0; before.n()];
                for e in events {
                    intake[e.request.target] += e.request.load_in;
                }
                for (t, taken) in intake.iter().enumerate() {
                    if *taken > 0.0 {
                        assert!(
                            *taken <= budgets[t] + 1e-9,
                            "{policy} seed {seed}: bs {t} took {taken} > {}",
                            budgets[t]
                        );
                    }
                }
            });
        }
    }
}

#[test]
fn every_user_moves_at_most_once_per_round() {
    for policy in Policy::ALL {
        for seed in SEEDS {
            each_round(&config(seed, 300, policy), |_, _, events, _, _| {
                let mut seen = BTreeSet::new();
                for e in events {
                    assert!(
                        seen.insert(e.request.user),
                        "{policy} seed {seed}: user {} moved twice",
                        e.request.user
                    );
                }
            });
        }
    }
}

#[test]
fn bookkeeping_matches_the_assignment() {
    for policy in Policy::ALL {
        for seed in SEEDS {
            each_round(&config(seed, 300, policy), |_, next, _, ctx, _| {
                let mut prbs = vec![0u64; next.n()];
                for (user, &bs) in next.serving.iter().enumerate() {
                    let share = ctx.load_share(user, bs).expect("served user is reachable");
                    prbs[bs] += (share * f64::from(ctx.total_prbs(bs))).round() as u64;
                }
                assert_eq!(prbs, next.prbs_used, "{policy} seed {seed}");
            });
        }
    }
}

#[test]
fn alg1_accepts_the_smallest_mismatch_first() {
    for seed in SEEDS {
        let c = config(seed, 400, Policy::Alg1);
        let s = setup(&c);
        let map = s.scenario.radio_map();
        let ctx = RadioContext::new(&s.scenario, &map);
        let state = associate_users(&s.scenario, &map).unwrap();
        let (_, events) = balance_round(&state, &s.graph, &c.balancer, &ctx, 0);
        let Some(first) = events.first() else {
            continue;
        };

        let loads = state.loads();
        let budgets = round_budgets(&loads, &s.graph, &c.balancer);
        let lists = build_requests(
            &state,
            &s.graph,
            &c.balancer,
            &ctx,
            &budgets,
            &BTreeSet::new(),
        );
        let best = lists
            .iter()
            .filter(|l| l.target == first.request.target)
            .flat_map(|l| l.requests.iter())
            .filter(|r| {
                let gap = loads[r.source] - loads[r.target] - LOAD_TOL;
                r.load_in <= budgets[r.target] + LOAD_TOL && r.load_in < gap && r.load_out < gap
            })
            .map(|r| r.rank_key)
            .fold(f64::INFINITY, f64::min);
        assert_eq!(first.request.rank_key, best, "seed {seed}");
        assert_eq!(
            first.request.rank_key,
            (first.request.load_out - first.request.load_in).abs()
        );
    }
}

#[test]
fn greedy_offsets_stay_antisymmetric_and_clamped() {
    let c = config(3, 300, Policy::Greedy);
    let limit = c.balancer.greedy_cio_limit_db;
    each_round(&c, |_, next, _, _, graph| {
        for (i, j) in graph.edges() {
            let a = cio(&next.cio, i, j);
            assert_eq!(a, -cio(&next.cio, j, i));
            assert!(a.abs() <= limit);
        }
    });
}

#[test]
fn capped_policies_quiesce() {
    for policy in [Policy::Alg1, Policy::Alg2, Policy::Alg3] {
        for seed in SEEDS {
            let trace = run_config(&config(seed, 400, policy)).unwrap();
            assert!(trace.quiesced, "{policy} seed {seed}");
            assert_eq!(trace.metrics.last().unwrap().handovers, 0);
        }
    }
}
