//! Command-line surface: `simulate`, `analyze`, `bound` and `sweep`.
//!
//! Exit status is 0 on success, 1 when a run fails, and 2 for usage or input
//! problems (bad flags, unreadable or invalid configuration, malformed
//! traces). Output directories default to `$LOADSYNC_OUT` and are never
//! overwritten without `--force`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::balancer::Policy;
use crate::harness::{
    analyze_model, analyze_scenario, bound_summary, export, load_mean_sd, run_config, run_sweep,
    sweep_table_csv, BoundInput, HarnessError, ModelFile, ScenarioConfig, SimulationTrace,
    SweepSpec,
};
use crate::stability::StabilityReport;

pub const ANALYSIS_FILE: &str = "analysis.json";
pub const SWEEP_TABLE_FILE: &str = "summary.csv";

#[derive(Debug, Parser)]
#[command(
    name = "loadsync",
    version,
    about = "Inter-base-station load balancing: simulation, stability analysis and oscillation bounds"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one seeded simulation and export its trace.
    Simulate(SimulateArgs),
    /// Stability report for a scenario, a linearized model or a trace.
    Analyze(AnalyzeArgs),
    /// Oscillation bound of a recorded run.
    Bound(BoundArgs),
    /// Run a grid of user counts, accommodation factors and policies.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, short, env = "LOADSYNC_OUT", default_value = "loadsync-out")]
    pub out: PathBuf,
    /// Replace existing output files.
    #[arg(long)]
    pub force: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// Balancing policy: alg1, alg2, alg3 or greedy.
    #[arg(long)]
    pub policy: Option<Policy>,
    /// Override the configuration's seed (moves users, not stations).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the round cap.
    #[arg(long)]
    pub rounds: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    /// Scenario TOML, model TOML (with a [model] table) or trace JSON.
    pub input: PathBuf,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct BoundArgs {
    /// Trace JSON: a simulation trace, a discrete trace or alpha/gamma series.
    pub trace: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Base scenario configuration (TOML).
    #[arg(long, short)]
    pub config: PathBuf,
    /// User counts, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub users: Vec<usize>,
    /// Accommodation factors, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub accommodation: Vec<f64>,
    /// Policies, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "alg1")]
    pub policies: Vec<Policy>,
    /// Number of seeds per cell, counted up from the configuration's seed.
    #[arg(long, default_value_t = 20)]
    pub seeds: u64,
    /// Overload threshold per user count, e.g. `400=0.6`; repeatable.
    #[arg(long = "threshold", value_parser = parse_threshold)]
    pub thresholds: Vec<(usize, f64)>,
    /// Worker threads.
    #[arg(long, default_value_t = default_workers())]
    pub workers: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn parse_threshold(s: &str) -> Result<(usize, f64), String> {
    let (users, th) = s
        .split_once('=')
        .ok_or_else(|| format!("expected USERS=THRESHOLD, got `{s}`"))?;
    let users = users
        .trim()
        .parse()
        .map_err(|e| format!("bad user count: {e}"))?;
    let th = th
        .trim()
        .parse()
        .map_err(|e| format!("bad threshold: {e}"))?;
    Ok((users, th))
}

/// A failed command: message plus exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn usage(e: impl std::fmt::Display) -> Self {
        Self {
            code: 2,
            message: e.to_string(),
        }
    }

    fn runtime(e: impl std::fmt::Display) -> Self {
        Self {
            code: 1,
            message: e.to_string(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

pub fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Simulate(args) => simulate(args),
        Command::Analyze(args) => analyze(args),
        Command::Bound(args) => bound(args),
        Command::Sweep(args) => sweep(args),
    }
}

fn load_config(path: &Path) -> Result<ScenarioConfig, Failure> {
    ScenarioConfig::load(path).map_err(Failure::usage)
}

fn read_input(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))
}

fn write_new(path: &Path, body: &str, force: bool) -> Result<(), Failure> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)
            .map_err(|e| Failure::runtime(format!("{}: {e}", parent.display())))?;
    }
    if path.exists() && !force {
        return Err(Failure::runtime(HarnessError::WouldOverwrite {
            path: path.to_path_buf(),
        }));
    }
    fs::write(path, body).map_err(|e| Failure::runtime(format!("{}: {e}", path.display())))
}

fn runtime(e: HarnessError) -> Failure {
    match e {
        HarnessError::Config(_) => Failure::usage(e),
        other => Failure::runtime(other),
    }
}

fn print_reports(reports: &[StabilityReport]) {
    for r in reports {
        println!("{}: {}", r.regime, r.verdict);
        for note in &r.notes {
            println!("  note: {note}");
        }
    }
    println!(
        "{}",
        serde_json::to_string_pretty(reports).expect("reports serialize")
    );
}

fn simulate(args: SimulateArgs) -> Result<(), Failure> {
    let mut config = load_config(&args.config)?;
    if let Some(policy) = args.policy {
        config.balancer.policy = policy;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.rounds.is_some() {
        config.rounds = args.rounds;
    }
    config.validate().map_err(Failure::usage)?;
    let trace = run_config(&config).map_err(runtime)?;
    export(&trace, &args.output.out, args.output.force).map_err(runtime)?;
    print_summary(&config, &trace);
    println!("trace written to {}", args.output.out.display());
    Ok(())
}

fn print_summary(config: &ScenarioConfig, trace: &SimulationTrace) {
    let (m0, sd0) = load_mean_sd(trace.initial_loads());
    let (m1, sd1) = trace.final_metrics();
    println!(
        "policy {} seed {} users {}: {} rounds, {} handovers{}",
        config.balancer.policy,
        config.seed,
        config.user_count,
        trace.rounds(),
        trace.total_handovers(),
        if trace.quiesced { ", quiesced" } else { "" }
    );
    println!("initial mean {m0:.4} sd {sd0:.4}");
    println!("final   mean {m1:.4} sd {sd1:.4}");
    for r in &trace.stability {
        println!("{}: {}", r.regime, r.verdict);
    }
}

fn analyze(args: AnalyzeArgs) -> Result<(), Failure> {
    let text = read_input(&args.input)?;
    let is_json = args.input.extension().is_some_and(|e| e == "json");
    let reports = if is_json {
        SimulationTrace::from_json(&text)
            .map_err(Failure::usage)?
            .stability
    } else {
        let table: toml::Table = toml::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", args.input.display())))?;
        if table.contains_key("model") {
            let model = ModelFile::from_toml_str(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", args.input.display())))?;
            analyze_model(&model.model).map_err(runtime)?
        } else {
            let config = ScenarioConfig::from_toml_str(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", args.input.display())))?;
            analyze_scenario(&config).map_err(runtime)?
        }
    };
    print_reports(&reports);
    let body = serde_json::to_string_pretty(&reports).expect("reports serialize");
    write_new(
        &args.output.out.join(ANALYSIS_FILE),
        &body,
        args.output.force,
    )
}

fn bound(args: BoundArgs) -> Result<(), Failure> {
    let input = BoundInput::from_json(&read_input(&args.trace)?).map_err(Failure::usage)?;
    let summary = bound_summary(&input).map_err(runtime)?;
    println!("gamma_sup   {}", summary.gamma_max);
    println!("alpha_sup   {}", summary.alpha_max);
    match summary.v_tilde {
        Some(v) => println!("v_tilde     {v}"),
        None => println!("v_tilde     undefined"),
    }
    if let Some(tail) = summary.tail_sup_v {
        println!("tail_sup_v  {tail}");
    }
    for note in &summary.notes {
        println!("note: {note}");
    }
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load_config(&args.config)?;
    let spec = SweepSpec {
        users: args.users,
        accommodation: args.accommodation,
        policies: args.policies,
        seeds: (base.seed..base.seed + args.seeds).collect(),
        thresholds: args.thresholds.into_iter().collect::<BTreeMap<_, _>>(),
    };
    spec.validate().map_err(Failure::usage)?;
    let out = &args.output.out;
    let force = args.output.force;
    let cells = run_sweep(&base, &spec, args.workers, |key, seed, trace| {
        export(
            trace,
            &out.join(key.label()).join(format!("seed{seed}")),
            force,
        )
        .map(|_| ())
    })
    .map_err(runtime)?;

    println!(
        "{:>6} {:>6} {:>7} {:>6} {:>10} {:>10} {:>9}",
        "users", "c", "policy", "rho_th", "avg load", "final sd", "quiesced"
    );
    for c in &cells {
        println!(
            "{:>6} {:>6} {:>7} {:>6} {:>10.4} {:>10.4} {:>6}/{}",
            c.key.users,
            c.key.accommodation,
            c.key.policy,
            c.rho_th,
            c.mean_initial_load(),
            c.mean_final_sd(),
            c.quiesced_runs(),
            c.runs.len()
        );
    }
    write_new(&out.join(SWEEP_TABLE_FILE), &sweep_table_csv(&cells), force)
}
