use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pcpo_core::harness::experiment::budget_dir;
use pcpo_core::harness::{
    generate_scenario, read_rows, run_experiment, summarize, write_atomic, Algorithm, CommRow, ExperimentSpec,
    GeneratorParams, MetricsRow, ScenarioSource, Summary,
};
use pcpo_core::pcpo::Mode;
use pcpo_core::probe::{probe_scenario, ProbeSettings};
use pcpo_core::{ClusterScenario, Error, Result};

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BUDGET: u8 = 3;

#[derive(Parser)]
#[command(name = "pcpo", version, about = "Clustered multi-agent LQR policy optimization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a clustered scenario from generator parameters.
    Generate(GenerateArgs),
    /// Run an experiment spec and write metrics, traces and summaries.
    Run(RunArgs),
    /// Summarize a metrics CSV.
    Summarize(SummarizeArgs),
    /// Probe PL, Lipschitz, smoothness and rollout-cost constants of a scenario.
    ProbeConstants(ProbeArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Generator parameters (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenario JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment spec (TOML or JSON).
    #[arg(long)]
    config: PathBuf,
    /// Run this single seed instead of the spec's list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    mode: Option<Mode>,
    /// Comma-separated algorithms.
    #[arg(long, value_delimiter = ',')]
    algo: Vec<Algorithm>,
    /// Per-agent rollout budget; repeat for several.
    #[arg(long)]
    budget: Vec<u64>,
    /// Use this scenario JSON instead of the spec's source.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

#[derive(Args)]
struct SummarizeArgs {
    /// Metrics CSV written by `run`.
    metrics: PathBuf,
    /// Communication CSV for the rounds-versus-budget fit.
    #[arg(long)]
    comm: Option<PathBuf>,
    /// Bootstrap seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for summary.csv and summary.txt; print only when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ProbeArgs {
    /// Scenario JSON.
    #[arg(long)]
    scenario: PathBuf,
    /// Probe settings (TOML or JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Constants JSON destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn read_input(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))
}

fn parse_config<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = read_input(path)?;
    let parsed = if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| e.to_string())
    } else {
        serde_json::from_str(&text).map_err(|e| e.to_string())
    };
    parsed.map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<ClusterScenario> {
    ClusterScenario::from_json(&read_input(path)?).map_err(|e| match e {
        Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
        other => other,
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn write_summary(summary: &Summary, dir: &Path) -> Result<()> {
    let mut buf = Vec::new();
    summary.write_csv(&mut buf)?;
    write_atomic(&dir.join("summary.csv"), &buf)?;
    write_atomic(&dir.join("summary.txt"), summary.to_string().as_bytes())
}

fn generate(args: GenerateArgs) -> Result<()> {
    let params: GeneratorParams = parse_config(&args.config)?;
    let scenario = generate_scenario(&params, args.seed)?;
    eprintln!(
        "{} agents in {} clusters, separation gap {:.6}",
        scenario.n_agents(),
        scenario.n_clusters(),
        scenario.separation_gap()?
    );
    emit(args.out.as_deref(), &scenario.to_json()?)
}

fn run(args: RunArgs) -> Result<()> {
    let mut spec = ExperimentSpec::load(&args.config)?;
    if let Some(seed) = args.seed {
        spec.seeds = vec![seed];
    }
    if let Some(out) = args.out {
        spec.out_dir = out;
    }
    if let Some(mode) = args.mode {
        spec.config.mode = mode;
    }
    if !args.algo.is_empty() {
        spec.algorithms = args.algo;
    }
    if !args.budget.is_empty() {
        spec.budgets = args.budget;
    }
    if let Some(path) = args.scenario {
        load_scenario(&path)?;
        spec.scenario = ScenarioSource::File { path };
    }
    let outcome = run_experiment(&spec)?;
    for (seed, gap) in &outcome.separation_gaps {
        eprintln!("seed {seed}: separation gap {gap:.6}");
    }
    for result in &outcome.results {
        let comm: Vec<CommRow> = outcome.comm.iter().filter(|c| c.budget == result.budget).cloned().collect();
        let summary = summarize(&result.rows, &comm, 0);
        let dir = budget_dir(&spec.out_dir, result.budget);
        write_summary(&summary, &dir)?;
        println!("== budget {} ({}) ==\n{summary}", result.budget, dir.display());
    }
    let all = summarize(&[], &outcome.comm, 0);
    if !all.comm_fits.is_empty() {
        println!("{all}");
    }
    Ok(())
}

fn summarize_cmd(args: SummarizeArgs) -> Result<()> {
    let rows: Vec<MetricsRow> = read_rows(read_input(&args.metrics)?.as_bytes())?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{} has no rows", args.metrics.display())));
    }
    let comm: Vec<CommRow> = match &args.comm {
        Some(p) => read_rows(read_input(p)?.as_bytes())?,
        None => Vec::new(),
    };
    let summary = summarize(&rows, &comm, args.seed);
    if let Some(dir) = &args.out {
        write_summary(&summary, dir)?;
    }
    print!("{summary}");
    Ok(())
}

fn probe(args: ProbeArgs) -> Result<()> {
    let scenario = load_scenario(&args.scenario)?;
    let settings: ProbeSettings = match &args.config {
        Some(p) => parse_config(p)?,
        None => ProbeSettings::default(),
    };
    let constants = probe_scenario(&scenario, &settings, args.seed)?;
    emit(args.out.as_deref(), &serde_json::to_string_pretty(&constants)?)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Toml(_) => EXIT_CONFIG,
        Error::Budget { .. } => EXIT_BUDGET,
        _ => EXIT_FAILURE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => generate(a),
        Command::Run(a) => run(a),
        Command::Summarize(a) => summarize_cmd(a),
        Command::ProbeConstants(a) => probe(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
