//! Experiment specs and their execution: every (budget, algorithm, seed)
//! run in parallel, with results written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::baseline::{run_algorithm, Algorithm};
use super::generate::{generate_scenario, GeneratorParams};
use super::metrics::{metrics_rows, write_rows, CommRow, MetricsRow};
use crate::error::{Error, Result};
use crate::pcpo::{PcpoConfig, PcpoTrace};
use crate::scenario::ClusterScenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source", deny_unknown_fields)]
pub enum ScenarioSource {
    /// Drawn by the generator. With `scenario_seed` every run shares one
    /// scenario; otherwise each run seed draws its own.
    Generated {
        params: GeneratorParams,
        #[serde(default)]
        scenario_seed: Option<u64>,
    },
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSource,
    #[serde(default = "all_algorithms")]
    pub algorithms: Vec<Algorithm>,
    /// Per-agent budgets; empty means the budget in `config`.
    #[serde(default)]
    pub budgets: Vec<u64>,
    pub seeds: Vec<u64>,
    pub config: PcpoConfig,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn all_algorithms() -> Vec<Algorithm> {
    Algorithm::ALL.to_vec()
}

fn default_out() -> PathBuf {
    PathBuf::from("results")
}

fn yes() -> bool {
    true
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads TOML for `.toml` files and JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn budgets(&self) -> Vec<u64> {
        if self.budgets.is_empty() {
            vec![self.config.budget]
        } else {
            self.budgets.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.algorithms.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("need at least one algorithm and one seed".into()));
        }
        if self.budgets().contains(&0) {
            return Err(Error::Config("budgets must be positive".into()));
        }
        self.config.validate()
    }

    /// Scenario used by run seed `seed`.
    pub fn scenario_for(&self, seed: u64) -> Result<ClusterScenario> {
        match &self.scenario {
            ScenarioSource::Generated { params, scenario_seed } => {
                generate_scenario(params, scenario_seed.unwrap_or(seed))
            }
            ScenarioSource::File { path } => ClusterScenario::load(path),
        }
    }
}

/// Writes `bytes` to a sibling temporary file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    let mut f = fs::File::create(&tmp)?;
    f.write_all(bytes)?;
    f.sync_all()?;
    drop(f);
    fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetResult {
    pub budget: u64,
    pub rows: Vec<MetricsRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutcome {
    pub results: Vec<BudgetResult>,
    pub comm: Vec<CommRow>,
    /// `(seed, Δ)` of each scenario used.
    pub separation_gaps: Vec<(u64, f64)>,
}

pub fn budget_dir(out: &Path, budget: u64) -> PathBuf {
    out.join(format!("budget_{budget}"))
}

pub fn trace_path(out: &Path, budget: u64, algorithm: Algorithm, seed: u64) -> PathBuf {
    budget_dir(out, budget)
        .join("traces")
        .join(format!("{}_seed{seed}.jsonl", algorithm.name()))
}

/// Runs the experiment and writes, under `out_dir`:
/// `scenarios/seed{s}.json`, `comm.csv`, and per budget
/// `budget_{T}/metrics.csv` plus optional `budget_{T}/traces/*.jsonl`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let out = &spec.out_dir;
    let scenarios: Vec<(u64, ClusterScenario)> = spec
        .seeds
        .iter()
        .map(|&s| spec.scenario_for(s).map(|sc| (s, sc)))
        .collect::<Result<_>>()?;
    let mut separation_gaps = Vec::new();
    for (seed, sc) in &scenarios {
        separation_gaps.push((*seed, sc.separation_gap()?));
        write_atomic(&out.join("scenarios").join(format!("seed{seed}.json")), sc.to_json()?.as_bytes())?;
    }

    let budgets = spec.budgets();
    let runs = scenarios.len();
    let jobs: Vec<(u64, Algorithm, usize)> = budgets
        .iter()
        .flat_map(|&b| {
            spec.algorithms
                .iter()
                .flat_map(move |&a| (0..runs).map(move |i| (b, a, i)))
        })
        .collect();
    let traces: Vec<PcpoTrace> = jobs
        .par_iter()
        .map(|&(budget, algorithm, i)| {
            let (seed, sc) = &scenarios[i];
            let cfg = spec.config.clone().with_budget(budget).with_seed(*seed);
            let trace = run_algorithm(algorithm, sc, &cfg)?;
            if spec.write_traces {
                let mut buf = Vec::new();
                trace.write_jsonl(&mut buf)?;
                write_atomic(&trace_path(out, budget, algorithm, *seed), &buf)?;
            }
            Ok(trace)
        })
        .collect::<Result<_>>()?;

    let mut results = Vec::new();
    let mut comm = Vec::new();
    for &budget in &budgets {
        let mut rows = Vec::new();
        for ((b, a, _), t) in jobs.iter().zip(&traces) {
            if *b == budget {
                rows.extend(metrics_rows(*a, t));
                comm.push(CommRow::from_trace(*a, t));
            }
        }
        let mut buf = Vec::new();
        write_rows(&rows, &mut buf)?;
        write_atomic(&budget_dir(out, budget).join("metrics.csv"), &buf)?;
        results.push(BudgetResult { budget, rows });
    }
    let mut buf = Vec::new();
    write_rows(&comm, &mut buf)?;
    write_atomic(&out.join("comm.csv"), &buf)?;
    Ok(ExperimentOutcome {
        results,
        comm,
        separation_gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPEC: &str = r#"
        seeds = [0, 1]
        budgets = [2000, 4000]
        algorithms = ["pcpo", "local_only"]

        [scenario]
        source = "generated"
        scenario_seed = 7
        [scenario.params]
        cluster_sizes = [2, 2]
        heterogeneity = 4.0
        [scenario.params.base]
        A = [[0.5]]
        B = [[1.0]]
        Q = [[1.0]]
        R = [[1.0]]

        [config]
        delta0 = 16.0
        budget = 1
        [config.practical]
        minibatch = 50
        rounds = 2
        step_size = 0.01
        radius = 0.1
        radius_cap = 0.5
    "#;

    fn spec(dir: &Path) -> ExperimentSpec {
        let mut s = ExperimentSpec::from_toml(SPEC).unwrap();
        s.out_dir = dir.to_path_buf();
        s
    }

    #[test]
    fn parses_and_validates() {
        let s = ExperimentSpec::from_toml(SPEC).unwrap();
        assert_eq!(s.budgets(), vec![2000, 4000]);
        assert_eq!(s.algorithms, vec![Algorithm::Pcpo, Algorithm::LocalOnly]);
        assert!(s.validate().is_ok());
        let mut bad = s.clone();
        bad.seeds.clear();
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        assert!(matches!(
            ExperimentSpec::from_toml("seeds = [1]\nbogus = 2"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn outputs_are_written_and_reproducible() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let first = run_experiment(&spec(a.path())).unwrap();
        run_experiment(&spec(b.path())).unwrap();
        assert_eq!(first.results.len(), 2);
        assert_eq!(first.results[0].rows.len(), 2 * 2 * 4);
        assert!(first.results.iter().all(|r| r.rows.iter().all(|m| m.rollouts_used <= r.budget)));
        assert_eq!(first.comm.len(), 2 * 2 * 2);
        assert!((first.separation_gaps[0].1 - 4.0).abs() < 1e-6);
        for rel in [
            "comm.csv",
            "budget_2000/metrics.csv",
            "budget_4000/metrics.csv",
            "budget_4000/traces/pcpo_seed1.jsonl",
            "scenarios/seed0.json",
        ] {
            let x = fs::read(a.path().join(rel)).unwrap();
            let y = fs::read(b.path().join(rel)).unwrap();
            assert!(!x.is_empty(), "{rel} is empty");
            assert_eq!(x, y, "{rel} differs between identical runs");
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x/y.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }
}
