//! The protocol and its comparison baselines, which differ only in how
//! neighbourhoods are formed.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{metrics_rows, MetricsRow};
use crate::error::{Error, Result};
use crate::pcpo::server::all_connected;
use crate::pcpo::{run_with_rule, NeighborhoodRule, PcpoConfig, PcpoTrace};
use crate::scenario::ClusterScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Pcpo,
    LocalOnly,
    OracleClustered,
    NaiveGlobal,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::Pcpo,
        Algorithm::LocalOnly,
        Algorithm::OracleClustered,
        Algorithm::NaiveGlobal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Pcpo => "pcpo",
            Algorithm::LocalOnly => "local_only",
            Algorithm::OracleClustered => "oracle_clustered",
            Algorithm::NaiveGlobal => "naive_global",
        }
    }

    pub fn is_baseline(self) -> bool {
        self != Algorithm::Pcpo
    }

    pub fn rule(self, scenario: &ClusterScenario) -> NeighborhoodRule {
        match self {
            Algorithm::Pcpo => NeighborhoodRule::Elimination,
            Algorithm::LocalOnly => NeighborhoodRule::LocalOnly,
            Algorithm::OracleClustered => {
                let clusters = scenario.clusters();
                NeighborhoodRule::Fixed(scenario.assignment().iter().map(|&c| clusters[c].clone()).collect())
            }
            Algorithm::NaiveGlobal => NeighborhoodRule::Fixed(all_connected(scenario.n_agents())),
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm `{s}`")))
    }
}

pub fn run_algorithm(algorithm: Algorithm, scenario: &ClusterScenario, config: &PcpoConfig) -> Result<PcpoTrace> {
    run_with_rule(scenario, config, &algorithm.rule(scenario))
}

/// Runs a named baseline at budget `budget` and seed `seed`; the other
/// settings come from `config`.
pub fn run_baseline(
    name: &str,
    scenario: &ClusterScenario,
    budget: u64,
    seed: u64,
    config: &PcpoConfig,
) -> Result<Vec<MetricsRow>> {
    let algorithm: Algorithm = name.parse()?;
    if !algorithm.is_baseline() {
        return Err(Error::Config(format!("`{name}` is not a baseline")));
    }
    let cfg = config.clone().with_budget(budget).with_seed(seed);
    let trace = run_algorithm(algorithm, scenario, &cfg)?;
    Ok(metrics_rows(algorithm, &trace))
}
