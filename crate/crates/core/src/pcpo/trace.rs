//! Per-epoch records of a protocol run, their exports, and the structural
//! checks every run must pass.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::schedule::EpochSchedule;
use super::server::Neighborhoods;
use crate::error::Result;
use crate::linalg::{matrix_to_rows, Mat};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// How neighbourhoods evolve during a run.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborhoodRule {
    /// Start from all agents and prune by estimated cost.
    #[default]
    Elimination,
    /// Keep the given neighbourhoods for the whole run. Global policies are
    /// reinitialized once, after the first epoch, so that members share one.
    Fixed(Neighborhoods),
    /// Every agent alone; nothing is communicated.
    LocalOnly,
}

impl NeighborhoodRule {
    pub fn communicates(&self) -> bool {
        !matches!(self, NeighborhoodRule::LocalOnly)
    }

    /// Whether epoch `epoch` must reinitialize even with unchanged
    /// neighbourhoods.
    pub fn forces_reinit(&self, epoch: usize) -> bool {
        matches!(self, NeighborhoodRule::Fixed(_)) && epoch == 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalDivergence {
    pub round: usize,
    pub agent: usize,
}

pub type PolicyRows = Vec<Vec<f64>>;

pub fn policy_rows(k: &Mat) -> PolicyRows {
    matrix_to_rows(k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub schema_version: u32,
    pub epoch: usize,
    pub schedule: EpochSchedule,
    pub radius_global: Vec<f64>,
    /// Neighbourhoods after this epoch's pruning.
    pub neighborhoods: Neighborhoods,
    #[serde(with = "crate::serde_ext::vec_f64_or_null")]
    pub estimated_costs: Vec<f64>,
    pub local_policies: Vec<PolicyRows>,
    /// Global policies after any reinitialization.
    pub global_policies: Vec<PolicyRows>,
    #[serde(with = "crate::serde_ext::vec_f64_or_null")]
    pub local_gaps: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec_f64_or_null")]
    pub global_gaps: Vec<f64>,
    /// Cumulative rollouts charged to each agent.
    pub rollouts: Vec<u64>,
    /// Cumulative communication rounds.
    pub comm_rounds: u64,
    pub reinitialized: bool,
    pub local_divergences: Vec<usize>,
    pub estimate_divergences: Vec<usize>,
    pub global_divergences: Vec<GlobalDivergence>,
}

impl EpochRecord {
    pub fn divergence_events(&self) -> usize {
        self.local_divergences.len() + self.estimate_divergences.len() + self.global_divergences.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcpoTrace {
    pub schema_version: u32,
    pub rule: NeighborhoodRule,
    pub seed: u64,
    pub budget: u64,
    pub assignment: Vec<usize>,
    #[serde(with = "crate::serde_ext::vec_f64_or_null")]
    pub optimal_costs: Vec<f64>,
    pub horizons: Vec<usize>,
    pub initial_neighborhoods: Neighborhoods,
    pub epochs: Vec<EpochRecord>,
}

impl PcpoTrace {
    pub fn n_agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn true_clusters(&self) -> Neighborhoods {
        let n = self.assignment.len();
        (0..n)
            .map(|i| (0..n).filter(|&j| self.assignment[j] == self.assignment[i]).collect())
            .collect()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Exact gaps of the final global policies; `+∞` for unstable ones.
    pub fn final_global_gaps(&self) -> Vec<f64> {
        self.last()
            .map(|e| e.global_gaps.clone())
            .unwrap_or_else(|| vec![f64::INFINITY; self.n_agents()])
    }

    pub fn comm_rounds(&self) -> u64 {
        self.last().map_or(0, |e| e.comm_rounds)
    }

    pub fn rollouts_used(&self) -> Vec<u64> {
        self.last()
            .map(|e| e.rollouts.clone())
            .unwrap_or_else(|| vec![0; self.n_agents()])
    }

    pub fn divergence_events(&self) -> usize {
        self.epochs.iter().map(EpochRecord::divergence_events).sum()
    }

    /// Whether every neighbourhood equals the agent's true cluster at the
    /// given epoch record.
    pub fn clustering_correct_at(&self, index: usize) -> bool {
        self.epochs[index].neighborhoods == self.true_clusters()
    }

    /// True clusters are contained in the neighbourhoods at every epoch.
    pub fn clusters_always_contained(&self) -> bool {
        let truth = self.true_clusters();
        self.epochs.iter().all(|e| {
            e.neighborhoods
                .iter()
                .zip(&truth)
                .all(|(n, t)| t.iter().all(|j| n.contains(j)))
        })
    }

    /// First epoch number from which the clustering is exactly correct until
    /// the end of the run.
    pub fn first_correct_epoch(&self) -> Option<usize> {
        let mut first = None;
        for (idx, e) in self.epochs.iter().enumerate() {
            if self.clustering_correct_at(idx) {
                first.get_or_insert(e.epoch);
            } else {
                first = None;
            }
        }
        first
    }

    /// One JSON object per epoch.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for e in &self.epochs {
            serde_json::to_writer(&mut out, e)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Vec<EpochRecord>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| Ok(serde_json::from_str(l)?))
            .collect()
    }

    /// Flat per-(epoch, agent) table.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "epoch",
            "agent",
            "cluster",
            "neighborhood_size",
            "est_cost",
            "exact_gap",
            "rollouts",
            "comm_rounds",
            "reinit_flag",
        ])?;
        for e in &self.epochs {
            for i in 0..self.n_agents() {
                w.write_record([
                    e.epoch.to_string(),
                    i.to_string(),
                    self.assignment[i].to_string(),
                    e.neighborhoods[i].len().to_string(),
                    e.estimated_costs[i].to_string(),
                    e.global_gaps[i].to_string(),
                    e.rollouts[i].to_string(),
                    e.comm_rounds.to_string(),
                    u8::from(e.reinitialized).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommReport {
    pub rounds: u64,
    pub per_epoch: Vec<u64>,
}

/// `R_l` collaborative rounds plus one upload per epoch, or nothing when the
/// run does not communicate.
pub fn comm_report(trace: &PcpoTrace) -> CommReport {
    let per_epoch: Vec<u64> = trace
        .epochs
        .iter()
        .map(|e| {
            if trace.rule.communicates() {
                e.schedule.rounds as u64 + 1
            } else {
                0
            }
        })
        .collect();
    CommReport {
        rounds: per_epoch.iter().sum(),
        per_epoch,
    }
}

fn is_subset(small: &[usize], big: &[usize]) -> bool {
    small.iter().all(|j| big.contains(j))
}

/// Structural invariants of a finished run. Returns one message per
/// violation.
pub fn check_invariants(trace: &PcpoTrace) -> Vec<String> {
    let mut bad = Vec::new();
    let n = trace.n_agents();
    let truth = trace.true_clusters();
    let mut prev_nbhd = &trace.initial_neighborhoods;
    let mut prev_rollouts = vec![0u64; n];
    let mut prev_comm = 0u64;
    let mut prev_sched: Option<&EpochSchedule> = None;
    let mut synced = false;

    for e in &trace.epochs {
        let l = e.epoch;
        if e.schema_version != TRACE_SCHEMA_VERSION {
            bad.push(format!("epoch {l}: schema version {}", e.schema_version));
        }
        for i in 0..n {
            if !e.neighborhoods[i].contains(&i) {
                bad.push(format!("epoch {l}: agent {i} missing from its own neighbourhood"));
            }
            if !is_subset(&e.neighborhoods[i], &prev_nbhd[i]) {
                bad.push(format!("epoch {l}: neighbourhood of agent {i} grew"));
            }
            let charged = e.rollouts[i].wrapping_sub(prev_rollouts[i]);
            if charged != e.schedule.rollouts_per_agent() {
                bad.push(format!(
                    "epoch {l}: agent {i} charged {charged} rollouts, expected {}",
                    e.schedule.rollouts_per_agent()
                ));
            }
            if e.rollouts[i] > trace.budget {
                bad.push(format!("epoch {l}: agent {i} exceeded the budget"));
            }
        }
        let changed = e.neighborhoods != *prev_nbhd;
        if (changed || trace.rule.forces_reinit(l)) != e.reinitialized {
            bad.push(format!(
                "epoch {l}: reinitialization flag {} but neighbourhoods changed = {changed}",
                e.reinitialized
            ));
        }
        let expected_comm = if trace.rule.communicates() {
            e.schedule.rounds as u64 + 1
        } else {
            0
        };
        if e.comm_rounds.wrapping_sub(prev_comm) != expected_comm {
            bad.push(format!("epoch {l}: communication count off"));
        }
        if let Some(p) = prev_sched {
            if e.schedule.gap_scale != p.gap_scale / 2.0 {
                bad.push(format!("epoch {l}: gap scale did not halve"));
            }
            if e.schedule.minibatch <= p.minibatch {
                bad.push(format!("epoch {l}: minibatch did not grow"));
            }
            if e.schedule.rounds < p.rounds {
                bad.push(format!("epoch {l}: rounds decreased"));
            }
        }

        // Once the partition is exact and the global policies were reset from
        // it, same-cluster agents must move in lockstep.
        let correct = e.neighborhoods == truth;
        if correct && e.reinitialized {
            synced = true;
        }
        if !correct {
            synced = false;
        }
        if synced {
            for members in &truth {
                let lead = &e.global_policies[members[0]];
                for &j in &members[1..] {
                    if e.global_policies[j] != *lead {
                        bad.push(format!(
                            "epoch {l}: agents {} and {j} share a cluster but hold different global policies",
                            members[0]
                        ));
                    }
                }
            }
        }

        prev_nbhd = &e.neighborhoods;
        prev_rollouts.clone_from(&e.rollouts);
        prev_comm = e.comm_rounds;
        prev_sched = Some(&e.schedule);
    }
    if comm_report(trace).rounds != trace.comm_rounds() {
        bad.push("total communication rounds disagree with the schedule".into());
    }
    bad
}
