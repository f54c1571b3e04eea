//! A population of agents, each attached to one of several LQR systems.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_stabilizing, min_pairwise_gap, solve_dare, DareSolution, Policy, SystemTuple};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScenarioRepr", into = "ScenarioRepr")]
pub struct ClusterScenario {
    systems: Vec<SystemTuple>,
    assignment: Vec<usize>,
    initial_policies: Vec<Policy>,
}

#[derive(Serialize, Deserialize)]
struct ScenarioRepr {
    systems: Vec<SystemTuple>,
    assignment: Vec<usize>,
    initial_policies: Vec<Policy>,
}

impl TryFrom<ScenarioRepr> for ClusterScenario {
    type Error = Error;

    fn try_from(r: ScenarioRepr) -> Result<Self> {
        ClusterScenario::new(r.systems, r.assignment, r.initial_policies)
    }
}

impl From<ClusterScenario> for ScenarioRepr {
    fn from(s: ClusterScenario) -> Self {
        ScenarioRepr {
            systems: s.systems,
            assignment: s.assignment,
            initial_policies: s.initial_policies,
        }
    }
}

impl ClusterScenario {
    pub fn new(
        systems: Vec<SystemTuple>,
        assignment: Vec<usize>,
        initial_policies: Vec<Policy>,
    ) -> Result<Self> {
        if systems.is_empty() || assignment.is_empty() {
            return Err(Error::Config("scenario needs systems and agents".into()));
        }
        if initial_policies.len() != assignment.len() {
            return Err(Error::Config(format!(
                "{} agents but {} initial policies",
                assignment.len(),
                initial_policies.len()
            )));
        }
        let (m, n) = (systems[0].input_dim(), systems[0].state_dim());
        if systems.iter().any(|s| s.input_dim() != m || s.state_dim() != n) {
            return Err(Error::Config("all systems must share (n, m)".into()));
        }
        let mut used = vec![false; systems.len()];
        for (agent, &c) in assignment.iter().enumerate() {
            if c >= systems.len() {
                return Err(Error::Config(format!(
                    "agent {agent} assigned to missing cluster {c}"
                )));
            }
            used[c] = true;
        }
        if let Some(empty) = used.iter().position(|u| !u) {
            return Err(Error::Config(format!("cluster {empty} has no agents")));
        }
        for (agent, (k, &c)) in initial_policies.iter().zip(&assignment).enumerate() {
            if k.shape() != (m, n) {
                return Err(Error::Config(format!(
                    "initial policy of agent {agent} has shape {:?}, expected {:?}",
                    k.shape(),
                    (m, n)
                )));
            }
            if !is_stabilizing(k, &systems[c])? {
                return Err(Error::Config(format!(
                    "initial policy of agent {agent} does not stabilize cluster {c}"
                )));
            }
        }
        let scenario = ClusterScenario {
            systems,
            assignment,
            initial_policies,
        };
        if scenario.systems.len() >= 2 && !(scenario.separation_gap()? > 0.0) {
            return Err(Error::Config("clusters share an optimal cost".into()));
        }
        Ok(scenario)
    }

    pub fn systems(&self) -> &[SystemTuple] {
        &self.systems
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn initial_policies(&self) -> &[Policy] {
        &self.initial_policies
    }

    pub fn n_agents(&self) -> usize {
        self.assignment.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.systems.len()
    }

    pub fn system_of(&self, agent: usize) -> &SystemTuple {
        &self.systems[self.assignment[agent]]
    }

    /// `(m, n)` shared by every policy.
    pub fn policy_shape(&self) -> (usize, usize) {
        (self.systems[0].input_dim(), self.systems[0].state_dim())
    }

    /// Agents of each cluster in ascending order.
    pub fn clusters(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.systems.len()];
        for (agent, &c) in self.assignment.iter().enumerate() {
            out[c].push(agent);
        }
        out
    }

    pub fn cluster_size_of(&self, agent: usize) -> usize {
        let c = self.assignment[agent];
        self.assignment.iter().filter(|&&x| x == c).count()
    }

    pub fn optimal_solutions(&self) -> Result<Vec<DareSolution>> {
        self.systems.iter().map(solve_dare).collect()
    }

    /// Minimum optimal-cost gap between clusters; `+∞` with one cluster.
    pub fn separation_gap(&self) -> Result<f64> {
        if self.systems.len() < 2 {
            return Ok(f64::INFINITY);
        }
        let costs: Vec<f64> = self.optimal_solutions()?.iter().map(|d| d.cost).collect();
        min_pairwise_gap(&costs)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cluster() -> ClusterScenario {
        let s0 = SystemTuple::scalar(0.0, 1.0, 1.0, 1.0, 0.9).unwrap();
        let s1 = SystemTuple::scalar(0.0, 1.0, 2.0, 1.0, 0.9).unwrap();
        ClusterScenario::new(vec![s0, s1], vec![0, 1, 0], vec![Policy::scalar(0.0); 3]).unwrap()
    }

    #[test]
    fn clusters_and_gap() {
        let sc = two_cluster();
        assert_eq!(sc.clusters(), vec![vec![0, 2], vec![1]]);
        assert_eq!(sc.cluster_size_of(0), 2);
        // A = 0: C* = γ/(1-γ)·Q, so the gap is 9.
        assert!((sc.separation_gap().unwrap() - 9.0).abs() < 1e-9);
    }

    #[test]
    fn single_cluster_gap_is_infinite() {
        let s0 = SystemTuple::scalar(0.5, 1.0, 1.0, 1.0, 0.9).unwrap();
        let sc = ClusterScenario::new(vec![s0], vec![0, 0], vec![Policy::scalar(0.0); 2]).unwrap();
        assert_eq!(sc.separation_gap().unwrap(), f64::INFINITY);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let s0 = SystemTuple::scalar(1.5, 1.0, 1.0, 1.0, 0.9).unwrap();
        let s1 = SystemTuple::scalar(0.0, 1.0, 2.0, 1.0, 0.9).unwrap();
        // Open-loop unstable system with K = 0.
        assert!(ClusterScenario::new(vec![s0.clone()], vec![0], vec![Policy::scalar(0.0)]).is_err());
        // Empty cluster.
        assert!(ClusterScenario::new(
            vec![s0.clone(), s1.clone()],
            vec![1],
            vec![Policy::scalar(1.0)]
        )
        .is_err());
        // Out-of-range assignment.
        assert!(ClusterScenario::new(vec![s1.clone()], vec![1], vec![Policy::scalar(0.0)]).is_err());
        // Identical clusters have zero separation.
        assert!(ClusterScenario::new(
            vec![s1.clone(), s1],
            vec![0, 1],
            vec![Policy::scalar(0.0); 2]
        )
        .is_err());
    }

    #[test]
    fn json_round_trip() {
        let sc = two_cluster();
        let text = sc.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(v["systems"][0]["A"].is_array());
        assert_eq!(v["assignment"], serde_json::json!([0, 1, 0]));
        assert_eq!(ClusterScenario::from_json(&text).unwrap(), sc);
    }
}
