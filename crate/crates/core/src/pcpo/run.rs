//! The epoch loop.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::{make_schedule, Mode, PracticalSchedule, ProblemConstants, ScheduleConfig, TheoryConstants};
use super::server::{aggregate_gradients, all_connected, reinitialize, singletons, update_neighborhood, Neighborhoods};
use super::trace::{policy_rows, EpochRecord, GlobalDivergence, NeighborhoodRule, PcpoTrace, TRACE_SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::linalg::{exact_cost_of, stage_cost_bound, DareSolution, Mat};
use crate::po::{local_po, PoParams};
use crate::rng::{Purpose, RngStream};
use crate::rollout::{estimate_cost, NoiseModel, NoiseSpec, Rollout, RolloutConfig};
use crate::scenario::ClusterScenario;
use crate::zo::{zo_gradient, ZoRequest};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcpoConfig {
    #[serde(default)]
    pub mode: Mode,
    /// Initial elimination scale `Δ_0`; should exceed the spread of optimal
    /// costs.
    pub delta0: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Rollouts per agent.
    pub budget: u64,
    #[serde(default)]
    pub practical: PracticalSchedule,
    #[serde(default)]
    pub theory: Option<ProblemConstants>,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default = "default_truncation_tol")]
    pub truncation_tol: f64,
    /// Overrides the per-cluster horizon derived from `truncation_tol`.
    #[serde(default)]
    pub horizon: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub max_epochs: Option<usize>,
}

fn default_delta() -> f64 {
    0.2
}

fn default_truncation_tol() -> f64 {
    RolloutConfig::DEFAULT_TRUNCATION_TOL
}

impl PcpoConfig {
    pub fn practical(delta0: f64, budget: u64, schedule: PracticalSchedule) -> Self {
        PcpoConfig {
            mode: Mode::Practical,
            delta0,
            delta: default_delta(),
            budget,
            practical: schedule,
            theory: None,
            noise: NoiseSpec::default(),
            truncation_tol: default_truncation_tol(),
            horizon: None,
            seed: 0,
            max_epochs: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_budget(mut self, budget: u64) -> Self {
        self.budget = budget;
        self
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads TOML for `.toml` files and JSON otherwise.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            Self::from_toml(&text)
        } else {
            Self::from_json(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budget == 0 {
            return Err(Error::Config("budget must be positive".into()));
        }
        if !(self.truncation_tol > 0.0) {
            return Err(Error::Config("truncation tolerance must be positive".into()));
        }
        if self.horizon == Some(0) {
            return Err(Error::Config("horizon must be positive".into()));
        }
        if self.mode == Mode::Theory && self.theory.is_none() {
            return Err(Error::Config("theory mode needs [theory] constants".into()));
        }
        Ok(())
    }
}

fn rollout_configs(
    scenario: &ClusterScenario,
    config: &PcpoConfig,
    optimal: &[DareSolution],
) -> Result<Vec<RolloutConfig>> {
    let clusters = scenario.clusters();
    scenario
        .systems()
        .iter()
        .enumerate()
        .map(|(c, sys)| {
            if let Some(h) = config.horizon {
                return RolloutConfig::new(h, config.truncation_tol);
            }
            let mut bound = stage_cost_bound(sys, &optimal[c].gain)?;
            for &i in &clusters[c] {
                bound = bound.max(stage_cost_bound(sys, &scenario.initial_policies()[i])?);
            }
            RolloutConfig::from_tolerance(sys.gamma(), config.truncation_tol, bound)
        })
        .collect()
}

fn initial_neighborhoods(rule: &NeighborhoodRule, n: usize) -> Result<Neighborhoods> {
    match rule {
        NeighborhoodRule::Elimination => Ok(all_connected(n)),
        NeighborhoodRule::LocalOnly => Ok(singletons(n)),
        NeighborhoodRule::Fixed(sets) => {
            if sets.len() != n {
                return Err(Error::Config(format!(
                    "{} fixed neighbourhoods for {n} agents",
                    sets.len()
                )));
            }
            let mut out = Vec::with_capacity(n);
            for (i, s) in sets.iter().enumerate() {
                let mut s = s.clone();
                s.sort_unstable();
                s.dedup();
                if !s.contains(&i) || s.iter().any(|&j| j >= n) {
                    return Err(Error::Config(format!("bad fixed neighbourhood for agent {i}")));
                }
                out.push(s);
            }
            Ok(out)
        }
    }
}

fn gap(scenario: &ClusterScenario, optimal: &[DareSolution], agent: usize, k: &Mat) -> f64 {
    let c = scenario.assignment()[agent];
    exact_cost_of(&scenario.systems()[c], k).map_or(f64::INFINITY, |v| v - optimal[c].cost)
}

/// Runs the protocol with sequential elimination.
pub fn run_pcpo(scenario: &ClusterScenario, config: &PcpoConfig) -> Result<PcpoTrace> {
    run_with_rule(scenario, config, &NeighborhoodRule::Elimination)
}

/// Runs the protocol with the given neighbourhood rule.
pub fn run_with_rule(
    scenario: &ClusterScenario,
    config: &PcpoConfig,
    rule: &NeighborhoodRule,
) -> Result<PcpoTrace> {
    config.validate()?;
    let n = scenario.n_agents();
    let (m, nx) = scenario.policy_shape();
    let theory = match config.mode {
        Mode::Theory => Some(TheoryConstants::derive(
            config.theory.expect("validated"),
            config.delta0,
            config.delta,
            m * nx,
            n,
            config.budget,
        )?),
        Mode::Practical => None,
    };
    let sched_cfg = ScheduleConfig {
        mode: config.mode,
        delta0: config.delta0,
        delta: config.delta,
        practical: config.practical,
        theory,
        dim: m * nx,
        n_agents: n,
    };
    let optimal = scenario.optimal_solutions()?;
    let roll_cfgs = rollout_configs(scenario, config, &optimal)?;
    let oracles = scenario
        .systems()
        .iter()
        .zip(&roll_cfgs)
        .map(|(sys, cfg)| {
            Rollout::new(sys, *cfg).with_noise(NoiseModel::from_spec(&config.noise, sys.state_dim())?)
        })
        .collect::<Result<Vec<_>>>()?;
    let assign = scenario.assignment();
    let oracle_of = |i: usize| &oracles[assign[i]];

    let initial = initial_neighborhoods(rule, n)?;
    let mut nbhd = initial.clone();
    let mut local: Vec<Mat> = scenario.initial_policies().iter().map(|p| p.gain().clone()).collect();
    let mut global = local.clone();
    let mut spent = 0u64;
    let mut comm = 0u64;
    let mut epochs = Vec::new();
    let mut prev_sched = None;

    for l in 1usize.. {
        if config.max_epochs.is_some_and(|cap| l > cap) {
            break;
        }
        let sched = make_schedule(l, prev_sched.as_ref(), &sched_cfg)?;
        let cost = sched.rollouts_per_agent();
        if spent.checked_add(cost).is_none_or(|total| total > config.budget) {
            if l == 1 {
                return Err(Error::Budget {
                    message: format!("budget {} cannot pay for the first epoch", config.budget),
                    minimum: cost,
                });
            }
            break;
        }
        let epoch = l as u64;
        let seed = config.seed;

        // Local policy optimization.
        let local_params = PoParams::new(sched.step_size, sched.rounds, sched.minibatch, sched.radius_local)?;
        let outcomes = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = RngStream::new(seed, i as u64, epoch, Purpose::LocalPo);
                local_po(oracle_of(i), &local[i], &local_params, &mut s)
            })
            .collect::<Result<Vec<_>>>()?;
        let local_divergences: Vec<usize> = (0..n).filter(|&i| outcomes[i].diverged).collect();
        local = outcomes.into_iter().map(|o| o.final_policy).collect();

        // Cost estimation; an unstable estimate never matches anyone.
        let estimates = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut s = RngStream::new(seed, i as u64, epoch, Purpose::CostEstimate);
                match estimate_cost(oracle_of(i), &local[i], sched.minibatch, &mut s) {
                    Ok(c) => Ok(c),
                    Err(e) if e.is_instability() => Ok(f64::INFINITY),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        let estimate_divergences: Vec<usize> = (0..n).filter(|&i| !estimates[i].is_finite()).collect();

        // Collaborative rounds over the previous neighbourhoods.
        let radius_global: Vec<f64> = nbhd.iter().map(|s| sched.radius_global(s.len())).collect();
        let mut y = global.clone();
        let mut active = vec![true; n];
        let mut streams: Vec<RngStream> = (0..n)
            .map(|i| RngStream::new(seed, i as u64, epoch, Purpose::GlobalPo))
            .collect();
        let mut global_divergences = Vec::new();
        for round in 0..sched.rounds {
            let submitted = streams
                .par_iter_mut()
                .enumerate()
                .map(|(i, s)| {
                    if !active[i] {
                        return Ok(None);
                    }
                    let req = ZoRequest::from_gain(y[i].clone(), sched.minibatch, radius_global[i])?;
                    match zo_gradient(oracle_of(i), &req, s) {
                        Ok(g) => Ok(Some(g)),
                        Err(e) if e.is_instability() => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect::<Result<Vec<Option<Mat>>>>()?;
            for i in 0..n {
                if active[i] && submitted[i].is_none() {
                    active[i] = false;
                    global_divergences.push(GlobalDivergence { round, agent: i });
                }
            }
            for i in 0..n {
                if !active[i] {
                    continue;
                }
                let contributors: Vec<usize> =
                    nbhd[i].iter().copied().filter(|&j| submitted[j].is_some()).collect();
                let g = aggregate_gradients(&submitted, &contributors)?;
                y[i] -= g * sched.step_size;
            }
        }
        global = y;
        if rule.communicates() {
            comm += sched.rounds as u64 + 1;
        }

        // Elimination and reinitialization.
        let next = match rule {
            NeighborhoodRule::Elimination => update_neighborhood(&estimates, &nbhd, sched.gap_scale),
            _ => nbhd.clone(),
        };
        let reinitialized = next != nbhd || rule.forces_reinit(l);
        if reinitialized {
            global = reinitialize(&local, &estimates, &next)?;
        }
        nbhd = next;
        spent += cost;

        epochs.push(EpochRecord {
            schema_version: TRACE_SCHEMA_VERSION,
            epoch: l,
            schedule: sched,
            radius_global,
            neighborhoods: nbhd.clone(),
            estimated_costs: estimates,
            local_policies: local.iter().map(policy_rows).collect(),
            global_policies: global.iter().map(policy_rows).collect(),
            local_gaps: (0..n).map(|i| gap(scenario, &optimal, i, &local[i])).collect(),
            global_gaps: (0..n).map(|i| gap(scenario, &optimal, i, &global[i])).collect(),
            rollouts: vec![spent; n],
            comm_rounds: comm,
            reinitialized,
            local_divergences,
            estimate_divergences,
            global_divergences,
        });
        prev_sched = Some(sched);
    }

    Ok(PcpoTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        rule: rule.clone(),
        seed: config.seed,
        budget: config.budget,
        assignment: assign.to_vec(),
        optimal_costs: optimal.iter().map(|d| d.cost).collect(),
        horizons: roll_cfgs.iter().map(|c| c.horizon).collect(),
        initial_neighborhoods: initial,
        epochs,
    })
}
