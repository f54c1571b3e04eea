//! Empirical Lipschitz, smoothness, PL and rollout-cost bounds over the
//! sublevel set `C(K) − C(K*) ≤ level_multiple · Δ̃_0`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cost_gradient, exact_cost_of, solve_dare, stage_cost_bound, Mat, Policy, SystemTuple};
use crate::pcpo::ProblemConstants;
use crate::rng::{Purpose, RngStream};
use crate::rollout::{CostOracle, NoiseModel, NoiseSpec, Rollout, RolloutConfig};
use crate::scenario::ClusterScenario;
use crate::zo::sample_unit_frobenius;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSettings {
    /// Probe points per system.
    pub points: usize,
    /// Distance between the two gains of a Lipschitz pair.
    pub pair_radius: f64,
    pub level_multiple: f64,
    /// Rollouts per point for the cost bound.
    pub rollouts_per_point: usize,
    /// Overrides the sublevel size otherwise taken from the initial policies.
    pub delta_tilde0: Option<f64>,
    pub noise: NoiseSpec,
    pub truncation_tol: f64,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        ProbeSettings {
            points: 40,
            pair_radius: 0.05,
            level_multiple: 10.0,
            rollouts_per_point: 200,
            delta_tilde0: None,
            noise: NoiseSpec::default(),
            truncation_tol: 1e-6,
        }
    }
}

impl ProbeSettings {
    fn validate(&self) -> Result<()> {
        if self.points == 0 || self.rollouts_per_point == 0 {
            return Err(Error::Config("probe needs at least one point and one rollout".into()));
        }
        if !(self.pair_radius > 0.0) || !(self.level_multiple > 0.0) {
            return Err(Error::Config("pair radius and level multiple must be positive".into()));
        }
        if let Some(d) = self.delta_tilde0 {
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Config("delta_tilde0 must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Largest step along `dir` from `center` that stays stabilizing and inside
/// the sublevel set, by bisection on the boundary.
fn reach(sys: &SystemTuple, center: &Mat, dir: &Mat, c_star: f64, level: f64) -> f64 {
    let inside = |t: f64| matches!(exact_cost_of(sys, &(center + dir * t)), Ok(c) if c - c_star <= level);
    let mut hi = 1.0;
    while inside(hi) && hi < 1e6 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if inside(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Probes one system. `delta_tilde0` sizes the sublevel set.
pub fn probe_system(
    sys: &SystemTuple,
    delta_tilde0: f64,
    settings: &ProbeSettings,
    stream: &RngStream,
) -> Result<ProblemConstants> {
    settings.validate()?;
    let dare = solve_dare(sys)?;
    let k_star = dare.gain.gain().clone();
    let c_star = dare.cost;
    let level = settings.level_multiple * delta_tilde0;
    let (m, n) = (sys.input_dim(), sys.state_dim());
    let d = (m * n) as f64;
    let noise = NoiseModel::from_spec(&settings.noise, n)?;
    let rho = settings.pair_radius;

    let mut rng = stream.generator_at(0);
    let (mut lambda, mut phi, mut mu, mut g_inf) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for p in 0..settings.points {
        let dir = sample_unit_frobenius(m, n, &mut rng);
        let t_max = reach(sys, &k_star, &dir, c_star, level);
        let t = t_max * rng.random::<f64>().powf(1.0 / d);
        let k = &k_star + &dir * t;
        let c = exact_cost_of(sys, &k)?;
        let grad = cost_gradient(sys, &k)?;

        let gap = c - c_star;
        if gap > 1e-8 * c_star.max(1.0) {
            mu = mu.min(grad.norm_squared() / gap);
        }

        let pair_dir = sample_unit_frobenius(m, n, &mut rng);
        let k2 = &k + &pair_dir * rho;
        if let Ok(c2) = exact_cost_of(sys, &k2) {
            lambda = lambda.max((c2 - c).abs() / rho);
            phi = phi.max((cost_gradient(sys, &k2)? - &grad).norm() / rho);
        }

        let bound = stage_cost_bound(sys, &Policy::new(k.clone())?)?;
        let cfg = RolloutConfig::from_tolerance(sys.gamma(), settings.truncation_tol, bound)?;
        let oracle = Rollout::new(sys, cfg).with_noise(noise.clone())?;
        let draws = stream.with_tag(p as u64 + 1);
        let mut max_cost = 0.0f64;
        for i in 0..settings.rollouts_per_point {
            let sample = oracle.sample_cost(&k, &mut draws.generator_at(i as u64))?;
            max_cost = max_cost.max(sample);
        }
        g_inf = g_inf.max(max_cost);
    }
    if !mu.is_finite() {
        return Err(Error::Config("probe set too small to bound the PL constant".into()));
    }
    Ok(ProblemConstants {
        mu,
        phi,
        lambda,
        rho,
        g_inf,
        delta_tilde0,
    })
}

/// Sublevel size from the scenario's initial policies: the largest initial
/// suboptimality gap.
pub fn initial_gap(scenario: &ClusterScenario) -> Result<f64> {
    let sols = scenario.optimal_solutions()?;
    let mut worst = 0.0f64;
    for (k, &c) in scenario.initial_policies().iter().zip(scenario.assignment()) {
        worst = worst.max(exact_cost_of(&scenario.systems()[c], k.gain())? - sols[c].cost);
    }
    Ok(worst)
}

/// Worst-case constants over every system of the scenario: smallest `μ`,
/// largest `φ`, `λ` and `G_∞`.
pub fn probe_scenario(scenario: &ClusterScenario, settings: &ProbeSettings, seed: u64) -> Result<ProblemConstants> {
    settings.validate()?;
    let delta_tilde0 = match settings.delta_tilde0 {
        Some(d) => d,
        None => initial_gap(scenario)?.max(1e-9),
    };
    let mut out: Option<ProblemConstants> = None;
    for (j, sys) in scenario.systems().iter().enumerate() {
        let stream = RngStream::new(seed, j as u64, 0, Purpose::Diagnostic);
        let p = probe_system(sys, delta_tilde0, settings, &stream)?;
        out = Some(match out {
            None => p,
            Some(o) => ProblemConstants {
                mu: o.mu.min(p.mu),
                phi: o.phi.max(p.phi),
                lambda: o.lambda.max(p.lambda),
                rho: o.rho,
                g_inf: o.g_inf.max(p.g_inf),
                delta_tilde0,
            },
        });
    }
    out.ok_or_else(|| Error::Config("scenario has no systems".into()))
}
