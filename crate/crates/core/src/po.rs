//! Gradient-descent loops driven by zeroth-order estimates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::rng::RngStream;
use crate::rollout::CostOracle;
use crate::zo::{zo_gradient, ZoRequest};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoParams {
    pub step_size: f64,
    pub iterations: usize,
    pub minibatch: usize,
    pub radius: f64,
}

impl PoParams {
    pub fn new(step_size: f64, iterations: usize, minibatch: usize, radius: f64) -> Result<Self> {
        let p = PoParams {
            step_size,
            iterations,
            minibatch,
            radius,
        };
        p.validate()?;
        Ok(p)
    }

    /// A zero step size is allowed (it freezes the iterate).
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0) || !self.step_size.is_finite() {
            return Err(Error::Invalid(format!("bad step size {}", self.step_size)));
        }
        if self.minibatch == 0 {
            return Err(Error::Invalid("minibatch must be positive".into()));
        }
        if !(self.radius > 0.0) || !self.radius.is_finite() {
            return Err(Error::Invalid(format!("bad smoothing radius {}", self.radius)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PoOutcome {
    pub final_policy: Mat,
    /// Noise-free cost of `K_0, K_1, …` up to the returned iterate;
    /// `+∞` where the oracle reports no finite cost.
    pub iterate_costs: Vec<f64>,
    pub diverged: bool,
    pub rollouts_used: u64,
}

fn diagnostic_cost(oracle: &impl CostOracle, k: &Mat) -> f64 {
    oracle.exact_cost(k).unwrap_or(f64::INFINITY)
}

/// `K - η ĝ(K)`; consumes `minibatch` draws of `stream`.
pub fn po_step(
    oracle: &impl CostOracle,
    k: &Mat,
    params: &PoParams,
    stream: &mut RngStream,
) -> Result<Mat> {
    let req = ZoRequest::from_gain(k.clone(), params.minibatch, params.radius)?;
    let g = zo_gradient(oracle, &req, stream)?;
    Ok(k - g * params.step_size)
}

/// `iterations` sequential [`po_step`]s from `k0`. A divergent gradient
/// estimate ends the run early with the last stable iterate.
pub fn local_po(
    oracle: &impl CostOracle,
    k0: &Mat,
    params: &PoParams,
    stream: &mut RngStream,
) -> Result<PoOutcome> {
    params.validate()?;
    let m = params.minibatch as u64;
    let mut k = k0.clone();
    let mut iterate_costs = Vec::with_capacity(params.iterations + 1);
    iterate_costs.push(diagnostic_cost(oracle, &k));
    for t in 0..params.iterations {
        match po_step(oracle, &k, params, stream) {
            Ok(next) => {
                k = next;
                iterate_costs.push(diagnostic_cost(oracle, &k));
            }
            Err(e) if e.is_instability() => {
                return Ok(PoOutcome {
                    final_policy: k,
                    iterate_costs,
                    diverged: true,
                    rollouts_used: (t as u64 + 1) * m,
                });
            }
            Err(e) => return Err(e),
        }
    }
    Ok(PoOutcome {
        final_policy: k,
        iterate_costs,
        diverged: false,
        rollouts_used: params.iterations as u64 * m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Divergence;
    use crate::linalg::{exact_cost_of, solve_dare, SystemTuple};
    use crate::rng::Purpose;
    use crate::rollout::{FnOracle, Rollout, RolloutConfig};
    use crate::stats::median;

    fn scalar_sys() -> SystemTuple {
        SystemTuple::scalar(0.5, 1.0, 1.0, 1.0, 0.9).unwrap()
    }

    fn rollout(sys: &SystemTuple) -> Rollout<'_> {
        Rollout::new(sys, RolloutConfig::new(200, 1e-6).unwrap())
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let oracle = FnOracle::new((1, 1), |_k: &Mat, _rng: &mut _| Ok(0.0));
        let k = Mat::from_element(1, 1, 0.3);
        let p = PoParams::new(0.1, 1, 8, 0.1).unwrap();
        let mut s = RngStream::new(0, 0, 0, Purpose::LocalPo);
        assert_eq!(po_step(&oracle, &k, &p, &mut s).unwrap(), k);
        assert_eq!(s.counter(), 8);
    }

    #[test]
    fn zero_step_size_keeps_policy() {
        let sys = scalar_sys();
        let k = Mat::from_element(1, 1, 0.1);
        let p = PoParams::new(0.0, 1, 16, 0.1).unwrap();
        let mut s = RngStream::new(0, 0, 0, Purpose::LocalPo);
        assert_eq!(po_step(&rollout(&sys), &k, &p, &mut s).unwrap(), k);
    }

    #[test]
    fn step_descends_in_most_trials() {
        let sys = scalar_sys();
        let oracle = rollout(&sys);
        let k = Mat::from_element(1, 1, 0.0);
        let c0 = exact_cost_of(&sys, &k).unwrap();
        let p = PoParams::new(0.01, 1, 2000, 0.1).unwrap();
        let wins = (0..100)
            .filter(|&seed| {
                let mut s = RngStream::new(seed, 0, 0, Purpose::LocalPo);
                let next = po_step(&oracle, &k, &p, &mut s).unwrap();
                exact_cost_of(&sys, &next).unwrap() < c0
            })
            .count();
        assert!(wins >= 90, "{wins}/100 descents");
    }

    #[test]
    fn no_iterations_returns_start() {
        let sys = scalar_sys();
        let k0 = Mat::from_element(1, 1, 0.2);
        let p = PoParams::new(0.05, 0, 10, 0.1).unwrap();
        let mut s = RngStream::new(0, 0, 0, Purpose::LocalPo);
        let out = local_po(&rollout(&sys), &k0, &p, &mut s).unwrap();
        assert_eq!(out.final_policy, k0);
        assert_eq!(out.rollouts_used, 0);
        assert!(!out.diverged);
        assert_eq!(out.iterate_costs.len(), 1);
    }

    #[test]
    fn accounting_and_determinism() {
        let sys = scalar_sys();
        let oracle = rollout(&sys);
        let k0 = Mat::from_element(1, 1, 0.0);
        let p = PoParams::new(0.02, 5, 64, 0.1).unwrap();
        let run = || {
            let mut s = RngStream::new(3, 1, 1, Purpose::LocalPo);
            local_po(&oracle, &k0, &p, &mut s).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.rollouts_used, 5 * 64);
        assert_eq!(a.final_policy, b.final_policy);
        assert_eq!(a.iterate_costs, b.iterate_costs);
        assert_eq!(a.iterate_costs.len(), 6);
    }

    #[test]
    fn divergence_keeps_last_stable_iterate() {
        // Stable while K < 0.5; the slope drives K upward by ~0.1 per step.
        let oracle = FnOracle::new((1, 1), |k: &Mat, _rng: &mut _| {
            if k[0] > 0.5 {
                Err(Divergence {
                    step: 1,
                    partial_cost: 0.0,
                })
            } else {
                Ok(-10.0 * k[0])
            }
        });
        let k0 = Mat::from_element(1, 1, 0.0);
        let p = PoParams::new(0.01, 50, 256, 0.05).unwrap();
        let mut s = RngStream::new(0, 0, 0, Purpose::LocalPo);
        let out = local_po(&oracle, &k0, &p, &mut s).unwrap();
        assert!(out.diverged);
        assert_eq!(out.iterate_costs.len() as u64 * 256, out.rollouts_used);
        assert!(out.rollouts_used < 50 * 256);
        assert_eq!(s.counter(), out.rollouts_used);
    }

    #[test]
    fn gap_shrinks_to_target() {
        let sys = scalar_sys();
        let oracle = rollout(&sys);
        let opt = solve_dare(&sys).unwrap();
        // Start from the gain whose gap is 1.0 above the optimum.
        let k_star = opt.gain.gain()[0];
        let mut lo = k_star;
        let mut hi = k_star + 1.5;
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            let gap = exact_cost_of(&sys, &Mat::from_element(1, 1, mid)).unwrap() - opt.cost;
            if gap < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k0 = Mat::from_element(1, 1, lo);
        let p = PoParams::new(0.02, 30, 1000, 0.2).unwrap();
        let good = (0..50)
            .filter(|&seed| {
                let mut s = RngStream::new(seed, 0, 0, Purpose::LocalPo);
                let out = local_po(&oracle, &k0, &p, &mut s).unwrap();
                out.iterate_costs.last().unwrap() - opt.cost <= 0.125
            })
            .count();
        assert!(good >= 45, "{good}/50 reached the target");
    }

    #[test]
    fn more_iterations_do_not_hurt() {
        let sys = scalar_sys();
        let oracle = rollout(&sys);
        let opt = solve_dare(&sys).unwrap();
        let k0 = Mat::from_element(1, 1, -0.3);
        let final_gaps = |iters: usize| -> f64 {
            let p = PoParams::new(0.02, iters, 1000, 0.2).unwrap();
            let gaps: Vec<f64> = (0..50)
                .map(|seed| {
                    let mut s = RngStream::new(seed, 0, 0, Purpose::LocalPo);
                    local_po(&oracle, &k0, &p, &mut s).unwrap().iterate_costs.last().unwrap()
                        - opt.cost
                })
                .collect();
            median(&gaps)
        };
        let (short, long) = (final_gaps(2), final_gaps(4));
        assert!(long <= short, "{long} > {short}");
    }
}
