//! Fixtures shared by the benchmarks.

use pcpo_core::harness::{generate_scenario, GeneratorParams};
use pcpo_core::linalg::{solve_dare, stage_cost_bound};
use pcpo_core::pcpo::{PcpoConfig, PracticalSchedule};
use pcpo_core::rollout::{NoiseModel, Rollout, RolloutConfig};
use pcpo_core::{ClusterScenario, Policy, SystemTuple};

/// A random `n × n` system with `m` inputs and its optimal gain.
pub fn system(n: usize, m: usize, seed: u64) -> (SystemTuple, Policy) {
    let mut p = GeneratorParams::scalar(vec![1], 0.5, 1.0);
    p.base = None;
    p.state_dim = n;
    p.input_dim = m;
    let sc = generate_scenario(&p, seed).expect("fixture system");
    let sys = sc.systems()[0].clone();
    let k = solve_dare(&sys).expect("fixture gain").gain;
    (sys, k)
}

pub fn rollout<'a>(sys: &'a SystemTuple, k: &Policy) -> Rollout<'a> {
    let bound = stage_cost_bound(sys, k).expect("stabilizing fixture");
    let cfg = RolloutConfig::from_tolerance(sys.gamma(), 1e-6, bound).expect("horizon");
    Rollout::new(sys, cfg)
        .with_noise(NoiseModel::sphere_uniform(sys.state_dim()).expect("noise"))
        .expect("rollout")
}

/// Twelve scalar agents in three clusters of four.
pub fn desk_scenario() -> ClusterScenario {
    generate_scenario(&GeneratorParams::scalar(vec![4, 4, 4], 0.5, 4.0), 0).expect("fixture scenario")
}

/// Settings that run exactly one epoch on [`desk_scenario`].
pub fn one_epoch_config() -> PcpoConfig {
    let schedule = PracticalSchedule {
        minibatch: 100,
        rounds: 4,
        round_growth: 0.0,
        step_size: 0.01,
        radius: 0.1,
        radius_cap: 0.5,
    };
    PcpoConfig::practical(32.0, 2 * 4 * 100 + 100, schedule)
}
