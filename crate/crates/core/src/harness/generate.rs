//! Synthetic clustered scenarios.
//!
//! Clusters share a base `(A, B, Q, R, γ)`. Cluster `j` scales `Q` so that
//! its optimal cost sits `j·h` above cluster 0's; in the A-perturbation
//! regime, cluster `j` additionally shifts `A` by `j·offset·I` before the
//! cost scaling is solved.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{is_stabilizing, matrix_from_rows, solve_dare, spectral_radius, Mat, Policy, SystemTuple};
use crate::rng::{Purpose, RngStream};
use crate::scenario::ClusterScenario;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Heterogeneity {
    #[default]
    QScaling,
    APerturbation {
        /// Diagonal shift between consecutive clusters.
        offset: f64,
    },
}

/// A fixed base system given explicitly instead of drawn at random.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseSystem {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub cluster_sizes: Vec<usize>,
    #[serde(default = "one")]
    pub state_dim: usize,
    #[serde(default = "one")]
    pub input_dim: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Target optimal-cost spacing `h` between consecutive clusters.
    pub heterogeneity: f64,
    #[serde(default)]
    pub regime: Heterogeneity,
    /// Explicit base system; otherwise `A` is drawn with spectral radius
    /// `base_radius` and `B` entrywise standard normal, with `Q = I`, `R = I`.
    #[serde(default)]
    pub base: Option<BaseSystem>,
    #[serde(default = "default_base_radius")]
    pub base_radius: f64,
    /// Relative size of the model error behind the initial policies.
    #[serde(default = "default_init_perturbation")]
    pub init_perturbation: f64,
    /// Largest cost scale the bisection may use.
    #[serde(default = "default_max_scale")]
    pub max_scale: f64,
}

fn one() -> usize {
    1
}
fn default_gamma() -> f64 {
    0.9
}
fn default_base_radius() -> f64 {
    0.8
}
fn default_init_perturbation() -> f64 {
    0.2
}
fn default_max_scale() -> f64 {
    1e4
}

impl GeneratorParams {
    /// Scalar clusters on `A = a, B = Q = R = 1`.
    pub fn scalar(cluster_sizes: Vec<usize>, a: f64, heterogeneity: f64) -> Self {
        GeneratorParams {
            cluster_sizes,
            state_dim: 1,
            input_dim: 1,
            gamma: default_gamma(),
            heterogeneity,
            regime: Heterogeneity::QScaling,
            base: Some(BaseSystem {
                a: vec![vec![a]],
                b: vec![vec![1.0]],
                q: vec![vec![1.0]],
                r: vec![vec![1.0]],
            }),
            base_radius: default_base_radius(),
            init_perturbation: default_init_perturbation(),
            max_scale: default_max_scale(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.cluster_sizes.is_empty() || self.cluster_sizes.contains(&0) {
            return Err(Error::Generation("cluster sizes must be positive".into()));
        }
        if self.state_dim == 0 || self.input_dim == 0 {
            return Err(Error::Generation("dimensions must be positive".into()));
        }
        if !(self.heterogeneity > 0.0) || !self.heterogeneity.is_finite() {
            return Err(Error::Generation("heterogeneity must be positive".into()));
        }
        if !(self.init_perturbation >= 0.0) || !(self.max_scale > 1.0) {
            return Err(Error::Generation("bad perturbation or scale range".into()));
        }
        Ok(())
    }
}

const BASE_ATTEMPTS: usize = 100;
const INIT_ATTEMPTS: usize = 200;
const BISECTION_STEPS: usize = 200;

fn normal_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal))
}

fn base_system<R: Rng>(p: &GeneratorParams, rng: &mut R) -> Result<SystemTuple> {
    if let Some(b) = &p.base {
        return SystemTuple::new(
            matrix_from_rows(&b.a)?,
            matrix_from_rows(&b.b)?,
            matrix_from_rows(&b.q)?,
            matrix_from_rows(&b.r)?,
            p.gamma,
        )
        .map_err(|e| Error::Generation(format!("base system: {e}")));
    }
    let (n, m) = (p.state_dim, p.input_dim);
    for _ in 0..BASE_ATTEMPTS {
        let a = normal_matrix(n, n, rng);
        let rad = spectral_radius(&a)?;
        if rad < 1e-6 {
            continue;
        }
        let a = a * (p.base_radius / rad);
        let b = normal_matrix(n, m, rng);
        if let Ok(sys) = SystemTuple::new(a, b, Mat::identity(n, n), Mat::identity(m, m), p.gamma) {
            return Ok(sys);
        }
    }
    Err(Error::Generation("could not draw a controllable base system".into()))
}

/// Scales `Q` by the `s` with `C*(sQ, R) = target`. `C*` increases with
/// `s`, so bisection in log space converges.
fn scale_for_cost(sys: &SystemTuple, target: f64, max_scale: f64) -> Result<SystemTuple> {
    let cost_at = |s: f64| -> Result<f64> { Ok(solve_dare(&sys.with_cost_scaled(s, 1.0)?)?.cost) };
    let (mut lo, mut hi) = ((1.0 / max_scale).ln(), max_scale.ln());
    if !(cost_at(lo.exp())? <= target && cost_at(hi.exp())? >= target) {
        return Err(Error::Generation(format!(
            "optimal cost {target:.4} is out of reach with Q scales in [1/{max_scale}, {max_scale}]"
        )));
    }
    for _ in 0..BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let c = cost_at(mid.exp())?;
        if (c - target).abs() <= 1e-12 * target || hi - lo < 1e-15 {
            lo = mid;
            break;
        }
        if c < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    sys.with_cost_scaled(lo.exp(), 1.0)
}

fn perturbed_initial_policy<R: Rng>(sys: &SystemTuple, eps: f64, rng: &mut R) -> Result<Policy> {
    let (n, m) = (sys.state_dim(), sys.input_dim());
    for _ in 0..INIT_ATTEMPTS {
        let da = normal_matrix(n, n, rng) * (eps * sys.a().norm().max(1.0) / (n as f64));
        let db = normal_matrix(n, m, rng) * (eps * sys.b().norm().max(1.0) / ((n * m) as f64).sqrt());
        let model = SystemTuple::new(
            sys.a() + da,
            sys.b() + db,
            sys.q().clone(),
            sys.r().clone(),
            sys.gamma(),
        );
        let Ok(model) = model else { continue };
        let Ok(dare) = solve_dare(&model) else { continue };
        if is_stabilizing(&dare.gain, sys)? {
            return Ok(dare.gain);
        }
    }
    Err(Error::Generation(
        "no stabilizing initial policy from the perturbed model".into(),
    ))
}

/// Builds a scenario; every draw comes from `(seed, Generator)` streams.
pub fn generate_scenario(params: &GeneratorParams, seed: u64) -> Result<ClusterScenario> {
    params.validate()?;
    let stream = RngStream::new(seed, 0, 0, Purpose::Generator);
    let mut rng = stream.generator_at(0);
    let base = base_system(params, &mut rng)?;

    let h = params.cluster_sizes.len();
    let shifted: Vec<SystemTuple> = (0..h)
        .map(|j| match params.regime {
            Heterogeneity::QScaling => Ok(base.clone()),
            Heterogeneity::APerturbation { offset } => {
                let n = base.state_dim();
                base.with_dynamics(base.a() + Mat::identity(n, n) * (offset * j as f64))
                    .map_err(|e| Error::Generation(format!("cluster {j}: {e}")))
            }
        })
        .collect::<Result<_>>()?;

    // Cluster 0 keeps its costs; later clusters are placed `h` apart above
    // the largest unscaled optimum so every gap is exactly `h`.
    let unscaled: Vec<f64> = shifted
        .iter()
        .map(|s| solve_dare(s).map(|d| d.cost))
        .collect::<Result<_>>()?;
    let anchor = unscaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let systems: Vec<SystemTuple> = shifted
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let target = match params.regime {
                Heterogeneity::QScaling => unscaled[0] + params.heterogeneity * j as f64,
                Heterogeneity::APerturbation { .. } => anchor + params.heterogeneity * j as f64,
            };
            if j == 0 && params.regime == Heterogeneity::QScaling {
                Ok(s.clone())
            } else {
                scale_for_cost(s, target, params.max_scale)
            }
        })
        .collect::<Result<_>>()?;

    let mut assignment = Vec::new();
    for (c, &size) in params.cluster_sizes.iter().enumerate() {
        assignment.extend(std::iter::repeat_n(c, size));
    }
    let mut init_rng = stream.generator_at(1);
    let initial = assignment
        .iter()
        .map(|&c| perturbed_initial_policy(&systems[c], params.init_perturbation, &mut init_rng))
        .collect::<Result<Vec<_>>>()?;
    ClusterScenario::new(systems, assignment, initial).map_err(|e| Error::Generation(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_cluster_has_infinite_gap() {
        let sc = generate_scenario(&GeneratorParams::scalar(vec![3], 0.5, 1.0), 0).unwrap();
        assert_eq!(sc.separation_gap().unwrap(), f64::INFINITY);
        assert_eq!(sc.n_agents(), 3);
    }

    #[test]
    fn zero_dynamics_unit_step() {
        // A = 0: C* = γ/(1-γ)·Q, so Q ∈ {1, 2} is one discount factor apart.
        let g = 0.9 / 0.1;
        let sc = generate_scenario(&GeneratorParams::scalar(vec![1, 1], 0.0, g), 4).unwrap();
        let q: Vec<f64> = sc.systems().iter().map(|s| s.q()[0]).collect();
        assert!((q[0] - 1.0).abs() < 1e-12);
        assert!((q[1] - 2.0).abs() < 1e-9);
        assert!((sc.separation_gap().unwrap() - g).abs() < 1e-9);
    }

    #[test]
    fn requested_gap_is_met() {
        for seed in 0..5 {
            let mut p = GeneratorParams::scalar(vec![4, 4, 4], 0.5, 4.0);
            p.base = None;
            p.state_dim = 2;
            p.input_dim = 1;
            let sc = generate_scenario(&p, seed).unwrap();
            assert!((sc.separation_gap().unwrap() - 4.0).abs() < 1e-6);
            for (k, &c) in sc.initial_policies().iter().zip(sc.assignment()) {
                assert!(is_stabilizing(k, &sc.systems()[c]).unwrap());
            }
        }
    }

    #[test]
    fn a_perturbation_regime() {
        let mut p = GeneratorParams::scalar(vec![2, 2], 0.5, 5.0);
        p.regime = Heterogeneity::APerturbation { offset: 2.0 };
        let sc = generate_scenario(&p, 1).unwrap();
        assert_eq!(sc.systems()[1].a()[0], 2.5);
        assert!(sc.separation_gap().unwrap() >= 5.0 - 1e-6);
    }

    #[test]
    fn deterministic_per_seed() {
        let p = GeneratorParams::scalar(vec![2, 2], 0.5, 3.0);
        assert_eq!(generate_scenario(&p, 9).unwrap(), generate_scenario(&p, 9).unwrap());
    }

    #[test]
    fn infeasible_targets_fail() {
        let mut p = GeneratorParams::scalar(vec![1, 1], 0.5, 1e9);
        p.max_scale = 10.0;
        assert!(matches!(generate_scenario(&p, 0), Err(Error::Generation(_))));
    }
}
