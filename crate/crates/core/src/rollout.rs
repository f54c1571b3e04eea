//! Seeded trajectory simulation: bounded noise, truncated discounted rollout
//! costs, and minibatched cost estimation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Divergence, Error, Result};
use crate::linalg::{exact_cost_of, Mat, Policy, SystemTuple};
use crate::rng::RngStream;
use crate::stats::pairwise_sum;

/// Minimum minibatch chunk handed to a worker thread.
const PAR_MIN_LEN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    /// Uniform on the sphere of radius `√n`.
    #[default]
    SphereUniform,
    /// Standard normal conditioned on a norm cutoff, rescaled to identity
    /// covariance.
    TruncatedGaussian,
}

/// Configuration-file form of a noise model; the dimension comes from the
/// system it drives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct NoiseSpec {
    #[serde(default)]
    pub kind: NoiseKind,
    /// Hard bound on `‖z‖²`; required for the truncated Gaussian.
    #[serde(default)]
    pub bound: Option<f64>,
}

/// Zero-mean, identity-covariance noise with `‖z‖² ≤ bound` almost surely.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    dim: usize,
    bound: f64,
    cutoff: f64,
    scale: f64,
}

fn chi2_cdf(dof: usize, x: f64) -> f64 {
    ChiSquared::new(dof as f64)
        .expect("positive degrees of freedom")
        .cdf(x)
}

impl NoiseModel {
    pub fn sphere_uniform(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("noise dimension must be positive".into()));
        }
        Ok(NoiseModel {
            kind: NoiseKind::SphereUniform,
            dim,
            bound: dim as f64,
            cutoff: f64::INFINITY,
            scale: (dim as f64).sqrt(),
        })
    }

    /// `g ~ N(0, I)` conditioned on `‖g‖² ≤ c`, multiplied by `s` with
    /// `s² = P(χ²_n ≤ c) / P(χ²_{n+2} ≤ c)` so that `E[zzᵀ] = I`. The cutoff
    /// `c` is solved from `s² c = bound`, which needs `bound > n + 2`.
    pub fn truncated_gaussian(dim: usize, bound: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("noise dimension must be positive".into()));
        }
        let n = dim as f64;
        if !(bound > n + 2.0) || !bound.is_finite() {
            return Err(Error::Invalid(format!(
                "truncated Gaussian noise needs a norm bound above n + 2 = {}, got {bound}",
                n + 2.0
            )));
        }
        let implied = |c: f64| c * chi2_cdf(dim, c) / chi2_cdf(dim + 2, c);
        let (mut lo, mut hi) = (1e-9, bound);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if implied(mid) < bound {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cutoff = lo;
        let accept = chi2_cdf(dim, cutoff);
        if accept < 1e-3 {
            return Err(Error::Invalid(format!(
                "norm bound {bound} leaves acceptance probability {accept:.2e}; loosen it"
            )));
        }
        let scale = (accept / chi2_cdf(dim + 2, cutoff)).sqrt();
        Ok(NoiseModel {
            kind: NoiseKind::TruncatedGaussian,
            dim,
            bound: scale * scale * cutoff,
            cutoff,
            scale,
        })
    }

    pub fn from_spec(spec: &NoiseSpec, dim: usize) -> Result<Self> {
        match spec.kind {
            NoiseKind::SphereUniform => {
                let model = Self::sphere_uniform(dim)?;
                if let Some(b) = spec.bound {
                    if (b - model.bound).abs() > 1e-12 * b.max(1.0) {
                        return Err(Error::Config(format!(
                            "sphere-uniform noise has bound n = {dim}, config says {b}"
                        )));
                    }
                }
                Ok(model)
            }
            NoiseKind::TruncatedGaussian => {
                let b = spec.bound.ok_or_else(|| {
                    Error::Config("truncated Gaussian noise needs a `bound`".into())
                })?;
                Self::truncated_gaussian(dim, b)
            }
        }
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Almost-sure bound on `‖z‖²`.
    pub fn bound(&self) -> f64 {
        self.bound
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.kind {
            NoiseKind::SphereUniform => {
                if self.dim == 1 {
                    out[0] = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    return;
                }
                loop {
                    let mut sq = 0.0;
                    for v in out.iter_mut() {
                        *v = rng.sample(StandardNormal);
                        sq += *v * *v;
                    }
                    if sq > 0.0 {
                        let f = self.scale / sq.sqrt();
                        out.iter_mut().for_each(|v| *v *= f);
                        return;
                    }
                }
            }
            NoiseKind::TruncatedGaussian => loop {
                let mut sq = 0.0;
                for v in out.iter_mut() {
                    *v = rng.sample(StandardNormal);
                    sq += *v * *v;
                }
                if sq <= self.cutoff {
                    out.iter_mut().for_each(|v| *v *= self.scale);
                    return;
                }
            },
        }
    }
}

/// One noise draw, consuming one draw index of `stream`.
pub fn sample_noise(model: &NoiseModel, stream: &mut RngStream) -> Vec<f64> {
    let mut out = vec![0.0; model.dim()];
    model.sample_into(&mut stream.next_draw(), &mut out);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RolloutConfig {
    pub horizon: usize,
    pub truncation_tol: f64,
    /// State-norm threshold beyond which a rollout is declared divergent.
    #[serde(default = "default_blowup")]
    pub blowup: f64,
}

fn default_blowup() -> f64 {
    RolloutConfig::DEFAULT_BLOWUP
}

impl RolloutConfig {
    pub const DEFAULT_BLOWUP: f64 = 1e8;
    pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-6;

    pub fn new(horizon: usize, truncation_tol: f64) -> Result<Self> {
        if horizon == 0 {
            return Err(Error::Config("rollout horizon must be positive".into()));
        }
        if !(truncation_tol > 0.0) {
            return Err(Error::Config("truncation tolerance must be positive".into()));
        }
        Ok(RolloutConfig {
            horizon,
            truncation_tol,
            blowup: Self::DEFAULT_BLOWUP,
        })
    }

    /// Shortest horizon whose discarded tail `γ^H · C_ub / (1-γ)` is at most
    /// `truncation_tol`, where `stage_cost_bound` bounds every expected stage
    /// cost.
    pub fn from_tolerance(gamma: f64, truncation_tol: f64, stage_cost_bound: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::Config(format!("discount {gamma} outside (0, 1)")));
        }
        if !(stage_cost_bound > 0.0) || !stage_cost_bound.is_finite() {
            return Err(Error::Config("stage cost bound must be positive".into()));
        }
        let ratio = truncation_tol * (1.0 - gamma) / stage_cost_bound;
        let horizon = if ratio >= 1.0 {
            1
        } else {
            (ratio.ln() / gamma.ln()).ceil() as usize
        };
        Self::new(horizon.max(1), truncation_tol)
    }

    pub fn with_blowup(mut self, blowup: f64) -> Self {
        self.blowup = blowup;
        self
    }

    /// Bound on the expected discarded tail for a given stage-cost bound.
    pub fn tail_bound(&self, gamma: f64, stage_cost_bound: f64) -> f64 {
        gamma.powi(self.horizon as i32) * stage_cost_bound / (1.0 - gamma)
    }
}

/// Anything that can produce noisy cost samples for a gain.
///
/// The production implementation is [`Rollout`]; analytic stand-ins let tests
/// check estimators against known ground truth.
pub trait CostOracle: Sync {
    /// Policy shape `(m, n)`.
    fn shape(&self) -> (usize, usize);

    fn sample_cost(&self, k: &Mat, rng: &mut ChaCha8Rng) -> std::result::Result<f64, Divergence>;

    /// Noise-free cost, when the oracle knows it. Used for diagnostics only.
    fn exact_cost(&self, _k: &Mat) -> Option<f64> {
        None
    }
}

/// Cost oracle backed by a closure.
pub struct FnOracle<F> {
    shape: (usize, usize),
    f: F,
}

impl<F> FnOracle<F>
where
    F: Fn(&Mat, &mut ChaCha8Rng) -> std::result::Result<f64, Divergence> + Sync,
{
    pub fn new(shape: (usize, usize), f: F) -> Self {
        FnOracle { shape, f }
    }
}

impl<F> CostOracle for FnOracle<F>
where
    F: Fn(&Mat, &mut ChaCha8Rng) -> std::result::Result<f64, Divergence> + Sync,
{
    fn shape(&self) -> (usize, usize) {
        self.shape
    }

    fn sample_cost(&self, k: &Mat, rng: &mut ChaCha8Rng) -> std::result::Result<f64, Divergence> {
        (self.f)(k, rng)
    }
}

/// Noisy LQR trajectories of one system.
#[derive(Debug, Clone)]
pub struct Rollout<'a> {
    system: &'a SystemTuple,
    noise: NoiseModel,
    config: RolloutConfig,
}

impl<'a> Rollout<'a> {
    /// Uses sphere-uniform noise.
    pub fn new(system: &'a SystemTuple, config: RolloutConfig) -> Self {
        let noise = NoiseModel::sphere_uniform(system.state_dim()).expect("n >= 1");
        Rollout {
            system,
            noise,
            config,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Result<Self> {
        if noise.dim() != self.system.state_dim() {
            return Err(Error::Dimension(format!(
                "noise dimension {} differs from state dimension {}",
                noise.dim(),
                self.system.state_dim()
            )));
        }
        self.noise = noise;
        Ok(self)
    }

    pub fn system(&self) -> &SystemTuple {
        self.system
    }

    pub fn config(&self) -> &RolloutConfig {
        &self.config
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    /// One truncated trajectory cost `Σ_{t<H} γ^t (x_tᵀQx_t + u_tᵀRu_t)`.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        k: &Mat,
        rng: &mut R,
    ) -> std::result::Result<f64, Divergence> {
        let sys = self.system;
        let closed = sys.closed_loop(k).expect("policy shape checked by caller");
        let weight = sys.stage_weight(k).expect("policy shape checked by caller");
        let gamma = sys.gamma();
        let horizon = self.config.horizon;
        let blowup_sq = self.config.blowup * self.config.blowup;
        let n = sys.state_dim();

        if n == 1 {
            let (m, p) = (closed[(0, 0)], weight[(0, 0)]);
            let mut z = [0.0];
            let (mut x, mut disc, mut cost) = (0.0f64, 1.0f64, 0.0f64);
            for t in 0..horizon {
                cost += disc * p * x * x;
                if t + 1 == horizon {
                    break;
                }
                self.noise.sample_into(rng, &mut z);
                x = m * x + z[0];
                disc *= gamma;
                if !(x * x <= blowup_sq) {
                    return Err(Divergence {
                        step: t + 1,
                        partial_cost: cost,
                    });
                }
            }
            return Ok(cost);
        }

        // Row-major copies keep the inner loop allocation-free.
        let m: Vec<f64> = (0..n * n).map(|i| closed[(i / n, i % n)]).collect();
        let p: Vec<f64> = (0..n * n).map(|i| weight[(i / n, i % n)]).collect();
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut z = vec![0.0; n];
        let (mut disc, mut cost) = (1.0f64, 0.0f64);
        for t in 0..horizon {
            let mut quad = 0.0;
            for i in 0..n {
                let row = &p[i * n..(i + 1) * n];
                let px: f64 = row.iter().zip(&x).map(|(a, b)| a * b).sum();
                quad += x[i] * px;
            }
            cost += disc * quad;
            if t + 1 == horizon {
                break;
            }
            self.noise.sample_into(rng, &mut z);
            let mut sq = 0.0;
            for i in 0..n {
                let row = &m[i * n..(i + 1) * n];
                let v = row.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() + z[i];
                next[i] = v;
                sq += v * v;
            }
            std::mem::swap(&mut x, &mut next);
            disc *= gamma;
            if !(sq <= blowup_sq) {
                return Err(Divergence {
                    step: t + 1,
                    partial_cost: cost,
                });
            }
        }
        Ok(cost)
    }
}

impl CostOracle for Rollout<'_> {
    fn shape(&self) -> (usize, usize) {
        (self.system.input_dim(), self.system.state_dim())
    }

    fn sample_cost(&self, k: &Mat, rng: &mut ChaCha8Rng) -> std::result::Result<f64, Divergence> {
        self.simulate(k, rng)
    }

    fn exact_cost(&self, k: &Mat) -> Option<f64> {
        exact_cost_of(self.system, k).ok()
    }
}

fn check_shape(oracle: &impl CostOracle, k: &Mat) -> Result<()> {
    if k.shape() != oracle.shape() {
        return Err(Error::Dimension(format!(
            "policy is {:?}, oracle expects {:?}",
            k.shape(),
            oracle.shape()
        )));
    }
    Ok(())
}

/// One rollout cost sample at `k`, consuming one draw index.
pub fn rollout_cost(
    sys: &SystemTuple,
    k: &Policy,
    cfg: &RolloutConfig,
    noise: &NoiseModel,
    stream: &mut RngStream,
) -> Result<f64> {
    let rollout = Rollout::new(sys, *cfg).with_noise(noise.clone())?;
    check_shape(&rollout, k.gain())?;
    Ok(rollout.simulate(k.gain(), &mut stream.next_draw())?)
}

/// Mean of `minibatch` independent rollout costs at `k`; consumes exactly
/// `minibatch` draw indices. Any divergent sample fails the whole estimate.
pub fn estimate_cost(
    oracle: &impl CostOracle,
    k: &Mat,
    minibatch: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    if minibatch == 0 {
        return Err(Error::Invalid("minibatch must be positive".into()));
    }
    check_shape(oracle, k)?;
    let base = stream.reserve(minibatch as u64);
    let samples: Vec<std::result::Result<f64, Divergence>> = (0..minibatch)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| oracle.sample_cost(k, &mut stream.generator_at(base + i as u64)))
        .collect();
    let mut costs = Vec::with_capacity(minibatch);
    for s in samples {
        costs.push(s?);
    }
    Ok(pairwise_sum(&costs) / minibatch as f64)
}
