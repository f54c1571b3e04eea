//! Minibatched one-point zeroth-order gradient estimates and the
//! smoothed-cost diagnostics they are unbiased for.
//!
//! Element `k` of a minibatch draws `U_k` uniformly on the unit Frobenius
//! sphere, runs one rollout at `K + r U_k` and contributes
//! `C(K + r U_k) (D / r) U_k`. The estimate is the mean over the minibatch.
//! Its expectation is the gradient of the ball-smoothed cost
//! `C_r(K) = E_v[C(K + r v)]`, `v` uniform on the unit Frobenius ball.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{exact_cost_of, Mat, Policy, SystemTuple};
use crate::rng::{Purpose, RngStream};
use crate::rollout::CostOracle;
use crate::stats::{median, pairwise_sum, pairwise_sum_matrices};

const PAR_MIN_LEN: usize = 64;

/// Uniform draw from the unit Frobenius sphere in `R^{m×n}`.
pub fn sample_unit_frobenius<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Mat {
    loop {
        let u = Mat::from_fn(m, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let norm = u.norm();
        if norm > 0.0 {
            return u / norm;
        }
    }
}

/// [`sample_unit_frobenius`] on the next draw of `stream`.
pub fn sample_unit_frobenius_from(m: usize, n: usize, stream: &mut RngStream) -> Mat {
    sample_unit_frobenius(m, n, &mut stream.next_draw())
}

/// Uniform draw from the unit Frobenius ball: a sphere draw scaled by
/// `u^{1/(mn)}`.
pub fn sample_unit_ball<R: Rng + ?Sized>(m: usize, n: usize, rng: &mut R) -> Mat {
    let dir = sample_unit_frobenius(m, n, rng);
    let u: f64 = rng.random();
    dir * u.powf(1.0 / (m * n) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZoRequest {
    pub policy: Mat,
    pub minibatch: usize,
    pub radius: f64,
}

impl ZoRequest {
    pub fn new(policy: &Policy, minibatch: usize, radius: f64) -> Result<Self> {
        Self::from_gain(policy.gain().clone(), minibatch, radius)
    }

    pub fn from_gain(policy: Mat, minibatch: usize, radius: f64) -> Result<Self> {
        if minibatch == 0 {
            return Err(Error::Invalid("minibatch must be positive".into()));
        }
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::Invalid(format!(
                "smoothing radius must be positive, got {radius}"
            )));
        }
        if policy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("policy has non-finite entries".into()));
        }
        Ok(ZoRequest {
            policy,
            minibatch,
            radius,
        })
    }

    /// `D = m·n`.
    pub fn dim(&self) -> usize {
        self.policy.len()
    }
}

/// A gradient estimate together with its per-element rollout costs.
#[derive(Debug, Clone)]
pub struct ZoEstimate {
    pub gradient: Mat,
    pub element_costs: Vec<f64>,
    /// Largest Frobenius norm of a single minibatch term.
    pub max_element_norm: f64,
}

/// Eq.-(5)-style minibatched estimate with per-element details; consumes
/// `minibatch` draw indices of `stream`.
pub fn zo_estimate(
    oracle: &impl CostOracle,
    req: &ZoRequest,
    stream: &mut RngStream,
) -> Result<ZoEstimate> {
    let (m, n) = oracle.shape();
    if req.policy.shape() != (m, n) {
        return Err(Error::Dimension(format!(
            "policy is {:?}, oracle expects {:?}",
            req.policy.shape(),
            (m, n)
        )));
    }
    let scale = req.dim() as f64 / req.radius;
    let base = stream.reserve(req.minibatch as u64);
    let elements: Vec<Result<(f64, Mat)>> = (0..req.minibatch)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|k| {
            let mut rng = stream.generator_at(base + k as u64);
            let u = sample_unit_frobenius(m, n, &mut rng);
            let perturbed = &req.policy + &u * req.radius;
            let cost = oracle
                .sample_cost(&perturbed, &mut rng)
                .map_err(|divergence| Error::GradientDiverged {
                    element: k,
                    divergence,
                })?;
            Ok((cost, u * (cost * scale)))
        })
        .collect();
    let mut costs = Vec::with_capacity(req.minibatch);
    let mut terms = Vec::with_capacity(req.minibatch);
    for e in elements {
        let (c, t) = e?;
        costs.push(c);
        terms.push(t);
    }
    let max_element_norm = terms.iter().map(|t| t.norm()).fold(0.0, f64::max);
    let sum = pairwise_sum_matrices(&terms).expect("non-empty minibatch");
    Ok(ZoEstimate {
        gradient: sum / req.minibatch as f64,
        element_costs: costs,
        max_element_norm,
    })
}

/// Minibatched zeroth-order gradient at `req.policy`.
pub fn zo_gradient(
    oracle: &impl CostOracle,
    req: &ZoRequest,
    stream: &mut RngStream,
) -> Result<Mat> {
    zo_estimate(oracle, req, stream).map(|e| e.gradient)
}

/// Monte-Carlo estimate of `E_v[f(K + r v)]` over the unit ball.
pub fn smoothed_value<F>(
    f: F,
    k: &Mat,
    radius: f64,
    samples: usize,
    stream: &mut RngStream,
) -> Result<f64>
where
    F: Fn(&Mat) -> Result<f64> + Sync,
{
    if samples == 0 {
        return Err(Error::Invalid("need at least one sample".into()));
    }
    let (m, n) = k.shape();
    let base = stream.reserve(samples as u64);
    let values: Vec<Result<f64>> = (0..samples)
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let v = sample_unit_ball(m, n, &mut stream.generator_at(base + i as u64));
            f(&(k + v * radius))
        })
        .collect();
    let values = values.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&values) / samples as f64)
}

/// Smoothed cost `C_r(K)` from [`exact_cost_of`] on ball perturbations.
/// Fails with a stability error if any perturbed gain is not stabilizing.
pub fn smoothed_cost(
    sys: &SystemTuple,
    k: &Mat,
    radius: f64,
    samples: usize,
    stream: &mut RngStream,
) -> Result<f64> {
    smoothed_value(|kk| exact_cost_of(sys, kk), k, radius, samples, stream)
}

/// Central differences of [`smoothed_cost`] with common random numbers: every
/// evaluation replays the same ball draws.
pub fn smoothed_gradient(
    sys: &SystemTuple,
    k: &Mat,
    radius: f64,
    samples: usize,
    stream: &RngStream,
    step: f64,
) -> Result<Mat> {
    let mut grad = Mat::zeros(k.nrows(), k.ncols());
    let mut probe = k.clone();
    for idx in 0..k.len() {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = smoothed_cost(sys, &probe, radius, samples, &mut stream.clone())?;
        probe[idx] = orig - step;
        let down = smoothed_cost(sys, &probe, radius, samples, &mut stream.clone())?;
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    Ok(grad)
}

/// Problem constants entering the concentration radius, usually probed
/// empirically (see [`crate::probe`]).
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ConcentrationConstants {
    pub g_inf: f64,
    pub lambda: f64,
    pub phi: f64,
    pub rho: f64,
}

impl ConcentrationConstants {
    /// `G∞ + λρ/D + φρ²/D`.
    pub fn c_p8(&self, dim: usize) -> f64 {
        let d = dim as f64;
        self.g_inf + self.lambda * self.rho / d + self.phi * self.rho * self.rho / d
    }

    /// High-probability deviation radius of an average of `agents`
    /// independent `minibatch`-sized estimates.
    pub fn deviation_radius(
        &self,
        dim: usize,
        radius: f64,
        minibatch: usize,
        agents: usize,
        delta_prime: f64,
    ) -> f64 {
        let d = dim as f64;
        self.c_p8(dim) * d / (radius * ((agents * minibatch) as f64).sqrt())
            * (2.0 * d / delta_prime).ln().sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConcentrationProbe {
    pub minibatch: usize,
    pub radius: f64,
    pub trials: usize,
    /// Number of independent agents whose estimates are averaged.
    pub agents: usize,
    pub delta_prime: f64,
}

#[derive(Debug, Clone)]
pub struct ProbeReport {
    /// `‖ĝ - ∇C_r(K)‖` per trial.
    pub deviations: Vec<f64>,
    pub bound: f64,
    pub exceedance_rate: f64,
}

impl ProbeReport {
    pub fn median_deviation(&self) -> f64 {
        median(&self.deviations)
    }
}

/// Runs `trials` estimates at `k` (each the mean of `agents` independent
/// agents' minibatched estimates) and measures their distance to
/// `reference`, normally the smoothed-cost gradient.
pub fn concentration_probe(
    oracle: &impl CostOracle,
    k: &Mat,
    reference: &Mat,
    probe: &ConcentrationProbe,
    constants: &ConcentrationConstants,
    seed: u64,
) -> Result<ProbeReport> {
    if probe.trials == 0 || probe.agents == 0 {
        return Err(Error::Invalid("need at least one trial and one agent".into()));
    }
    if !(probe.delta_prime > 0.0 && probe.delta_prime < 1.0) {
        return Err(Error::Invalid("delta' must lie in (0, 1)".into()));
    }
    let req = ZoRequest::from_gain(k.clone(), probe.minibatch, probe.radius)?;
    let mut deviations = Vec::with_capacity(probe.trials);
    for trial in 0..probe.trials {
        let mut estimates = Vec::with_capacity(probe.agents);
        for agent in 0..probe.agents {
            let mut stream = RngStream::new(seed, agent as u64, trial as u64, Purpose::Diagnostic);
            estimates.push(zo_gradient(oracle, &req, &mut stream)?);
        }
        let avg = pairwise_sum_matrices(&estimates).expect("agents > 0") / probe.agents as f64;
        deviations.push((avg - reference).norm());
    }
    let bound = constants.deviation_radius(
        req.dim(),
        probe.radius,
        probe.minibatch,
        probe.agents,
        probe.delta_prime,
    );
    let exceed = deviations.iter().filter(|&&d| d > bound).count();
    Ok(ProbeReport {
        exceedance_rate: exceed as f64 / probe.trials as f64,
        deviations,
        bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Divergence;
    use crate::rollout::FnOracle;

    fn stream(tag: u64) -> RngStream {
        RngStream::new(11, tag, 0, Purpose::Diagnostic)
    }

    #[test]
    fn unit_frobenius_norm() {
        let mut rng = stream(0).generator_at(0);
        for _ in 0..1000 {
            let u = sample_unit_frobenius(2, 3, &mut rng);
            assert!((u.norm() - 1.0).abs() < 1e-14);
        }
        let mut s = stream(0);
        assert!((sample_unit_frobenius_from(1, 1, &mut s).norm() - 1.0).abs() < 1e-14);
        assert_eq!(s.counter(), 1);
    }

    #[test]
    fn unit_frobenius_moments() {
        let (m, n) = (2, 2);
        let d = m * n;
        let draws = 1_000_000;
        let mut rng = stream(1).generator_at(0);
        let mut mean = vec![0.0; d];
        let mut second = vec![0.0; d * d];
        for _ in 0..draws {
            let u = sample_unit_frobenius(m, n, &mut rng);
            for i in 0..d {
                mean[i] += u[i];
                for j in 0..d {
                    second[i * d + j] += u[i] * u[j];
                }
            }
        }
        for i in 0..d {
            assert!((mean[i] / draws as f64).abs() < 4e-3);
            for j in 0..d {
                let want = if i == j { 1.0 / d as f64 } else { 0.0 };
                assert!((second[i * d + j] / draws as f64 - want).abs() < 1e-2);
            }
        }
    }

    #[test]
    fn ball_draws_stay_inside() {
        let mut rng = stream(2).generator_at(0);
        for _ in 0..1000 {
            assert!(sample_unit_ball(3, 2, &mut rng).norm() <= 1.0);
        }
    }

    #[test]
    fn constant_oracle_has_zero_mean() {
        let c = 5.0;
        let oracle = FnOracle::new((1, 2), move |_k: &Mat, _rng: &mut _| Ok(c));
        let (m_batch, r, trials) = (4, 0.5, 100_000);
        let req = ZoRequest::from_gain(Mat::zeros(1, 2), m_batch, r).unwrap();
        let mut s = stream(3);
        let mut acc = Mat::zeros(1, 2);
        for _ in 0..trials {
            acc += zo_gradient(&oracle, &req, &mut s).unwrap();
        }
        acc /= trials as f64;
        let tol = 4.0 * (c * 2.0 / r) / ((m_batch * trials) as f64).sqrt();
        assert!(acc.amax() < tol, "{acc} vs {tol}");
    }

    #[test]
    fn quadratic_oracle_gradient() {
        // Ball smoothing of ‖K‖² only adds a constant, so the target is 2K.
        let oracle = FnOracle::new((1, 2), |k: &Mat, _rng: &mut _| Ok(k.norm_squared()));
        let k0 = Mat::from_row_slice(1, 2, &[1.0, -0.5]);
        let (batch, r) = (200_000, 0.5);
        let req = ZoRequest::from_gain(k0.clone(), batch, r).unwrap();
        let g = zo_gradient(&oracle, &req, &mut stream(4)).unwrap();
        let truth = &k0 * 2.0;
        let worst = (k0.norm() + r).powi(2);
        let se = 2.0 / r * worst / (batch as f64).sqrt();
        for i in 0..2 {
            assert!((g[i] - truth[i]).abs() < 4.0 * se, "{g} vs {truth}");
        }
    }

    #[test]
    fn norm_bound_per_element() {
        let oracle = FnOracle::new((2, 2), |k: &Mat, rng: &mut rand_chacha::ChaCha8Rng| {
            Ok(1.0 + k.norm() + rng.random::<f64>())
        });
        let req = ZoRequest::from_gain(Mat::identity(2, 2), 500, 0.2).unwrap();
        let est = zo_estimate(&oracle, &req, &mut stream(6)).unwrap();
        let g_inf = est.element_costs.iter().cloned().fold(0.0, f64::max);
        assert!(est.max_element_norm <= 4.0 / 0.2 * g_inf * (1.0 + 1e-12));
    }

    #[test]
    fn divergence_names_the_element() {
        let oracle = FnOracle::new((1, 1), |k: &Mat, _rng: &mut _| {
            if k[0] > 0.0 {
                Err(Divergence {
                    step: 3,
                    partial_cost: 1.0,
                })
            } else {
                Ok(1.0)
            }
        });
        let req = ZoRequest::from_gain(Mat::zeros(1, 1), 16, 0.1).unwrap();
        match zo_gradient(&oracle, &req, &mut stream(7)) {
            Err(Error::GradientDiverged { element, .. }) => assert!(element < 16),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn smoothing_linear_function_is_exact() {
        let w = Mat::from_row_slice(1, 3, &[0.3, -1.0, 2.0]);
        let k = Mat::from_row_slice(1, 3, &[1.0, 2.0, 3.0]);
        let f = |kk: &Mat| Ok(w.dot(kk) + 4.0);
        let exact = f(&k).unwrap();
        for r in [0.01, 0.5, 3.0] {
            let smooth = smoothed_value(f, &k, r, 200_000, &mut stream(8)).unwrap();
            let sd = w.norm() * r / (200_000f64).sqrt();
            assert!((smooth - exact).abs() < 5.0 * sd + 1e-12, "r={r}");
        }
    }

    #[test]
    fn smoothed_cost_small_radius_limit() {
        let sys = SystemTuple::scalar(0.5, 1.0, 1.0, 1.0, 0.9).unwrap();
        let k = Mat::from_element(1, 1, 0.2);
        let exact = exact_cost_of(&sys, &k).unwrap();
        let sm = smoothed_cost(&sys, &k, 1e-4, 2000, &mut stream(9)).unwrap();
        assert!((sm - exact).abs() < 1e-6 * exact);
    }

    #[test]
    fn smoothed_cost_rejects_unstable_perturbations() {
        let sys = SystemTuple::scalar(0.5, 1.0, 1.0, 1.0, 0.9).unwrap();
        let k = Mat::from_element(1, 1, 0.2);
        let err = smoothed_cost(&sys, &k, 5.0, 200, &mut stream(10)).unwrap_err();
        assert!(err.is_instability());
    }
}
