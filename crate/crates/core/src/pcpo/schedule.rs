//! Per-epoch hyperparameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Schedules derived from problem constants.
    Theory,
    /// Directly specified minibatch, rounds, step size and radii.
    #[default]
    Practical,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "theory" => Ok(Mode::Theory),
            "practical" => Ok(Mode::Practical),
            other => Err(Error::Config(format!("unknown mode {other:?}"))),
        }
    }
}

/// Practical-mode knobs. `M_l = M_1·4^{l-1}`, `R_l = R_1 + ⌈ρ_R·l⌉`, and the
/// smoothing radius decays as `M_l^{-1/4}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PracticalSchedule {
    pub minibatch: usize,
    pub rounds: usize,
    #[serde(default)]
    pub round_growth: f64,
    pub step_size: f64,
    pub radius: f64,
    /// Upper limit on every smoothing radius; absent or `null` means none.
    #[serde(default = "default_radius_cap", with = "crate::serde_ext::f64_or_null")]
    pub radius_cap: f64,
}

fn default_radius_cap() -> f64 {
    f64::INFINITY
}

impl Default for PracticalSchedule {
    fn default() -> Self {
        PracticalSchedule {
            minibatch: 100,
            rounds: 10,
            round_growth: 0.0,
            step_size: 0.01,
            radius: 0.1,
            radius_cap: f64::INFINITY,
        }
    }
}

impl PracticalSchedule {
    fn validate(&self) -> Result<()> {
        if self.minibatch == 0 || self.rounds == 0 {
            return Err(Error::Config("minibatch and rounds must be positive".into()));
        }
        if !(self.round_growth >= 0.0) || !self.round_growth.is_finite() {
            return Err(Error::Config("round growth must be a finite non-negative number".into()));
        }
        if !(self.step_size > 0.0) || !self.step_size.is_finite() {
            return Err(Error::Config("step size must be positive".into()));
        }
        if !(self.radius > 0.0) || !(self.radius_cap > 0.0) || !self.radius.is_finite() {
            return Err(Error::Config("radii must be positive".into()));
        }
        Ok(())
    }
}

/// Problem-level constants that the theory-mode schedule is built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConstants {
    /// PL constant.
    pub mu: f64,
    /// Local smoothness.
    pub phi: f64,
    /// Local Lipschitz constant.
    pub lambda: f64,
    /// Radius of the Lipschitz and smoothness neighbourhoods.
    pub rho: f64,
    /// Uniform bound on a single rollout cost.
    pub g_inf: f64,
    /// Sublevel size `Δ̃_0` of the restricted set.
    pub delta_tilde0: f64,
}

/// The full `c_{p,1..13}` ledger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    pub problem: ProblemConstants,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c4: f64,
    pub c5: f64,
    pub c6: f64,
    pub c7: f64,
    pub c8: f64,
    pub c9: f64,
    pub c10: f64,
    pub c11: f64,
    pub c12: f64,
    pub c13: f64,
}

impl TheoryConstants {
    /// Derives every constant for `n_agents` agents, policy dimension `dim`,
    /// per-agent budget `budget`, and the clustering parameters `Δ_0`, `δ`.
    pub fn derive(
        p: ProblemConstants,
        delta0: f64,
        delta: f64,
        dim: usize,
        n_agents: usize,
        budget: u64,
    ) -> Result<Self> {
        let fields = [p.mu, p.phi, p.lambda, p.rho, p.g_inf, p.delta_tilde0];
        if fields.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::Config("problem constants must be positive and finite".into()));
        }
        check_clustering(delta0, delta)?;
        let d = dim as f64;
        let n = n_agents as f64;
        let shape = p.phi.sqrt().max(1.0 / p.rho);

        let c8 = p.g_inf + p.lambda * p.rho / d + p.phi * p.rho * p.rho / d;
        let c9 = 12.0 * c8 / p.mu * shape * shape;
        let c10 = (delta0 * delta0)
            .max(256.0 * c9 * c9 * d * d)
            .max(c8 * c8 * d * d * delta0 * delta0)
            .max(36.0 * p.g_inf * p.g_inf);
        let c11 = delta0 * delta0 / (c10 * (8.0 * d * n / delta).ln());
        let c1 = (8.0 / p.mu)
            .min(1.0 / (4.0 * p.phi))
            .min(p.rho / (p.lambda + 2.0 * shape));
        let eta = c1;
        let c12 = 4.0 / (eta * p.mu)
            * ((c10 * n * p.delta_tilde0 * p.delta_tilde0 / (delta0 * delta0)).ln() + 4f64.ln());
        let log_t = (c11 * budget as f64).ln();
        if !(log_t > 0.0) {
            return Err(Error::Config(format!(
                "budget {budget} too small for the theory constants (c11·T = {:.3e} ≤ 1)",
                c11 * budget as f64
            )));
        }
        let c13 = 4.0 * c9.max(1.0) * (c12 * log_t).sqrt();
        Ok(TheoryConstants {
            problem: p,
            c1,
            c2: 4.0 / (eta * p.mu),
            c3: p.delta_tilde0 * 16f64.max(10.0 * c10),
            c4: c10,
            c5: c8 * d / p.phi,
            c6: p.rho,
            c7: d * c13,
            c8,
            c9,
            c10,
            c11,
            c12,
            c13,
        })
    }
}

fn check_clustering(delta0: f64, delta: f64) -> Result<()> {
    if !(delta0 > 0.0) || !delta0.is_finite() {
        return Err(Error::Config(format!("Δ_0 must be positive, got {delta0}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("δ must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// Everything `make_schedule` needs besides the epoch index.
#[derive(Debug, Clone)]
pub struct ScheduleConfig {
    pub mode: Mode,
    pub delta0: f64,
    pub delta: f64,
    pub practical: PracticalSchedule,
    pub theory: Option<TheoryConstants>,
    /// Policy dimension `D = m·n`.
    pub dim: usize,
    pub n_agents: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochSchedule {
    pub epoch: usize,
    /// Elimination threshold scale `Δ_l`.
    pub gap_scale: f64,
    /// Failure budget `δ_l`.
    pub confidence: f64,
    pub step_size: f64,
    pub rounds: usize,
    pub minibatch: usize,
    pub radius_tilde: f64,
    pub radius_local: f64,
    #[serde(with = "crate::serde_ext::f64_or_null")]
    pub radius_cap: f64,
}

impl EpochSchedule {
    /// Collaborative smoothing radius for a neighbourhood of `size` agents.
    pub fn radius_global(&self, size: usize) -> f64 {
        self.radius_cap
            .min(self.radius_tilde / (size.max(1) as f64).powf(0.25))
    }

    /// `2 R_l M_l + M_l`.
    pub fn rollouts_per_agent(&self) -> u64 {
        let (r, m) = (self.rounds as u64, self.minibatch as u64);
        2 * r * m + m
    }
}

pub fn make_schedule(
    epoch: usize,
    previous: Option<&EpochSchedule>,
    config: &ScheduleConfig,
) -> Result<EpochSchedule> {
    if epoch == 0 {
        return Err(Error::Config("epochs are numbered from 1".into()));
    }
    check_clustering(config.delta0, config.delta)?;
    let gap_scale = match previous {
        Some(p) if p.epoch + 1 == epoch => p.gap_scale / 2.0,
        _ => config.delta0 / 2f64.powi(epoch as i32),
    };
    let confidence = config.delta / (2.0 * (epoch * epoch) as f64);
    match config.mode {
        Mode::Practical => {
            let p = &config.practical;
            p.validate()?;
            let growth = 4usize
                .checked_pow(epoch as u32 - 1)
                .and_then(|g| g.checked_mul(p.minibatch))
                .ok_or_else(|| Error::Config(format!("minibatch overflows at epoch {epoch}")))?;
            let rounds = p.rounds + (p.round_growth * epoch as f64).ceil() as usize;
            let radius_tilde = p.radius * (p.minibatch as f64 / growth as f64).powf(0.25);
            Ok(EpochSchedule {
                epoch,
                gap_scale,
                confidence,
                step_size: p.step_size,
                rounds,
                minibatch: growth,
                radius_tilde,
                radius_local: p.radius_cap.min(radius_tilde),
                radius_cap: p.radius_cap,
            })
        }
        Mode::Theory => {
            let c = config
                .theory
                .as_ref()
                .ok_or_else(|| Error::Config("theory mode needs problem constants".into()))?;
            let n = config.n_agents as f64;
            let d = config.dim as f64;
            let rounds = (c.c2 * (c.c3 * n / (gap_scale * gap_scale)).ln()).ceil().max(1.0);
            let log_term = (8.0 * d * n * rounds / confidence).ln();
            let minibatch = (c.c4 / (gap_scale * gap_scale) * log_term).ceil().max(1.0);
            if !rounds.is_finite() || !minibatch.is_finite() || minibatch > 1e15 {
                return Err(Error::Config(format!(
                    "theory schedule is not representable at epoch {epoch} (R = {rounds:.3e}, M = {minibatch:.3e})"
                )));
            }
            let radius_tilde = (c.c5 / minibatch.sqrt() * log_term.sqrt()).sqrt();
            Ok(EpochSchedule {
                epoch,
                gap_scale,
                confidence,
                step_size: c.c1,
                rounds: rounds as usize,
                minibatch: minibatch as usize,
                radius_tilde,
                radius_local: c.c6.min(radius_tilde),
                radius_cap: c.c6,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn practical(delta0: f64, delta: f64) -> ScheduleConfig {
        ScheduleConfig {
            mode: Mode::Practical,
            delta0,
            delta,
            practical: PracticalSchedule {
                minibatch: 10,
                rounds: 3,
                round_growth: 0.5,
                step_size: 0.1,
                radius: 0.2,
                radius_cap: 1.0,
            },
            theory: None,
            dim: 1,
            n_agents: 4,
        }
    }

    fn problem() -> ProblemConstants {
        ProblemConstants {
            mu: 0.5,
            phi: 2.0,
            lambda: 3.0,
            rho: 0.5,
            g_inf: 10.0,
            delta_tilde0: 5.0,
        }
    }

    #[test]
    fn gap_scale_halves() {
        let cfg = practical(8.0, 0.1);
        let mut prev = None;
        let mut scales = Vec::new();
        for l in 1..=3 {
            let s = make_schedule(l, prev.as_ref(), &cfg).unwrap();
            scales.push(s.gap_scale);
            prev = Some(s);
        }
        assert_eq!(scales, vec![4.0, 2.0, 1.0]);
        assert_eq!(make_schedule(3, None, &cfg).unwrap().gap_scale, 1.0);
    }

    #[test]
    fn confidence_schedule() {
        let s = make_schedule(1, None, &practical(8.0, 0.1)).unwrap();
        assert!((s.confidence - 0.05).abs() < 1e-15);
        let s3 = make_schedule(3, None, &practical(8.0, 0.1)).unwrap();
        assert!((s3.confidence - 0.1 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn practical_growth_laws() {
        let cfg = practical(8.0, 0.1);
        let s: Vec<_> = (1..=4).map(|l| make_schedule(l, None, &cfg).unwrap()).collect();
        assert_eq!(
            s.iter().map(|e| e.minibatch).collect::<Vec<_>>(),
            vec![10, 40, 160, 640]
        );
        assert_eq!(s.iter().map(|e| e.rounds).collect::<Vec<_>>(), vec![4, 4, 5, 5]);
        for w in s.windows(2) {
            assert!((w[1].radius_tilde / w[0].radius_tilde - 2f64.powf(-0.5)).abs() < 1e-12);
        }
        assert_eq!(s[0].rollouts_per_agent(), 2 * 4 * 10 + 10);
    }

    #[test]
    fn global_radius_shrinks_with_neighbourhood() {
        let s = make_schedule(1, None, &practical(8.0, 0.1)).unwrap();
        assert_eq!(s.radius_global(1), s.radius_local);
        assert!((s.radius_global(16) - s.radius_tilde / 2.0).abs() < 1e-15);
    }

    #[test]
    fn config_errors() {
        assert!(make_schedule(1, None, &practical(0.0, 0.1)).is_err());
        assert!(make_schedule(1, None, &practical(1.0, 1.0)).is_err());
        assert!(make_schedule(1, None, &practical(1.0, 0.0)).is_err());
        assert!(make_schedule(0, None, &practical(1.0, 0.1)).is_err());
        let mut theory = practical(1.0, 0.1);
        theory.mode = Mode::Theory;
        assert!(make_schedule(1, None, &theory).is_err());
    }

    #[test]
    fn constants_ledger_consistency() {
        let p = problem();
        let c = TheoryConstants::derive(p, 4.0, 0.2, 2, 8, 1 << 40).unwrap();
        let shape = p.phi.sqrt().max(1.0 / p.rho);
        assert!((c.c9 - 12.0 * c.c8 / p.mu * shape * shape).abs() < 1e-9 * c.c9);
        assert!((c.c8 - (10.0 + 3.0 * 0.5 / 2.0 + 2.0 * 0.25 / 2.0)).abs() < 1e-12);
        assert_eq!(c.c4, c.c10);
        assert_eq!(c.c6, p.rho);
        assert!((c.c2 - 4.0 / (c.c1 * p.mu)).abs() < 1e-12 * c.c2);
        assert!((c.c7 - 2.0 * c.c13).abs() < 1e-12 * c.c7);
        for v in [c.c1, c.c2, c.c3, c.c4, c.c5, c.c6, c.c7, c.c8, c.c9, c.c10, c.c11, c.c12, c.c13] {
            assert!(v > 0.0 && v.is_finite());
        }
    }

    #[test]
    fn theory_schedule_shape() {
        let unit = ProblemConstants {
            mu: 1.0,
            phi: 1.0,
            lambda: 1.0,
            rho: 1.0,
            g_inf: 1.0,
            delta_tilde0: 1.0,
        };
        let c = TheoryConstants::derive(unit, 4.0, 0.2, 1, 4, 1 << 40).unwrap();
        let cfg = ScheduleConfig {
            mode: Mode::Theory,
            theory: Some(c),
            ..practical(4.0, 0.2)
        };
        let s: Vec<_> = (1..=3).map(|l| make_schedule(l, None, &cfg).unwrap()).collect();
        for w in s.windows(2) {
            assert!(w[1].minibatch > w[0].minibatch);
            assert!(w[1].rounds >= w[0].rounds);
        }
        assert_eq!(s[0].step_size, c.c1);
        assert!(s[0].radius_local <= c.c6);
        assert_eq!(s[0].radius_global(1), s[0].radius_local);
    }

    #[test]
    fn tiny_budget_is_rejected_in_theory_mode() {
        assert!(TheoryConstants::derive(problem(), 4.0, 0.2, 1, 4, 1).is_err());
    }
}
