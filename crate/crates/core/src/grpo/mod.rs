//! Online policy optimization: group-relative advantage estimation, the
//! clipped importance-ratio surrogate with KL penalty, inner-epoch updates
//! over stored trajectories, and the rollout -> advantage -> update loop.
//!
//! Per (sample, timestep) pair the minimized loss is
//!
//! ```text
//! max(-A * rho, -A * clip(rho, 1 - eps, 1 + eps)) + beta * ((rho - 1) - ln rho)
//! ```
//!
//! with `rho = exp(logp_new - logp_old)` recomputed against the rollout
//! snapshot each inner epoch. Advantages are z-scored per prompt group and
//! broadcast to every trained timestep of their trajectory.

mod checkpoint;
mod train;

pub use checkpoint::{fnv1a64, load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use train::{
    batch_gradient, batch_loss, trained_timesteps, train_run, train_step, BatchStats,
    StepMetrics, TrainOptions, TrainOutcome, TrainSetup, TrainStepStats,
};

use serde::{Deserialize, Serialize};

use crate::diffuser::Trajectory;
use crate::{Error, Result};

/// Training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Generations per prompt (K).
    pub group_size: usize,
    /// Importance-ratio clip range (epsilon).
    pub clip_range: f64,
    /// Stability constant added to the group standard deviation.
    pub delta: f64,
    /// KL penalty coefficient (beta).
    pub kl_coef: f64,
    /// Inner optimization epochs per rollout batch (M).
    pub inner_epochs: usize,
    /// Symmetric advantage clip bound.
    pub adv_clip: f64,
    /// Maximum global gradient norm.
    pub grad_clip: f64,
    /// Fraction of (late) denoising timesteps that receive gradient.
    pub timestep_fraction: f64,
    /// Adam learning rate.
    pub lr: f64,
    /// Hard abort threshold on the mean approximate KL.
    pub kl_abort: f64,
    /// Draw the shared initial noise per prompt group instead of per batch.
    pub shared_noise_per_group: bool,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group_size: 16,
            clip_range: 1e-4,
            delta: 1e-4,
            kl_coef: 0.5,
            inner_epochs: 3,
            adv_clip: 5.0,
            grad_clip: 1.0,
            timestep_fraction: 0.8,
            lr: 1e-5,
            kl_abort: 1.0,
            shared_noise_per_group: false,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size < 2 {
            return Err(Error::Config("group_size must be >= 2".into()));
        }
        if !(self.clip_range > 0.0) {
            return Err(Error::Config("clip_range must be > 0".into()));
        }
        if !(self.delta > 0.0) {
            return Err(Error::Config("delta must be > 0".into()));
        }
        if self.kl_coef < 0.0 {
            return Err(Error::Config("kl_coef must be >= 0".into()));
        }
        if self.inner_epochs < 1 {
            return Err(Error::Config("inner_epochs must be >= 1".into()));
        }
        if !(self.adv_clip > 0.0) {
            return Err(Error::Config("adv_clip must be > 0".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config("grad_clip must be > 0".into()));
        }
        if !(self.timestep_fraction > 0.0 && self.timestep_fraction <= 1.0) {
            return Err(Error::Config("timestep_fraction must be in (0, 1]".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config("lr must be > 0".into()));
        }
        if !(self.kl_abort > 0.0) {
            return Err(Error::Config("kl_abort must be > 0".into()));
        }
        Ok(())
    }
}

/// Group z-score of rewards with population standard deviation, clipped to
/// `[-adv_clip, +adv_clip]`. A zero-variance group (all rewards equal)
/// yields all-zero advantages.
pub fn group_advantages(rewards: &[f64], delta: f64, adv_clip: f64) -> Vec<f64> {
    // An exactly constant group short-circuits to zero before any rounding
    // from the mean can leak into the numerator.
    if rewards.windows(2).all(|w| w[0] == w[1]) {
        return vec![0.0; rewards.len()];
    }
    let k = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / k;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / k;
    let denom = var.sqrt() + delta;
    if denom == 0.0 {
        return vec![0.0; rewards.len()];
    }
    rewards
        .iter()
        .map(|r| ((r - mean) / denom).clamp(-adv_clip, adv_clip))
        .collect()
}

fn finite_ratio(new_logp: f64, old_logp: f64, t: usize) -> Result<f64> {
    let rho = (new_logp - old_logp).exp();
    if !rho.is_finite() {
        return Err(Error::DivergedPolicy { sample: 0, t });
    }
    Ok(rho)
}

/// Clipped surrogate over per-timestep log-prob pairs: the mean of
/// `max(-A rho, -A clip(rho, 1-eps, 1+eps))`, suitable for minimization.
pub fn surrogate_loss(
    new_logps: &[f64],
    old_logps: &[f64],
    advantage: f64,
    clip_range: f64,
) -> Result<f64> {
    debug_assert_eq!(new_logps.len(), old_logps.len());
    let mut sum = 0.0;
    for (t, (&n, &o)) in new_logps.iter().zip(old_logps).enumerate() {
        let rho = finite_ratio(n, o, t)?;
        let unclipped = -advantage * rho;
        let clipped = -advantage * rho.clamp(1.0 - clip_range, 1.0 + clip_range);
        sum += unclipped.max(clipped);
    }
    Ok(sum / new_logps.len() as f64)
}

/// Nonnegative approximate KL: the mean of `(rho - 1) - ln rho`, zero
/// exactly when every ratio is 1.
pub fn kl_penalty(new_logps: &[f64], old_logps: &[f64]) -> f64 {
    debug_assert_eq!(new_logps.len(), old_logps.len());
    let sum: f64 = new_logps
        .iter()
        .zip(old_logps)
        .map(|(&n, &o)| {
            let r = n - o;
            r.exp_m1() - r
        })
        .sum();
    sum / new_logps.len() as f64
}

/// K trajectories for one prompt with their rewards and group-normalized
/// advantages.
#[derive(Debug, Clone)]
pub struct RolloutGroup {
    pub prompt_id: usize,
    pub trajectories: Vec<Trajectory>,
    pub rewards: Vec<f64>,
    pub advantages: Vec<f64>,
}

impl RolloutGroup {
    pub fn from_rewards(
        prompt_id: usize,
        trajectories: Vec<Trajectory>,
        rewards: Vec<f64>,
        delta: f64,
        adv_clip: f64,
    ) -> Result<Self> {
        if trajectories.len() != rewards.len() {
            return Err(Error::DimensionMismatch {
                context: "RolloutGroup rewards",
                expected: trajectories.len(),
                got: rewards.len(),
            });
        }
        if trajectories.len() < 2 {
            return Err(Error::Config(
                "group statistics need at least 2 trajectories".into(),
            ));
        }
        let advantages = group_advantages(&rewards, delta, adv_clip);
        Ok(Self {
            prompt_id,
            trajectories,
            rewards,
            advantages,
        })
    }

    pub fn mean_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn equal_rewards_give_zero_advantages() {
        let adv = group_advantages(&[0.7; 8], 1e-4, 5.0);
        assert!(adv.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn advantages_match_hand_zscore() {
        // rewards (1,2,3,4), delta = 0: population sigma = sqrt(1.25).
        let adv = group_advantages(&[1.0, 2.0, 3.0, 4.0], 0.0, 5.0);
        let sigma = 1.25f64.sqrt();
        let want = [-1.5 / sigma, -0.5 / sigma, 0.5 / sigma, 1.5 / sigma];
        for (a, w) in adv.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
        // Spec's four-decimal reference values.
        assert!((adv[0] + 1.3416).abs() < 1e-4);
        assert!((adv[1] + 0.4472).abs() < 1e-4);
        assert!((adv[2] - 0.4472).abs() < 1e-4);
        assert!((adv[3] - 1.3416).abs() < 1e-4);
    }

    #[test]
    fn delta_dominates_degenerate_spread() {
        // rewards (0, 1e-9), delta = 1e-4: magnitudes ~5e-6, far below clip.
        let adv = group_advantages(&[0.0, 1e-9], 1e-4, 5.0);
        for a in &adv {
            assert!(a.abs() > 1e-6 && a.abs() < 1e-5, "{a}");
        }
        assert!((adv[0] + adv[1]).abs() < 1e-18);
    }

    #[test]
    fn surrogate_is_negative_advantage_at_unit_ratio() {
        // Single timestep: exact. Several timesteps: the mean of identical
        // -A terms re-rounds, so compare within 1e-12.
        assert_eq!(surrogate_loss(&[-1.3], &[-1.3], 0.7, 1e-4).unwrap(), -0.7);
        let lp = [-1.3, -0.2, -4.0];
        for adv in [0.7, -0.4, 0.0] {
            let loss = surrogate_loss(&lp, &lp, adv, 1e-4).unwrap();
            assert!((loss - (-adv)).abs() < 1e-12);
        }
    }

    #[test]
    fn clip_binds_on_both_sides() {
        // rho = 1.5, eps = 1e-4, A = 1: loss = max(-1.5, -1.0001) = -1.0001.
        let loss = surrogate_loss(&[1.5f64.ln()], &[0.0], 1.0, 1e-4).unwrap();
        assert!((loss - (-1.0001)).abs() < 1e-12);
        // rho = 0.5, eps = 1e-4, A = -1: loss = max(0.5, 0.9999) = 0.9999.
        let loss = surrogate_loss(&[0.5f64.ln()], &[0.0], -1.0, 1e-4).unwrap();
        assert!((loss - 0.9999).abs() < 1e-12);
    }

    #[test]
    fn surrogate_rejects_nonfinite_ratio() {
        assert!(matches!(
            surrogate_loss(&[800.0], &[0.0], 1.0, 1e-4),
            Err(Error::DivergedPolicy { .. })
        ));
    }

    #[test]
    fn kl_hand_values() {
        assert_eq!(kl_penalty(&[-3.0], &[-3.0]), 0.0);
        // rho = 2: 1 - ln 2.
        let kl = kl_penalty(&[2.0f64.ln()], &[0.0]);
        assert!((kl - (1.0 - 2.0f64.ln())).abs() < 1e-12);
        assert!((kl - 0.306_853).abs() < 1e-6);
        // rho = 0.5: -0.5 + ln 2.
        let kl = kl_penalty(&[0.5f64.ln()], &[0.0]);
        assert!((kl - (2.0f64.ln() - 0.5)).abs() < 1e-12);
        assert!((kl - 0.193_147).abs() < 1e-6);
    }

    #[test]
    fn config_validation() {
        let cfg = GrpoConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.group_size, 16);
        assert_eq!(cfg.clip_range, 1e-4);
        assert_eq!(cfg.kl_coef, 0.5);
        assert_eq!(cfg.inner_epochs, 3);
        assert_eq!(cfg.adv_clip, 5.0);
        assert_eq!(cfg.grad_clip, 1.0);
        assert_eq!(cfg.timestep_fraction, 0.8);
        assert_eq!(cfg.lr, 1e-5);

        for bad in [
            GrpoConfig {
                group_size: 1,
                ..cfg
            },
            GrpoConfig {
                clip_range: 0.0,
                ..cfg
            },
            GrpoConfig { delta: 0.0, ..cfg },
            GrpoConfig {
                inner_epochs: 0,
                ..cfg
            },
            GrpoConfig {
                timestep_fraction: 0.0,
                ..cfg
            },
            GrpoConfig { lr: 0.0, ..cfg },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    proptest! {
        /// Mean 0 (pre-clip regime), stdev <= 1, and the clip bound.
        #[test]
        fn prop_advantage_zscore(
            rewards in proptest::collection::vec(-10.0f64..10.0, 2..32),
            delta in 1e-6f64..1e-2,
        ) {
            let adv = group_advantages(&rewards, delta, 5.0);
            let k = adv.len() as f64;
            let mean = adv.iter().sum::<f64>() / k;
            prop_assert!(mean.abs() < 1e-9);
            let std = (adv.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / k).sqrt();
            prop_assert!(std <= 1.0 + 1e-9);
            prop_assert!(adv.iter().all(|a| a.abs() <= 5.0));
        }

        /// Adding a constant to every reward leaves advantages unchanged.
        #[test]
        fn prop_reward_shift_invariance(
            rewards in proptest::collection::vec(-5.0f64..5.0, 2..16),
            shift in -100.0f64..100.0,
        ) {
            let base = group_advantages(&rewards, 1e-4, 5.0);
            let shifted: Vec<f64> = rewards.iter().map(|r| r + shift).collect();
            let moved = group_advantages(&shifted, 1e-4, 5.0);
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        /// With delta = 0, positive rescaling leaves advantages unchanged.
        #[test]
        fn prop_reward_scale_invariance_at_zero_delta(
            rewards in proptest::collection::vec(-5.0f64..5.0, 2..16),
            scale in 0.01f64..100.0,
        ) {
            let spread = rewards.iter().cloned().fold(f64::MIN, f64::max)
                - rewards.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 1e-6);
            let base = group_advantages(&rewards, 0.0, 5.0);
            let scaled: Vec<f64> = rewards.iter().map(|r| r * scale).collect();
            let moved = group_advantages(&scaled, 0.0, 5.0);
            for (a, b) in base.iter().zip(&moved) {
                prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}");
            }
        }

        /// KL estimator is nonnegative and zero only at rho = 1.
        #[test]
        fn prop_kl_nonnegative(r in -4.6f64..4.6) {
            let kl = kl_penalty(&[r], &[0.0]);
            prop_assert!(kl >= 0.0);
            if r.abs() > 1e-6 {
                prop_assert!(kl > 0.0);
            }
        }

        /// Whenever moving rho further would improve the objective, the
        /// clipped branch caps it: elementwise loss >= -A * clip(rho).
        #[test]
        fn prop_clip_activity(
            log_rho in -2.0f64..2.0,
            adv in -3.0f64..3.0,
            eps in 1e-4f64..0.3,
        ) {
            let loss = surrogate_loss(&[log_rho], &[0.0], adv, eps).unwrap();
            let rho = log_rho.exp();
            let clipped = -adv * rho.clamp(1.0 - eps, 1.0 + eps);
            prop_assert!(loss >= clipped - 1e-15);
        }
    }
}
