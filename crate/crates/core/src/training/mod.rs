//! Adversarial training of the focus-map generator against the critic.
//!
//! Critic objective: `adv_d + λ_gp·gp` with `adv_d = mean D(fake) − mean D(real)`
//! and `gp = mean (‖∇_F̃ D(F̃)‖ − 1)²` on per-sample interpolates
//! `F̃ = ε·F + (1−ε)·F̂`. Generator objective: `−mean D(fake) + λ_rec·mean|F − F̂|`.

mod adam;
mod losses;
mod trainer;

pub use adam::Adam;
pub use losses::{critic_loss, generator_loss, CriticTerms, GeneratorTerms, GP_NORM_EPS};
pub use trainer::{mean_final_iou, train, Batch, LogRow, TrainOutcome, TrainRun};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reconstruction term between the real and generated maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconstructionLoss {
    #[default]
    L1,
    /// Binary cross entropy with the real map as target.
    Bce,
}

/// Adversarial objective family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialLoss {
    #[default]
    Wasserstein,
    /// Least-squares objective with targets 1 (real) and 0 (fake).
    LeastSquares,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_gp: f64,
    pub lambda_rec: f64,
    pub lr_g: f64,
    pub lr_d: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub critic_steps_per_gen: usize,
    pub batch_size: usize,
    /// Number of generator updates.
    pub total_steps: usize,
    /// Fraction of `total_steps` after which learning rates decay linearly to 0.
    pub decay_start_fraction: f64,
    pub seed: u64,
    pub reconstruction: ReconstructionLoss,
    pub adversarial: AdversarialLoss,
    /// Write a checkpoint every this many generator steps (0: only at the end).
    pub checkpoint_interval: usize,
    /// Stop once the mean final-map IoU on the training set reaches this value.
    pub target_iou: Option<f64>,
    /// How often (in generator steps) the IoU target is checked.
    pub iou_check_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_gp: 10.0,
            lambda_rec: 10.0,
            lr_g: 1e-4,
            lr_d: 1e-4,
            adam_beta1: 0.5,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            critic_steps_per_gen: 5,
            batch_size: 8,
            total_steps: 100_000,
            decay_start_fraction: 0.5,
            seed: 0,
            reconstruction: ReconstructionLoss::L1,
            adversarial: AdversarialLoss::Wasserstein,
            checkpoint_interval: 5000,
            target_iou: None,
            iou_check_interval: 50,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.lambda_gp)
            || !nonneg(self.lambda_rec)
            || !nonneg(self.lr_g)
            || !nonneg(self.lr_d)
        {
            return Err(Error::invalid(
                "loss weights and learning rates must be finite and non-negative",
            ));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(0.0..=1.0).contains(&self.decay_start_fraction) {
            return Err(Error::invalid("decay_start_fraction must lie in [0, 1]"));
        }
        if self.iou_check_interval == 0 {
            return Err(Error::invalid("iou_check_interval must be positive"));
        }
        Ok(())
    }

    /// Learning-rate multiplier at generator step `step`: 1 until the decay
    /// onset, then linear down to exactly 0 at `total_steps`.
    pub fn lr_factor(&self, step: usize) -> f64 {
        let total = self.total_steps;
        let onset = (self.decay_start_fraction * total as f64).floor() as usize;
        if step >= total {
            0.0
        } else if step < onset {
            1.0
        } else {
            (total - step) as f64 / (total - onset) as f64
        }
    }
}

/// Scalar loss values of one critic step and one generator step.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub adv_d: f64,
    pub adv_g: f64,
    pub gp: f64,
    pub rec: f64,
    pub total_d: f64,
    pub total_g: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_follow_reference_hyperparameters() {
        let c = TrainConfig::default();
        assert_eq!((c.lambda_gp, c.lambda_rec), (10.0, 10.0));
        assert_eq!((c.lr_g, c.lr_d), (1e-4, 1e-4));
        assert_eq!((c.adam_beta1, c.adam_beta2), (0.5, 0.999));
        assert_eq!(c.critic_steps_per_gen, 5);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_round_trips_through_json() {
        let c = TrainConfig {
            reconstruction: ReconstructionLoss::Bce,
            target_iou: Some(0.9),
            ..Default::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<TrainConfig>(&s).unwrap(), c);
        let partial: TrainConfig = serde_json::from_str(r#"{"total_steps": 3}"#).unwrap();
        assert_eq!(partial.total_steps, 3);
        assert_eq!(partial.lambda_gp, 10.0);
    }

    proptest! {
        #[test]
        fn lr_schedule_is_non_increasing_and_ends_at_zero(total in 0usize..500, frac in 0.0f64..=1.0) {
            let c = TrainConfig { total_steps: total, decay_start_fraction: frac, ..Default::default() };
            let mut prev = f64::INFINITY;
            for s in 0..=total {
                let f = c.lr_factor(s);
                prop_assert!(f <= prev && (0.0..=1.0).contains(&f));
                prev = f;
            }
            prop_assert_eq!(c.lr_factor(total), 0.0);
        }
    }
}
