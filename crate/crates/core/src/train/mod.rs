//! Losses, the Adam optimizer, the step learning-rate schedule and the epoch loop.

mod adam;
mod fit;
mod loss;

pub use adam::Adam;
pub use fit::{fit, train_step, Checkpoint, EpochRecord, FitOutcome};
pub use loss::{masked_mse, mse_loss, total_loss, LossReport};

use alloc::format;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields, default))]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    /// Last epoch trained at `lr0`.
    pub halve_after: usize,
    pub halve_every: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            epochs: 100,
            halve_after: 20,
            halve_every: 5,
            batch_size: 25,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.halve_every == 0 {
            return Err(Error::Config(format!(
                "epochs ({}), batch_size ({}) and halve_every ({}) must be at least 1",
                self.epochs, self.batch_size, self.halve_every
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} {b} outside [0, 1)")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!("adam_eps must be positive, got {}", self.adam_eps)));
        }
        Ok(())
    }
}

/// `lr0 · 0.5^max(0, floor((epoch − halve_after) / halve_every))`, epochs counted from 1.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    let halvings = epoch.saturating_sub(cfg.halve_after) / cfg.halve_every.max(1);
    (0..halvings).fold(cfg.lr0, |lr, _| lr * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_at(1, &cfg), 1e-3);
        assert_eq!(lr_at(20, &cfg), 1e-3);
        assert_eq!(lr_at(24, &cfg), 1e-3);
        assert_eq!(lr_at(25, &cfg), 5e-4);
        assert_eq!(lr_at(30, &cfg), 2.5e-4);
        assert_eq!(lr_at(100, &cfg), 1e-3 / 65536.0);
    }

    #[test]
    fn schedule_is_non_increasing() {
        let cfg = TrainConfig::default();
        for e in 1..300 {
            assert!(lr_at(e + 1, &cfg) <= lr_at(e, &cfg));
        }
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { lr0: 0.0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { epochs: 0, ..TrainConfig::default() }.validate().is_err());
        assert!(TrainConfig { beta2: 1.0, ..TrainConfig::default() }.validate().is_err());
    }
}
