//! Training configuration and learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentFlags {
    pub flip: bool,
    pub scale: bool,
    pub rotate: bool,
    pub elastic: bool,
}

impl Default for AugmentFlags {
    fn default() -> Self {
        Self { flip: true, scale: true, rotate: true, elastic: true }
    }
}

impl AugmentFlags {
    pub fn none() -> Self {
        Self { flip: false, scale: false, rotate: false, elastic: false }
    }

    pub fn any(&self) -> bool {
        self.flip || self.scale || self.rotate || self.elastic
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Epochs at the initial learning rate.
    pub warm_epochs: usize,
    /// Epochs over which the rate then decays linearly to zero.
    pub decay_epochs: usize,
    pub batch_size: usize,
    /// Weight of the main-output loss against the deep-supervision loss.
    pub mu: f64,
    pub folds: usize,
    /// Stratify folds by the highest Gleason group of each patient.
    pub stratify_folds: bool,
    pub early_stop_patience: usize,
    /// Hard cap on epochs; defaults to warm + decay.
    pub max_epochs: Option<usize>,
    pub augment: AugmentFlags,
    /// Background slices drawn per foreground slice each epoch.
    pub background_ratio: f64,
    pub dice_eps: f64,
    /// Weight of the FPSnet detection losses relative to its Dice loss.
    pub detection_weight: f64,
    /// Stop as soon as the epoch's mean training loss drops below this.
    pub target_train_loss: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            warm_epochs: 20,
            decay_epochs: 100,
            batch_size: 3,
            mu: 0.75,
            folds: 5,
            stratify_folds: false,
            early_stop_patience: 20,
            max_epochs: None,
            augment: AugmentFlags::default(),
            background_ratio: 1.0,
            dice_eps: crate::losses::DICE_EPS,
            detection_weight: 1.0,
            target_train_loss: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if !(self.mu > 0.0 && self.mu <= 1.0) {
            return bad("mu must lie in (0, 1]");
        }
        if self.folds < 2 {
            return bad("folds must be at least 2");
        }
        if self.batch_size == 0 || self.early_stop_patience == 0 {
            return bad("batch_size and early_stop_patience must be positive");
        }
        if self.warm_epochs + self.decay_epochs == 0 && self.max_epochs.is_none() {
            return bad("no epochs to train");
        }
        if self.max_epochs == Some(0) {
            return bad("max_epochs must be positive");
        }
        if !(self.background_ratio.is_finite() && self.background_ratio >= 0.0) {
            return bad("background_ratio must be non-negative");
        }
        if !(self.dice_eps.is_finite() && self.dice_eps >= 0.0) || !(self.detection_weight >= 0.0) {
            return bad("dice_eps and detection_weight must be non-negative");
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.max_epochs.unwrap_or(self.warm_epochs + self.decay_epochs)
    }

    /// Constant for `warm_epochs`, then linear decay reaching zero at
    /// `warm_epochs + decay_epochs`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warm_epochs {
            return self.lr;
        }
        if self.decay_epochs == 0 {
            return 0.0;
        }
        let t = (epoch - self.warm_epochs) as f64 / self.decay_epochs as f64;
        self.lr * (1.0 - t).max(0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_values() {
        let c = TrainConfig::default();
        for e in 0..20 {
            assert_eq!(c.lr_at(e), 1e-4);
        }
        assert_eq!(c.lr_at(20), 1e-4);
        assert!((c.lr_at(70) - 5e-5).abs() < 1e-18);
        assert_eq!(c.lr_at(120), 0.0);
        assert_eq!(c.lr_at(500), 0.0);
        assert_eq!(c.total_epochs(), 120);
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig { mu: 0.0, ..Default::default() };
        assert!(c.validate().is_err());
        c.mu = 1.0;
        assert!(c.validate().is_ok());
        c.folds = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip_with_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.001}"#).unwrap();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.batch_size, 3);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    proptest! {
        #[test]
        fn schedule_non_increasing(warm in 0usize..50, decay in 1usize..200, e in 0usize..400) {
            let c = TrainConfig { warm_epochs: warm, decay_epochs: decay, ..Default::default() };
            if e >= warm {
                prop_assert!(c.lr_at(e + 1) <= c.lr_at(e));
            }
            prop_assert_eq!(c.lr_at(warm + decay), 0.0);
            prop_assert!(c.lr_at(e) >= 0.0 && c.lr_at(e) <= c.lr);
        }
    }
}
