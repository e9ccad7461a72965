use serde::{Deserialize, Serialize};

use crate::adversary::{DeceptionKind, LossWeights};
use crate::error::{Error, Result};
use crate::modem::Scheme;

pub const DEFAULT_SNR_RANGE_DB: [f64; 2] = [0.0, 20.0];

/// Hyperparameters for one training run. For the classifier, `frames_per_epoch`
/// counts frames per class and `scheme`/`weights` are unused.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub scheme: Scheme,
    pub frames_per_epoch: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub snr_range_db: [f64; 2],
    pub weights: LossWeights,
    pub seed: u64,
    /// Whether the eavesdropper branch adds its own AWGN draw while training the AMN.
    pub eavesdropper_noise: bool,
}

impl TrainingConfig {
    pub fn amc_default(seed: u64) -> Self {
        Self {
            scheme: Scheme::Qpsk,
            frames_per_epoch: 2000,
            epochs: 50,
            batch_size: 32,
            learning_rate: 1e-3,
            snr_range_db: DEFAULT_SNR_RANGE_DB,
            weights: LossWeights::new(0.5, 0.2, 0.3, DeceptionKind::HuberFft, 1.0)
                .expect("valid default weights"),
            seed,
            eavesdropper_noise: true,
        }
    }

    pub fn amn_default(scheme: Scheme, weights: LossWeights, seed: u64) -> Self {
        Self {
            scheme,
            epochs: 30,
            weights,
            ..Self::amc_default(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("frames_per_epoch", self.frames_per_epoch),
            ("epochs", self.epochs),
            ("batch_size", self.batch_size),
        ] {
            if v == 0 {
                return Err(Error::invalid(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::invalid(format!("invalid snr_range_db [{lo}, {hi}]")));
        }
        self.weights.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = TrainingConfig::amc_default(1);
        c.validate().unwrap();
        assert_eq!((c.frames_per_epoch, c.epochs, c.batch_size), (2000, 50, 32));
        let w = LossWeights::new(1.0, 0.0, 0.0, DeceptionKind::Power, 1.0).unwrap();
        let a = TrainingConfig::amn_default(Scheme::Qpsk, w, 1);
        assert_eq!(a.epochs, 30);
        a.validate().unwrap();
    }

    #[test]
    fn rejects_bad_values() {
        let base = TrainingConfig::amc_default(1);
        let mut c = base.clone();
        c.epochs = 0;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.learning_rate = f64::NAN;
        assert!(c.validate().is_err());
        let mut c = base.clone();
        c.snr_range_db = [20.0, 0.0];
        assert!(c.validate().is_err());
        let mut c = base;
        c.weights.gamma = 0.2;
        assert!(c.validate().is_err());
    }
}
