use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::copydec::GoldAttribution;
use crate::error::{Error, Result};
use crate::numcore::DEFAULT_CLIP_NORM;
use crate::seq2seq::ModelDims;

/// Training hyper-parameters. Serialized as flat TOML key-value pairs; every
/// key is optional and falls back to the desk-scale default.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Last epoch trained at the full rate.
    pub lr_halve_after_epoch: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub clip_norm: f64,
    pub seed: u64,
    pub embed: usize,
    pub hidden: usize,
    pub attention: usize,
    pub layers: usize,
    /// Maximum encoder and logical-form length; longer training examples are skipped.
    pub max_len: usize,
    /// Overrides `ceil(Σ N_k / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub vocab_max_size: usize,
    /// Tokens rarer than this become UNK.
    pub vocab_min_count: usize,
    pub attribution: GoldAttribution,
    /// Keep the epoch with the best dev exact match instead of the last one.
    pub select_on_dev: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            lr: 0.5,
            lr_halve_after_epoch: 6,
            batch_size: 32,
            dropout: 0.2,
            clip_norm: DEFAULT_CLIP_NORM,
            seed: 1,
            embed: 64,
            hidden: 64,
            attention: 64,
            layers: 1,
            max_len: 100,
            steps_per_epoch: None,
            vocab_max_size: 50_000,
            vocab_min_count: 2,
            attribution: GoldAttribution::Marginal,
            select_on_dev: true,
        }
    }
}

impl TrainConfig {
    /// Full-size settings: batch 128, three layers of 512 units.
    pub fn paper_scale() -> Self {
        TrainConfig {
            batch_size: 128,
            embed: 512,
            hidden: 512,
            attention: 512,
            layers: 3,
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            embed: self.embed,
            hidden: self.hidden,
            attention: self.attention,
            layers: self.layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 || self.batch_size == 0 || self.max_len == 0 {
            return bad("epochs, batch_size and max_len must be positive".into());
        }
        if self.lr_halve_after_epoch == 0 || self.lr_halve_after_epoch > self.epochs {
            return bad(format!(
                "lr_halve_after_epoch must lie in 1..={}, got {}",
                self.epochs, self.lr_halve_after_epoch
            ));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be a non-negative number, got {}", self.lr));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if self.clip_norm.is_nan() || self.clip_norm <= 0.0 {
            return bad(format!("clip_norm must be positive, got {}", self.clip_norm));
        }
        if self.steps_per_epoch == Some(0) || self.vocab_max_size < 5 {
            return bad("steps_per_epoch must be positive and vocab_max_size at least 5".into());
        }
        self.dims().validate()
    }
}

/// `lr` through epoch `halve_after`, then halved once per further epoch.
pub fn lr_schedule(lr: f64, halve_after: usize, epoch: usize) -> f64 {
    debug_assert!(epoch >= 1, "epochs are 1-based");
    let extra = epoch.saturating_sub(halve_after);
    lr * 0.5f64.powi(extra as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_values() {
        assert_eq!(lr_schedule(0.5, 6, 6), 0.5);
        assert_eq!(lr_schedule(0.5, 6, 7), 0.25);
        assert_eq!(lr_schedule(0.5, 6, 10), 0.03125);
        assert_eq!(lr_schedule(0.0, 6, 1), 0.0);
        for e in 1..=30 {
            let closed = 0.5 * 2f64.powi(-((e as i32 - 6).max(0)));
            assert_eq!(lr_schedule(0.5, 6, e), closed);
        }
    }

    #[test]
    fn toml_round_trip_and_overrides() {
        let c = TrainConfig::from_toml("epochs = 3\nlr_halve_after_epoch = 2\nhidden = 16\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.hidden, 16);
        assert_eq!(c.batch_size, 32);
        assert_eq!(TrainConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn rejects_invalid() {
        assert!(TrainConfig::from_toml("epochs = 3").is_err());
        assert!(TrainConfig::from_toml("dropout = 1.0").is_err());
        assert!(TrainConfig::from_toml("colour = 1").is_err());
        assert!(TrainConfig::from_toml("hidden = 0").is_err());
    }
}
