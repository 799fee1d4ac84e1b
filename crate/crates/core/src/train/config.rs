use serde::{Deserialize, Serialize};

use super::adam::AdamParams;
use crate::brdf::{AngleDims, MERL_DIMS};
use crate::error::{Error, Result};
use crate::fusion::FusionMode;

/// Training hyperparameters. Every field has a default, so a JSON config
/// only needs the keys it changes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs between learning-rate halvings.
    pub halve_every: usize,
    /// Weight of the total-variation term.
    pub tv_weight: f64,
    pub fusion: FusionMode,
    pub seed: u64,
    /// Spectral samples drawn per material (capped at the table size).
    pub samples_per_material: usize,
    /// RGB samples drawn when an auxiliary RGB table is given; defaults to
    /// `samples_per_material`.
    pub rgb_samples: Option<usize>,
    pub channels: usize,
    pub plane_dims: AngleDims,
    pub mu: f64,
    /// Stop after this many spectral batches, whatever the epoch count.
    pub max_steps: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 65_536,
            epochs: 20,
            halve_every: 4,
            tv_weight: 2.0,
            fusion: FusionMode::Aff,
            seed: 0,
            samples_per_material: 5_120_000,
            rgb_samples: None,
            channels: 64,
            plane_dims: MERL_DIMS,
            mu: 255.0,
            max_steps: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.lr, self.beta1, self.beta2, self.eps, self.mu].iter().all(|v| v.is_finite() && *v >= 0.0)
            && self.beta1 < 1.0
            && self.beta2 < 1.0
            && self.eps > 0.0
            && self.mu > 0.0;
        if !positive {
            return Err(Error::Config("lr, betas, eps and mu must be finite, betas in [0, 1), eps and mu > 0".into()));
        }
        if self.batch_size == 0 || self.halve_every == 0 || self.channels == 0 {
            return Err(Error::Config("batch_size, halve_every and channels must be positive".into()));
        }
        if !(self.tv_weight.is_finite() && self.tv_weight >= 0.0) {
            return Err(Error::Config(format!("tv_weight must be >= 0, got {}", self.tv_weight)));
        }
        if self.plane_dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("plane_dims must all be >= 2, got {:?}", self.plane_dims)));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamParams {
        AdamParams { beta1: self.beta1, beta2: self.beta2, eps: self.eps }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: TrainConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_partial_json() {
        let d = TrainConfig::default();
        assert_eq!((d.lr, d.batch_size, d.epochs, d.halve_every, d.tv_weight), (1e-4, 65_536, 20, 4, 2.0));
        let c = TrainConfig::from_json(r#"{"lr": 0.01, "fusion": "hadamard"}"#).unwrap();
        assert_eq!(c.lr, 0.01);
        assert_eq!(c.fusion, FusionMode::Hadamard);
        assert_eq!(c.batch_size, 65_536);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(TrainConfig::from_json(r#"{"learning_rate": 1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"tv_weight": -1}"#).is_err());
        assert!(TrainConfig::from_json(r#"{"batch_size": 0}"#).is_err());
    }
}
