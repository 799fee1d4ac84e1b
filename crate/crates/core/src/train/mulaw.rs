use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Logarithmic companding of high-dynamic-range reflectance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MuLaw {
    pub mu: f64,
}

impl Default for MuLaw {
    fn default() -> Self {
        MuLaw { mu: 255.0 }
    }
}

impl MuLaw {
    pub fn new(mu: f64) -> Result<Self> {
        if mu > 0.0 && mu.is_finite() {
            Ok(MuLaw { mu })
        } else {
            Err(Error::Config(format!("mu must be positive, got {mu}")))
        }
    }

    /// `log(1 + mu |r|) / log(1 + mu)`
    pub fn compress(&self, r: f64) -> f64 {
        (self.mu * r.abs()).ln_1p() / self.mu.ln_1p()
    }

    /// `((1 + mu)^r' - 1) / mu`
    pub fn expand(&self, r: f64) -> f64 {
        (r * self.mu.ln_1p()).exp_m1() / self.mu
    }
}

pub fn mulaw(r: f64, mu: f64) -> f64 {
    MuLaw { mu }.compress(r)
}

pub fn mulaw_inv(r: f64, mu: f64) -> f64 {
    MuLaw { mu }.expand(r)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_points() {
        assert_eq!(mulaw(0.0, 255.0), 0.0);
        assert_eq!(mulaw(1.0, 255.0), 1.0);
        assert_eq!(mulaw(-1.0, 255.0), 1.0);
    }

    #[test]
    fn round_trip() {
        for r in [1e-4, 0.37, 42.0] {
            assert!((mulaw_inv(mulaw(r, 255.0), 255.0) - r).abs() < 1e-12);
            assert!((mulaw_inv(mulaw(-r, 255.0), 255.0) - r).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_non_positive_mu() {
        assert!(MuLaw::new(0.0).is_err());
        assert!(MuLaw::new(-3.0).is_err());
    }
}
