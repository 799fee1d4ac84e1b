use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{node_angles, AngleDims, SpectralBrdfTable};
use crate::coords::WavelengthAxis;
use crate::error::{Error, Result};

/// Analytic spectral BRDF: a Gaussian diffuse spectrum plus a normalized
/// Blinn-Phong lobe in `theta_h` with a linear spectral tilt.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Diffuse albedo peak.
    pub diffuse_peak: f64,
    /// Centre of the diffuse spectrum, nm.
    pub diffuse_center: f64,
    /// Width of the diffuse spectrum, nm.
    pub diffuse_width: f64,
    pub specular_strength: f64,
    pub specular_exponent: f64,
    /// Relative change of the specular lobe per nm away from the axis centre.
    pub specular_tilt: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            diffuse_peak: 0.7,
            diffuse_center: 620.0,
            diffuse_width: 110.0,
            specular_strength: 0.15,
            specular_exponent: 12.0,
            specular_tilt: 0.0008,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=1.0).contains(&self.diffuse_peak)
            && self.diffuse_width > 0.0
            && self.specular_strength >= 0.0
            && self.specular_exponent >= 1.0
            && [self.diffuse_center, self.specular_tilt].iter().all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid synthetic material {self:?}")))
        }
    }

    pub fn diffuse_albedo(&self, lambda: f64) -> f64 {
        let x = (lambda - self.diffuse_center) / self.diffuse_width;
        self.diffuse_peak * (-0.5 * x * x).exp()
    }

    /// Reflectance in sr^-1; depends on `theta_h` and wavelength only.
    pub fn eval(&self, theta_h: f64, lambda: f64, axis: &WavelengthAxis) -> f64 {
        let mid = 0.5 * (axis.lambda_min + axis.lambda_max);
        let n = self.specular_exponent;
        let lobe = (n + 2.0) / (2.0 * PI) * theta_h.cos().max(0.0).powf(n);
        let spec = self.specular_strength * (1.0 + self.specular_tilt * (lambda - mid)) * lobe;
        (self.diffuse_albedo(lambda) / PI + spec).max(0.0)
    }
}

/// Tabulates `spec` on the node grid of `dims` x `axis`.
pub fn synth_spectral(name: &str, spec: &SyntheticSpec, axis: &WavelengthAxis, dims: AngleDims) -> Result<SpectralBrdfTable> {
    spec.validate()?;
    axis.validate()?;
    let block = dims[1] * dims[2];
    let mut data = Vec::with_capacity(axis.count * dims[0] * block);
    for l in 0..axis.count {
        let lambda = axis.node(l);
        for i in 0..dims[0] {
            let theta_h = node_angles(dims, i, 0, 0).theta_h;
            let v = spec.eval(theta_h, lambda, axis) as f32;
            data.extend(std::iter::repeat(v).take(block));
        }
    }
    SpectralBrdfTable::new(name, *axis, dims, data)
}
