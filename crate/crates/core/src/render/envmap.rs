//! Lat-long environment maps and their texel quadrature.
//!
//! Row `i` of an `H`-row map spans polar angles `[i, i + 1] * pi / H`
//! measured from world `+y` (up); column `j` of `W` spans azimuths
//! `[j, j + 1] * 2 pi / W - pi` around `+y`, with azimuth 0 facing the
//! camera on `+z`. Direction `(sin t sin p, cos t, sin t cos p)`.

use std::f64::consts::PI;

use super::pfm::Pfm;
use crate::coords::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EnvMap {
    pub width: usize,
    pub height: usize,
    /// Wavelengths of the layers; empty for a single monochrome layer.
    pub wavelengths: Vec<f64>,
    pub layers: Vec<Vec<f64>>,
}

/// One quadrature cell: direction, solid angle and the texel it reads.
#[derive(Clone, Copy, Debug)]
pub struct EnvCell {
    pub dir: Vec3,
    pub solid_angle: f64,
    pub texel: usize,
}

impl EnvMap {
    pub fn uniform(width: usize, height: usize, radiance: f64) -> Self {
        EnvMap { width, height, wavelengths: Vec::new(), layers: vec![vec![radiance; width * height]] }
    }

    pub fn monochrome(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::NonFinite("environment radiance must be finite and >= 0".into()));
        }
        Ok(EnvMap { width, height, wavelengths: Vec::new(), layers: vec![data] })
    }

    /// Channel mean of a PFM as monochrome radiance.
    pub fn from_pfm(img: &Pfm) -> Result<Self> {
        Self::monochrome(img.width, img.height, img.luminance())
    }

    /// Box-filters the map down so it is at most `max_w` x `max_h`.
    pub fn downsample(&self, max_w: usize, max_h: usize) -> EnvMap {
        let fx = self.width.div_ceil(max_w.max(1));
        let fy = self.height.div_ceil(max_h.max(1));
        if fx == 1 && fy == 1 {
            return self.clone();
        }
        let (w, h) = (self.width.div_ceil(fx), self.height.div_ceil(fy));
        let layers = self
            .layers
            .iter()
            .map(|src| {
                let mut out = vec![0.0; w * h];
                let mut count = vec![0usize; w * h];
                for i in 0..self.height {
                    for j in 0..self.width {
                        let o = (i / fy) * w + j / fx;
                        out[o] += src[i * self.width + j];
                        count[o] += 1;
                    }
                }
                out.iter_mut().zip(count).for_each(|(v, c)| *v /= c as f64);
                out
            })
            .collect();
        EnvMap { width: w, height: h, wavelengths: self.wavelengths.clone(), layers }
    }

    pub fn scaled(mut self, k: f64) -> Self {
        self.layers.iter_mut().flatten().for_each(|v| *v *= k);
        self
    }

    /// Radiance layer at `lambda`, linearly interpolated between layers and
    /// clamped at the ends.
    pub fn layer(&self, lambda: f64) -> Vec<f64> {
        if self.wavelengths.len() <= 1 {
            return self.layers[0].clone();
        }
        let w = &self.wavelengths;
        let k = w.partition_point(|&l| l <= lambda).clamp(1, w.len() - 1);
        let t = ((lambda - w[k - 1]) / (w[k] - w[k - 1])).clamp(0.0, 1.0);
        self.layers[k - 1].iter().zip(&self.layers[k]).map(|(a, b)| (1.0 - t) * a + t * b).collect()
    }

    /// Quadrature cells, `sub x sub` per texel, each with its exact solid
    /// angle.
    pub fn cells(&self, sub: usize) -> Vec<EnvCell> {
        let sub = sub.max(1);
        let (rows, cols) = (self.height * sub, self.width * sub);
        let dphi = 2.0 * PI / cols as f64;
        let mut cells = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            let (t0, t1) = (PI * i as f64 / rows as f64, PI * (i + 1) as f64 / rows as f64);
            let solid_angle = (t0.cos() - t1.cos()) * dphi;
            let theta = 0.5 * (t0 + t1);
            let (st, ct) = theta.sin_cos();
            for j in 0..cols {
                let phi = (j as f64 + 0.5) * dphi - PI;
                let (sp, cp) = phi.sin_cos();
                cells.push(EnvCell {
                    dir: Vec3::new(st * sp, ct, st * cp),
                    solid_angle,
                    texel: (i / sub) * self.width + j / sub,
                });
            }
        }
        cells
    }
}
