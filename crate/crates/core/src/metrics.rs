//! PSNR and SSIM between rendered images.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::render::SpectralImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Psnr {
    Db(f64),
    /// Zero mean squared error.
    Identical,
}

impl Psnr {
    /// Decibels, `+inf` for identical images.
    pub fn db(self) -> f64 {
        match self {
            Psnr::Db(v) => v,
            Psnr::Identical => f64::INFINITY,
        }
    }
}

pub fn mse(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(Error::Config("empty image".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64)
}

/// `10 log10(peak^2 / MSE)`.
pub fn psnr(a: &[f64], b: &[f64], peak: f64) -> Result<Psnr> {
    if !(peak > 0.0) {
        return Err(Error::Config(format!("psnr peak must be positive, got {peak}")));
    }
    let e = mse(a, b)?;
    Ok(if e == 0.0 { Psnr::Identical } else { Psnr::Db(10.0 * (peak * peak / e).log10()) })
}

fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW).map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp()).collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect()
}

/// Mean SSIM over all window positions that fit inside the image
/// (11x11 Gaussian window, sigma 1.5, dynamic range `peak`).
pub fn ssim(a: &[f64], b: &[f64], width: usize, height: usize, peak: f64) -> Result<f64> {
    if a.len() != width * height || b.len() != width * height {
        return Err(Error::LengthMismatch(a.len().max(b.len()), width * height));
    }
    if width < SSIM_WINDOW || height < SSIM_WINDOW {
        return Err(Error::Config(format!("ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {width}x{height}")));
    }
    if !(peak > 0.0) {
        return Err(Error::Config(format!("ssim dynamic range must be positive, got {peak}")));
    }
    let w = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let (nx, ny) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for y0 in 0..ny {
        for x0 in 0..nx {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                let row = (y0 + dy) * width + x0;
                for dx in 0..SSIM_WINDOW {
                    let g = w[dy * SSIM_WINDOW + dx];
                    let (x, z) = (a[row + dx], b[row + dx]);
                    ma += g * x;
                    mb += g * z;
                    saa += g * x * x;
                    sbb += g * z * z;
                    sab += g * x * z;
                }
            }
            let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
    }
    Ok(total / (nx * ny) as f64)
}

/// Per-wavelength comparison of a test render against a reference.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub wavelengths: Vec<f64>,
    /// `None` where the images are identical.
    pub psnr: Vec<Option<f64>>,
    pub ssim: Vec<f64>,
    /// `None` when any wavelength is identical.
    pub mean_psnr: Option<f64>,
    pub mean_ssim: f64,
}

impl MetricReport {
    /// The peak is the reference maximum at each wavelength (1 if the
    /// reference is black).
    pub fn compare(reference: &SpectralImage, test: &SpectralImage) -> Result<Self> {
        if reference.wavelengths != test.wavelengths || (reference.width, reference.height) != (test.width, test.height) {
            return Err(Error::Config("images differ in size or wavelengths".into()));
        }
        let (mut p, mut s) = (Vec::new(), Vec::new());
        for (a, b) in reference.planes.iter().zip(&test.planes) {
            let max = a.iter().cloned().fold(0.0, f64::max);
            let peak = if max > 0.0 { max } else { 1.0 };
            p.push(match psnr(a, b, peak)? {
                Psnr::Db(v) => Some(v),
                Psnr::Identical => None,
            });
            s.push(ssim(a, b, reference.width, reference.height, peak)?);
        }
        Ok(Self::from_values(reference.wavelengths.clone(), p, s))
    }

    pub fn from_values(wavelengths: Vec<f64>, psnr: Vec<Option<f64>>, ssim: Vec<f64>) -> Self {
        let n = psnr.len().max(1) as f64;
        let mean_psnr = psnr.iter().map(|v| v.ok_or(())).sum::<std::result::Result<f64, ()>>().ok().map(|s| s / n);
        let mean_ssim = ssim.iter().sum::<f64>() / ssim.len().max(1) as f64;
        MetricReport { wavelengths, psnr, ssim, mean_psnr, mean_ssim }
    }

    pub fn mean_psnr_db(&self) -> f64 {
        self.mean_psnr.unwrap_or(f64::INFINITY)
    }

    /// Plain-text table, one row per wavelength and a mean row.
    pub fn to_table(&self) -> String {
        let fmt = |p: Option<f64>| p.map_or("identical".to_string(), |v| format!("{v:.2}"));
        let mut out = format!("{:>10}  {:>10}  {:>7}\n", "lambda_nm", "psnr_db", "ssim");
        for ((l, p), s) in self.wavelengths.iter().zip(&self.psnr).zip(&self.ssim) {
            out += &format!("{:>10}  {:>10}  {:>7.4}\n", l, fmt(*p), s);
        }
        out += &format!("{:>10}  {:>10}  {:>7.4}\n", "mean", fmt(self.mean_psnr), self.mean_ssim);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(seed: u64) -> Vec<f64> {
        (0..256).map(|k| (((k as u64 * 2654435761 + seed * 97) % 1000) as f64) / 1000.0).collect()
    }

    #[test]
    fn psnr_values() {
        let a = vec![0.5; 100];
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), Psnr::Identical);
        let b: Vec<f64> = a.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&a, &b, 1.0).unwrap().db() - 20.0).abs() < 1e-9);
        assert!(psnr(&a, &b[..99], 1.0).is_err());
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_anticorrelation() {
        let a = pattern(1);
        assert!((ssim(&a, &a, 16, 16, 1.0).unwrap() - 1.0).abs() < 1e-12);
        let bin: Vec<f64> = (0..256).map(|k| ((k / 3 + k / 16) % 2) as f64).collect();
        let inv: Vec<f64> = bin.iter().map(|v| 1.0 - v).collect();
        assert!(ssim(&bin, &inv, 16, 16, 1.0).unwrap() < 0.0);
        assert!(ssim(&a[..100], &a[..100], 10, 10, 1.0).is_err());
    }

    #[test]
    fn symmetric() {
        let (a, b) = (pattern(1), pattern(2));
        assert_eq!(psnr(&a, &b, 1.0).unwrap(), psnr(&b, &a, 1.0).unwrap());
        assert!((ssim(&a, &b, 16, 16, 1.0).unwrap() - ssim(&b, &a, 16, 16, 1.0).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn report_means() {
        let r = MetricReport::from_values(vec![1.0, 2.0], vec![Some(30.0), Some(40.0)], vec![0.5, 1.0]);
        assert_eq!((r.mean_psnr, r.mean_ssim), (Some(35.0), 0.75));
        let r = MetricReport::from_values(vec![1.0, 2.0], vec![Some(30.0), None], vec![0.5, 1.0]);
        assert_eq!(r.mean_psnr, None);
        assert!(r.to_table().contains("identical"));
    }
}
