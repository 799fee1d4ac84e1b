use std::path::Path;

use super::pfm::{write_pfm, Pfm};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Linear radiance per wavelength, rows top to bottom.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralImage {
    pub width: usize,
    pub height: usize,
    pub wavelengths: Vec<f64>,
    pub planes: Vec<Vec<f64>>,
    /// Pixels covered by geometry.
    pub mask: Vec<bool>,
}

impl SpectralImage {
    pub fn plane(&self, lambda: f64) -> Option<&[f64]> {
        self.wavelengths.iter().position(|&l| l == lambda).map(|k| self.planes[k].as_slice())
    }

    pub fn to_pfm(&self, k: usize) -> Result<Pfm> {
        Pfm::gray(self.width, self.height, self.planes[k].iter().map(|&v| v as f32).collect())
    }

    /// Writes `<prefix>_<lambda>nm.pfm` and `.png` for every wavelength and
    /// returns the PFM paths.
    pub fn write_all(&self, prefix: &str, exposure: f64) -> Result<Vec<String>> {
        let mut paths = Vec::new();
        for (k, &l) in self.wavelengths.iter().enumerate() {
            let stem = format!("{prefix}_{}nm", format_lambda(l));
            write_pfm(format!("{stem}.pfm"), &self.to_pfm(k)?)?;
            write_png_tonemapped(format!("{stem}.png"), self.width, self.height, &self.planes[k], exposure)?;
            paths.push(format!("{stem}.pfm"));
        }
        Ok(paths)
    }

    /// Three-channel preview in `[0, 1]`: the wavelengths are split into
    /// three contiguous bands (short -> B, middle -> G, long -> R), each band
    /// averaged and compressed with `v / (1 + v)`. Output `[3, H, W]` in R,
    /// G, B order.
    pub fn rgb_preview(&self) -> Tensor {
        let m = self.wavelengths.len();
        let bands = [(2 * m / 3, m), (m / 3, 2 * m / 3), (0, m / 3)];
        let n = self.width * self.height;
        let mut data = Vec::with_capacity(3 * n);
        for (lo, hi) in bands {
            let (lo, hi) = (lo.min(m - 1), hi.max(lo + 1).min(m));
            for p in 0..n {
                let v = (lo..hi).map(|k| self.planes[k][p]).sum::<f64>() / (hi - lo) as f64;
                data.push(v / (1.0 + v));
            }
        }
        Tensor::new(&[3, self.height, self.width], data).expect("preview shape")
    }
}

/// `550` for integral wavelengths, otherwise the shortest decimal form.
pub fn format_lambda(l: f64) -> String {
    if l.fract() == 0.0 {
        format!("{}", l as i64)
    } else {
        format!("{l}")
    }
}

/// `round(clamp((exposure * v)^(1/2.2), 0, 1) * 255)`
pub fn tonemap_byte(v: f64, exposure: f64) -> u8 {
    let x = (exposure * v).max(0.0).powf(1.0 / 2.2).min(1.0);
    (x * 255.0).round() as u8
}

pub fn write_png_tonemapped(path: impl AsRef<Path>, width: usize, height: usize, plane: &[f64], exposure: f64) -> Result<()> {
    if plane.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("image plane".into()));
    }
    if plane.len() != width * height {
        return Err(Error::LengthMismatch(plane.len(), width * height));
    }
    let bytes = plane.iter().map(|&v| tonemap_byte(v, exposure)).collect();
    let img = image::GrayImage::from_raw(width as u32, height as u32, bytes).expect("buffer sized above");
    img.save(path).map_err(|e| Error::Image(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tonemap_values() {
        assert_eq!(tonemap_byte(1.0, 1.0), 255);
        assert_eq!(tonemap_byte(0.218, 1.0), 128);
        assert_eq!(tonemap_byte(0.0, 1.0), 0);
        assert_eq!(tonemap_byte(7.0, 1.0), 255);
        assert_eq!(tonemap_byte(0.5, 2.0), 255);
    }

    #[test]
    fn png_written_and_nan_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        write_png_tonemapped(&p, 2, 1, &[1.0, 0.218], 1.0).unwrap();
        let img = image::open(&p).unwrap().to_luma8();
        assert_eq!(img.into_raw(), vec![255, 128]);
        assert!(write_png_tonemapped(&p, 1, 1, &[f64::NAN], 1.0).is_err());
    }

    #[test]
    fn lambda_names() {
        assert_eq!(format_lambda(550.0), "550");
        assert_eq!(format_lambda(550.5), "550.5");
    }

    #[test]
    fn preview_bands() {
        let img = SpectralImage {
            width: 1,
            height: 1,
            wavelengths: vec![400.0, 500.0, 600.0],
            planes: vec![vec![1.0], vec![3.0], vec![0.0]],
            mask: vec![true],
        };
        assert_eq!(img.rgb_preview().data(), &[0.0, 0.75, 0.5]);
    }
}
