use std::fs;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};

use super::AngleDims;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MERL_DIMS: AngleDims = [90, 90, 180];

/// Per-channel decode factors for R, G, B.
pub const MERL_SCALE: [f64; 3] = [1.0 / 1500.0, 1.15 / 1500.0, 1.66 / 1500.0];

/// A measured RGB BRDF in the MERL `.binary` layout.
///
/// The stored doubles are kept verbatim so that writing a parsed file
/// reproduces it byte for byte; [`MerlBrdf::reflectance`] applies the channel
/// scale and maps the negative "invalid" sentinel to zero.
#[derive(Clone, Debug, PartialEq)]
pub struct MerlBrdf {
    dims: AngleDims,
    raw: Vec<f64>,
}

impl MerlBrdf {
    /// Builds a table from decoded per-channel reflectance.
    pub fn from_reflectance(dims: AngleDims, r: &[f64], g: &[f64], b: &[f64]) -> Result<Self> {
        let n: usize = dims.iter().product();
        if r.len() != n || g.len() != n || b.len() != n {
            return Err(Error::Format(format!("rgb channels must each hold {n} values")));
        }
        let mut raw = Vec::with_capacity(3 * n);
        for (ch, scale) in [r, g, b].into_iter().zip(MERL_SCALE) {
            raw.extend(ch.iter().map(|v| v / scale));
        }
        Ok(MerlBrdf { dims, raw })
    }

    pub fn dims(&self) -> AngleDims {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    /// A bin is invalid when any channel holds the negative sentinel or a
    /// non-finite value.
    pub fn is_valid(&self, bin: usize) -> bool {
        let n = self.bins();
        (0..3).all(|c| {
            let v = self.raw[c * n + bin];
            v.is_finite() && v >= 0.0
        })
    }

    /// Decoded reflectance of channel `c` (0 = R, 1 = G, 2 = B).
    pub fn reflectance(&self, c: usize, bin: usize) -> f64 {
        let v = self.raw[c * self.bins() + bin];
        if v.is_finite() && v >= 0.0 {
            v * MERL_SCALE[c]
        } else {
            0.0
        }
    }

    /// Decoded `[3, theta_h, theta_d, phi_d]` tensor in R, G, B order.
    pub fn table(&self) -> Tensor {
        let n = self.bins();
        let data = (0..3).flat_map(|c| (0..n).map(move |b| (c, b))).map(|(c, b)| self.reflectance(c, b)).collect();
        Tensor::new(&[3, self.dims[0], self.dims[1], self.dims[2]], data).expect("dims match storage")
    }
}

pub fn parse_merl(bytes: &[u8]) -> Result<MerlBrdf> {
    if bytes.len() < 12 {
        return Err(Error::Length { expected: 12, found: bytes.len() });
    }
    let dims = [
        LittleEndian::read_i32(&bytes[0..4]),
        LittleEndian::read_i32(&bytes[4..8]),
        LittleEndian::read_i32(&bytes[8..12]),
    ];
    if dims != [90, 90, 180] {
        return Err(Error::Format(format!("MERL header dims {dims:?}, expected [90, 90, 180]")));
    }
    let n = 3 * MERL_DIMS.iter().product::<usize>();
    let expected = 12 + 8 * n;
    if bytes.len() != expected {
        return Err(Error::Length { expected, found: bytes.len() });
    }
    let mut raw = vec![0.0; n];
    LittleEndian::read_f64_into(&bytes[12..], &mut raw);
    Ok(MerlBrdf { dims: MERL_DIMS, raw })
}

pub fn read_merl(path: impl AsRef<Path>) -> Result<MerlBrdf> {
    parse_merl(&fs::read(path)?)
}

/// Serializes in the MERL layout: three `i32` dims, then R, G and B blocks of
/// little-endian doubles.
pub fn write_merl(m: &MerlBrdf) -> Vec<u8> {
    let mut out = vec![0u8; 12 + 8 * m.raw.len()];
    for (k, d) in m.dims.iter().enumerate() {
        LittleEndian::write_i32(&mut out[4 * k..4 * k + 4], *d as i32);
    }
    LittleEndian::write_f64_into(&m.raw, &mut out[12..]);
    out
}

/// Per-bin mean of the decoded R, G, B channels; invalid bins read as zero.
pub fn merl_grayscale(m: &MerlBrdf) -> Tensor {
    let data = (0..m.bins())
        .map(|b| (m.reflectance(0, b) + m.reflectance(1, b) + m.reflectance(2, b)) / 3.0)
        .collect();
    Tensor::new(&m.dims, data).expect("dims match storage")
}
