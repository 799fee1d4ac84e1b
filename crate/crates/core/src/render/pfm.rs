//! Portable float maps: `Pf` (one channel) and `PF` (three channels),
//! little-endian (negative scale), rows stored bottom to top.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Float image with rows top to bottom and interleaved channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Pfm {
    pub fn gray(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        Ok(Pfm { width, height, channels: 1, data })
    }

    /// `[C, H, W]` tensor (C = 1 or 3) -> interleaved image.
    pub fn from_planar(t: &Tensor) -> Result<Self> {
        let &[c, h, w] = t.shape() else {
            return Err(Error::shape("pfm", format!("expected [C, H, W], got {:?}", t.shape())));
        };
        if c != 1 && c != 3 {
            return Err(Error::Format(format!("pfm supports 1 or 3 channels, got {c}")));
        }
        let n = h * w;
        let data = (0..n).flat_map(|p| (0..c).map(move |k| t.data()[k * n + p] as f32)).collect();
        Ok(Pfm { width: w, height: h, channels: c, data })
    }

    /// Channel-major `[C, H, W]` copy.
    pub fn to_planar(&self) -> Tensor {
        let n = self.width * self.height;
        let data = (0..self.channels).flat_map(|k| (0..n).map(move |p| self.data[p * self.channels + k] as f64)).collect();
        Tensor::new(&[self.channels, self.height, self.width], data).expect("pfm shape")
    }

    /// Per-pixel channel mean.
    pub fn luminance(&self) -> Vec<f64> {
        self.data.chunks(self.channels).map(|p| p.iter().map(|&v| v as f64).sum::<f64>() / self.channels as f64).collect()
    }
}

pub fn encode_pfm(img: &Pfm) -> Result<Vec<u8>> {
    if img.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("pfm image".into()));
    }
    let tag = match img.channels {
        1 => "Pf",
        3 => "PF",
        c => return Err(Error::Format(format!("pfm supports 1 or 3 channels, got {c}"))),
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    for r in (0..img.height).rev() {
        for v in &img.data[r * row..(r + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn write_pfm(path: impl AsRef<Path>, img: &Pfm) -> Result<()> {
    fs::write(path, encode_pfm(img)?)?;
    Ok(())
}

fn token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Format("pfm header ends early".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Format("pfm header is not ASCII".into()))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Pfm> {
    let mut pos = 0;
    let channels = match token(bytes, &mut pos)? {
        "Pf" => 1,
        "PF" => 3,
        other => return Err(Error::Format(format!("not a pfm file (tag {other:?})"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad pfm size {s:?}")));
    let width = num(token(bytes, &mut pos)?)?;
    let height = num(token(bytes, &mut pos)?)?;
    let scale: f64 = token(bytes, &mut pos)?.parse().map_err(|_| Error::Format("bad pfm scale".into()))?;
    pos += 1; // single whitespace byte before the raster
    let n = width * height * channels;
    let raster = bytes.get(pos..).unwrap_or_default();
    if raster.len() != 4 * n {
        return Err(Error::Length { expected: 4 * n, found: raster.len() });
    }
    let read = |b: &[u8]| {
        let a = [b[0], b[1], b[2], b[3]];
        if scale < 0.0 {
            f32::from_le_bytes(a)
        } else {
            f32::from_be_bytes(a)
        }
    };
    let row = width * channels;
    let mut data = vec![0f32; n];
    for r in 0..height {
        let src = &raster[4 * (height - 1 - r) * row..4 * (height - r) * row];
        for (d, b) in data[r * row..(r + 1) * row].iter_mut().zip(src.chunks_exact(4)) {
            *d = read(b);
        }
    }
    Ok(Pfm { width, height, channels, data })
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Pfm> {
    decode_pfm(&fs::read(path)?)
}
