//! Tabulated BRDFs: the MERL binary reader/writer, the `SBRD` spectral
//! container and an analytic spectral oracle.
//!
//! All tables share one grid convention: along each axis with `n` nodes,
//! node `i` sits at normalized coordinate `i / (n - 1)` (see
//! [`crate::coords::normalize_angles`] for the angle warps). Lookups
//! between nodes interpolate linearly per axis, which is the same rule the
//! tri-plane projector uses.

mod merl;
mod sbrd;
mod synth;

pub use merl::{merl_grayscale, parse_merl, read_merl, write_merl, MerlBrdf, MERL_DIMS, MERL_SCALE};
pub use sbrd::{read_sbrd, read_sbrd_from, write_sbrd, write_sbrd_to, SBRD_MAGIC, SBRD_VERSION};
pub use synth::{synth_spectral, SyntheticSpec};

use crate::coords::{denormalize_angles, normalize_angles, RusinAngles, WavelengthAxis};
use crate::error::{Error, Result};

/// Grid node count along `(theta_h, theta_d, phi_d)`.
pub type AngleDims = [usize; 3];

/// Node `i` of an `n`-node axis in normalized coordinates.
pub fn node_coord(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        i as f64 / (n - 1) as f64
    }
}

/// Linear-interpolation stencil on an `n`-node axis, tolerating `n == 1`.
#[inline]
pub(crate) fn axis_stencil(u: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let (i0, t) = crate::tape::stencil(u, n);
    (i0, i0 + 1, t)
}

/// Angles of the node at `(i, j, k)`.
pub fn node_angles(dims: AngleDims, i: usize, j: usize, k: usize) -> RusinAngles {
    denormalize_angles([node_coord(i, dims[0]), node_coord(j, dims[1]), node_coord(k, dims[2])])
}

/// A spectral BRDF sampled on `[M, theta_h, theta_d, phi_d]` nodes, in sr^-1.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectralBrdfTable {
    pub name: String,
    axis: WavelengthAxis,
    dims: AngleDims,
    data: Vec<f32>,
}

impl SpectralBrdfTable {
    pub fn new(name: impl Into<String>, axis: WavelengthAxis, dims: AngleDims, data: Vec<f32>) -> Result<Self> {
        axis.validate()?;
        let expected = axis.count * dims.iter().product::<usize>();
        if dims.contains(&0) || data.len() != expected {
            return Err(Error::Format(format!(
                "table {dims:?} x {} wavelengths needs {expected} values, got {}",
                axis.count,
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("spectral table value {bad}")));
        }
        Ok(SpectralBrdfTable { name: name.into(), axis, dims, data })
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn dims(&self) -> AngleDims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bins_per_wavelength(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Flat index of node `(wavelength, theta_h, theta_d, phi_d)`.
    pub fn index(&self, l: usize, i: usize, j: usize, k: usize) -> usize {
        ((l * self.dims[0] + i) * self.dims[1] + j) * self.dims[2] + k
    }

    /// Node coordinates of a flat index.
    pub fn unravel(&self, flat: usize) -> [usize; 4] {
        let k = flat % self.dims[2];
        let rest = flat / self.dims[2];
        let j = rest % self.dims[1];
        let rest = rest / self.dims[1];
        [rest / self.dims[0], rest % self.dims[0], j, k]
    }

    pub fn at(&self, l: usize, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(l, i, j, k)] as f64
    }

    /// Interpolated reflectance at arbitrary angles and wavelength.
    pub fn lookup(&self, angles: &RusinAngles, lambda: f64) -> f64 {
        let u = normalize_angles(angles);
        let (a0, a1, ta) = axis_stencil(u[0], self.dims[0]);
        let (b0, b1, tb) = axis_stencil(u[1], self.dims[1]);
        let (c0, c1, tc) = axis_stencil(u[2], self.dims[2]);
        let (l0, l1, tl) = axis_stencil(self.axis.normalize(lambda), self.axis.count);
        let mut acc = 0.0;
        for (l, wl) in [(l0, 1.0 - tl), (l1, tl)] {
            if wl == 0.0 {
                continue;
            }
            for (i, wa) in [(a0, 1.0 - ta), (a1, ta)] {
                if wa == 0.0 {
                    continue;
                }
                for (j, wb) in [(b0, 1.0 - tb), (b1, tb)] {
                    if wb == 0.0 {
                        continue;
                    }
                    let w = wl * wa * wb;
                    acc += w * ((1.0 - tc) * self.at(l, i, j, c0) + tc * self.at(l, i, j, c1));
                }
            }
        }
        acc
    }

    /// Grayscale RGB stand-in: three equal-width wavelength bands averaged
    /// into B, G and R. The mean of the three channels is the mean over all
    /// wavelength nodes when the node count divides by three.
    pub fn to_band_rgb(&self) -> MerlBrdf {
        let m = self.axis.count;
        let n = self.bins_per_wavelength();
        let bands = [(2 * m / 3, m), (m / 3, 2 * m / 3), (0, m / 3)]; // R, G, B
        let mut channels = Vec::with_capacity(3);
        for (lo, hi) in bands {
            let hi = hi.max(lo + 1);
            let mut ch = vec![0.0; n];
            for l in lo..hi {
                for (acc, v) in ch.iter_mut().zip(&self.data[l * n..(l + 1) * n]) {
                    *acc += *v as f64;
                }
            }
            ch.iter_mut().for_each(|v| *v /= (hi - lo) as f64);
            channels.push(ch);
        }
        MerlBrdf::from_reflectance(self.dims, &channels[0], &channels[1], &channels[2])
            .expect("band table has consistent dims")
    }
}
