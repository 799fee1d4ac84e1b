//! The spectral-spatial tri-plane field.
//!
//! Six learnable feature planes factor the 4-D domain
//! `(theta_h, theta_d, phi_d, lambda)`. The spatial planes pair angles only
//! and are shared between RGB and spectral supervision; the spectral planes
//! pair each angle with wavelength. Planes are stored channel-last,
//! `[rows, cols, C]`, so that one bilinear tap reads `C` contiguous values.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::brdf::AngleDims;
use crate::coords::{normalize_angles, normalize_coord, RusinAngles, RusinCoord, WavelengthAxis};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Plane order: spatial `d1 (th, td)`, `d2 (th, pd)`, `d3 (td, pd)`, then
/// spectral `e1 (th, l)`, `e2 (td, l)`, `e3 (pd, l)`.
pub const PLANE_NAMES: [&str; 6] = ["f_d1", "f_d2", "f_d3", "f_e1", "f_e2", "f_e3"];

/// Which normalized coordinates `[u_th, u_td, u_pd, u_l]` index each plane.
const PLANE_AXES: [(usize, usize); 6] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

pub const INIT_RANGE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TriplaneSet {
    channels: usize,
    dims: AngleDims,
    axis: WavelengthAxis,
    planes: [Tensor; 6],
}

/// `[rows, cols]` of each plane for a grid.
pub fn plane_extents(dims: AngleDims, wavelengths: usize) -> [[usize; 2]; 6] {
    let ext = [dims[0], dims[1], dims[2], wavelengths];
    PLANE_AXES.map(|(a, b)| [ext[a], ext[b]])
}

impl TriplaneSet {
    pub fn from_planes(channels: usize, dims: AngleDims, axis: WavelengthAxis, planes: [Tensor; 6]) -> Result<Self> {
        axis.validate()?;
        if channels == 0 || dims.iter().any(|&d| d < 2) {
            return Err(Error::Config(format!("planes need C >= 1 and every extent >= 2, got C={channels}, dims {dims:?}")));
        }
        for (k, (p, [r, c])) in planes.iter().zip(plane_extents(dims, axis.count)).enumerate() {
            if p.shape() != [r, c, channels] {
                return Err(Error::shape("triplane", format!("{} is {:?}, expected {:?}", PLANE_NAMES[k], p.shape(), [r, c, channels])));
            }
        }
        Ok(TriplaneSet { channels, dims, axis, planes })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> AngleDims {
        self.dims
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    pub fn planes(&self) -> &[Tensor; 6] {
        &self.planes
    }

    pub fn planes_mut(&mut self) -> &mut [Tensor; 6] {
        &mut self.planes
    }

    pub fn parameter_count(&self) -> usize {
        self.planes.iter().map(Tensor::len).sum()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> PlaneVars {
        PlaneVars(std::array::from_fn(|k| tape.param(&self.planes[k])))
    }

    /// Six feature vectors at one coordinate.
    pub fn project(&self, c: &RusinCoord) -> Result<FeatureBundle> {
        let mut tape = Tape::new();
        let planes = self.bind(&mut tape);
        let f = project(&mut tape, &planes, &[normalize_coord(c, &self.axis)])?;
        Ok(FeatureBundle::from_vars(&tape, &f))
    }

    /// Six feature vectors with wavelength-averaged spectral features.
    pub fn project_rgb(&self, c: &RusinAngles) -> Result<FeatureBundle> {
        let mut tape = Tape::new();
        let planes = self.bind(&mut tape);
        let f = project_rgb(&mut tape, &planes, &[normalize_angles(c)], self.axis.count)?;
        Ok(FeatureBundle::from_vars(&tape, &f))
    }
}

/// Uniform `[-0.1, 0.1]` planes from a seeded generator.
pub fn init_triplanes(channels: usize, dims: AngleDims, axis: WavelengthAxis, seed: u64) -> Result<TriplaneSet> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planes = plane_extents(dims, axis.count).map(|[r, c]| Tensor::uniform(&[r, c, channels], INIT_RANGE, &mut rng));
    TriplaneSet::from_planes(channels, dims, axis, planes)
}

/// Tape handles of the six planes, each `[rows, cols, C]`.
#[derive(Clone, Copy, Debug)]
pub struct PlaneVars(pub [Var; 6]);

/// Tape handles of the six projected features, each `[N, C]`.
#[derive(Clone, Copy, Debug)]
pub struct FeatureVars(pub [Var; 6]);

/// The six `C`-vectors of a single query.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle(pub [Vec<f64>; 6]);

impl FeatureBundle {
    fn from_vars(tape: &Tape<'_>, f: &FeatureVars) -> Self {
        FeatureBundle(f.0.map(|v| tape.value(v).data().to_vec()))
    }

    pub fn d(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub fn e(&self, i: usize) -> &[f64] {
        &self.0[3 + i]
    }
}

/// Batched projection of normalized coordinates onto all six planes.
pub fn project(tape: &mut Tape<'_>, planes: &PlaneVars, coords: &[[f64; 4]]) -> Result<FeatureVars> {
    let mut out = [planes.0[0]; 6];
    for (k, &(a, b)) in PLANE_AXES.iter().enumerate() {
        let uv = coords.iter().map(|u| [u[a], u[b]]).collect();
        out[k] = tape.bilinear_sample(planes.0[k], uv)?;
    }
    Ok(FeatureVars(out))
}

/// Batched RGB-mode projection: spatial features as in [`project`], spectral
/// features averaged over the `wavelengths` grid nodes.
pub fn project_rgb(tape: &mut Tape<'_>, planes: &PlaneVars, coords: &[[f64; 3]], wavelengths: usize) -> Result<FeatureVars> {
    let n = coords.len();
    let mut out = [planes.0[0]; 6];
    for (k, &(a, b)) in PLANE_AXES.iter().enumerate().take(3) {
        out[k] = tape.bilinear_sample(planes.0[k], coords.iter().map(|u| [u[a], u[b]]).collect())?;
    }
    for k in 3..6 {
        let a = PLANE_AXES[k].0;
        let mut uv = Vec::with_capacity(n * wavelengths);
        for u in coords {
            for l in 0..wavelengths {
                uv.push([u[a], l as f64 / (wavelengths - 1) as f64]);
            }
        }
        let c = tape.value(planes.0[k]).shape()[2];
        let sampled = tape.bilinear_sample(planes.0[k], uv)?;
        let grouped = tape.reshape(sampled, &[n, wavelengths, c])?;
        out[k] = tape.mean_axis(grouped, 1)?;
    }
    Ok(FeatureVars(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::denormalize_angles;
    use rand::Rng;

    fn small_axis() -> WavelengthAxis {
        WavelengthAxis::new(400.0, 1000.0, 5).unwrap()
    }

    /// Per-channel bilinear interpolation written out longhand.
    fn oracle(plane: &Tensor, u: f64, v: f64) -> Vec<f64> {
        let s = plane.shape();
        let (h, w, c) = (s[0], s[1], s[2]);
        let y = u * (h - 1) as f64;
        let x = v * (w - 1) as f64;
        let y0 = (y.floor() as usize).min(h - 2);
        let x0 = (x.floor() as usize).min(w - 2);
        let (dy, dx) = (y - y0 as f64, x - x0 as f64);
        (0..c)
            .map(|k| {
                plane.get(&[y0, x0, k]) * (1.0 - dy) * (1.0 - dx)
                    + plane.get(&[y0, x0 + 1, k]) * (1.0 - dy) * dx
                    + plane.get(&[y0 + 1, x0, k]) * dy * (1.0 - dx)
                    + plane.get(&[y0 + 1, x0 + 1, k]) * dy * dx
            })
            .collect()
    }

    #[test]
    fn constant_planes_project_to_constants() {
        let axis = small_axis();
        let dims = [4, 3, 6];
        let planes = plane_extents(dims, axis.count).map(|[r, c]| Tensor::full(&[r, c, 3], 1.0));
        let tp = TriplaneSet::from_planes(3, dims, axis, planes).unwrap();
        let f = tp.project(&RusinAngles::new(0.3, 0.7, 1.1).with_lambda(640.0)).unwrap();
        for v in &f.0 {
            assert!(v.iter().all(|x| (x - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn node_query_reads_stored_column() {
        let axis = small_axis();
        let dims = [4, 3, 6];
        let tp = init_triplanes(2, dims, axis, 9).unwrap();
        let u = [2.0 / 3.0, 0.5, 0.4, 0.75];
        let c = denormalize_angles([u[0], u[1], u[2]]).with_lambda(axis.node(3));
        let f = tp.project(&c).unwrap();
        let idx = [2, 1, 2, 3];
        for (k, &(a, b)) in PLANE_AXES.iter().enumerate() {
            for ch in 0..2 {
                let stored = tp.planes()[k].get(&[idx[a], idx[b], ch]);
                assert!((f.0[k][ch] - stored).abs() < 1e-12, "plane {k}");
            }
        }
    }

    #[test]
    fn projection_matches_scalar_oracle() {
        let axis = small_axis();
        let dims = [7, 5, 9];
        let tp = init_triplanes(4, dims, axis, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let u: [f64; 4] = std::array::from_fn(|_| rng.gen_range(0.0..=1.0));
            let c = denormalize_angles([u[0], u[1], u[2]]).with_lambda(400.0 + 600.0 * u[3]);
            let un = normalize_coord(&c, &axis);
            let f = tp.project(&c).unwrap();
            for (k, &(a, b)) in PLANE_AXES.iter().enumerate() {
                let expect = oracle(&tp.planes()[k], un[a], un[b]);
                for (x, y) in f.0[k].iter().zip(&expect) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rgb_projection_of_constant_spectral_plane() {
        let axis = small_axis();
        let dims = [4, 3, 6];
        let mut tp = init_triplanes(3, dims, axis, 1).unwrap();
        for k in 3..6 {
            tp.planes_mut()[k].data_mut().iter_mut().for_each(|v| *v = 5.0);
        }
        let f = tp.project_rgb(&RusinAngles::new(0.2, 0.4, 0.9)).unwrap();
        for k in 3..6 {
            assert!(f.0[k].iter().all(|x| (x - 5.0).abs() < 1e-12));
        }
    }

    #[test]
    fn rgb_projection_with_two_wavelengths() {
        let axis = WavelengthAxis::new(400.0, 1000.0, 2).unwrap();
        let tp = init_triplanes(3, [4, 3, 6], axis, 4).unwrap();
        let angles = RusinAngles::new(0.5, 0.1, 2.0);
        let v0 = tp.project(&angles.with_lambda(400.0)).unwrap();
        let v1 = tp.project(&angles.with_lambda(1000.0)).unwrap();
        let avg = tp.project_rgb(&angles).unwrap();
        for k in 3..6 {
            for ch in 0..3 {
                assert!((avg.0[k][ch] - 0.5 * (v0.0[k][ch] + v1.0[k][ch])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rgb_projection_is_mean_over_node_wavelengths() {
        let axis = small_axis();
        let tp = init_triplanes(3, [5, 4, 7], axis, 8).unwrap();
        let angles = RusinAngles::new(0.9, 0.6, 0.3);
        let avg = tp.project_rgb(&angles).unwrap();
        let per: Vec<FeatureBundle> = axis.nodes().map(|l| tp.project(&angles.with_lambda(l)).unwrap()).collect();
        for k in 0..6 {
            for ch in 0..3 {
                let mean = per.iter().map(|f| f.0[k][ch]).sum::<f64>() / per.len() as f64;
                assert!((avg.0[k][ch] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let axis = small_axis();
        let a = init_triplanes(2, [4, 3, 6], axis, 1).unwrap();
        let b = init_triplanes(2, [4, 3, 6], axis, 1).unwrap();
        let c = init_triplanes(2, [4, 3, 6], axis, 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        for p in a.planes() {
            assert!(p.data().iter().all(|v| v.abs() <= INIT_RANGE));
        }
    }

    #[test]
    fn projection_is_lipschitz() {
        let axis = small_axis();
        let dims = [6, 5, 8];
        let tp = init_triplanes(3, dims, axis, 3).unwrap();
        let max_extent = 8.0;
        let range = 2.0 * INIT_RANGE;
        let eps = 1e-4;
        let base = RusinAngles::new(0.4, 0.5, 1.2).with_lambda(610.0);
        let f0 = tp.project(&base).unwrap();
        let mut moved = base;
        moved.angles.theta_d += eps * std::f64::consts::FRAC_PI_2;
        moved.lambda += eps * 600.0;
        let f1 = tp.project(&moved).unwrap();
        for k in 0..6 {
            for ch in 0..3 {
                assert!((f0.0[k][ch] - f1.0[k][ch]).abs() <= 2.0 * range * max_extent * eps);
            }
        }
    }
}
