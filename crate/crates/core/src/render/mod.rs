//! Per-wavelength rendering of spheres and meshes under distant or
//! environment light.
//!
//! The camera is orthographic, looking down `-z` onto the square
//! `[-1, 1]^2`; `x` points right and `y` up. The unit sphere fills the
//! view. Pixels are independent and are evaluated in parallel with rayon;
//! the output does not depend on the thread count.

mod envmap;
mod image;
mod mesh;
mod pfm;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use self::image::{format_lambda, tonemap_byte, write_png_tonemapped, SpectralImage};
pub use envmap::{EnvCell, EnvMap};
pub use mesh::Mesh;
pub use pfm::{decode_pfm, encode_pfm, read_pfm, write_pfm, Pfm};

use crate::brdf::{SpectralBrdfTable, SyntheticSpec};
use crate::coords::{normalize_coord, to_rusin, RusinAngles, Vec3, WavelengthAxis};
use crate::error::{Error, Result};
use crate::train::SstaModel;

/// Anything that returns reflectance for many angle triples at once.
pub trait SpectralBrdf: Sync {
    fn axis(&self) -> &WavelengthAxis;
    fn eval_many(&self, angles: &[RusinAngles], lambda: f64) -> Result<Vec<f64>>;
}

const PAR_CHUNK: usize = 2048;

impl SpectralBrdf for SpectralBrdfTable {
    fn axis(&self) -> &WavelengthAxis {
        SpectralBrdfTable::axis(self)
    }

    fn eval_many(&self, angles: &[RusinAngles], lambda: f64) -> Result<Vec<f64>> {
        Ok(angles.par_iter().with_min_len(PAR_CHUNK).map(|a| self.lookup(a, lambda)).collect())
    }
}

impl SpectralBrdf for SstaModel {
    fn axis(&self) -> &WavelengthAxis {
        &self.config.axis
    }

    fn eval_many(&self, angles: &[RusinAngles], lambda: f64) -> Result<Vec<f64>> {
        let axis = self.config.axis;
        let mu = self.config.mulaw();
        let chunks: Vec<Result<Vec<f64>>> = angles
            .par_chunks(PAR_CHUNK)
            .map(|chunk| {
                let u: Vec<[f64; 4]> = chunk.iter().map(|a| normalize_coord(&a.with_lambda(lambda), &axis)).collect();
                Ok(self.predict_normalized(&u)?.into_iter().map(|p| mu.expand(p.max(0.0))).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(angles.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }
}

/// The analytic oracle evaluated directly, without tabulation.
#[derive(Clone, Debug)]
pub struct AnalyticBrdf {
    pub spec: SyntheticSpec,
    pub axis: WavelengthAxis,
}

impl SpectralBrdf for AnalyticBrdf {
    fn axis(&self) -> &WavelengthAxis {
        &self.axis
    }

    fn eval_many(&self, angles: &[RusinAngles], lambda: f64) -> Result<Vec<f64>> {
        Ok(angles.iter().map(|a| self.spec.eval(a.theta_h, lambda, &self.axis)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Geometry {
    Sphere,
    Mesh(Mesh),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Illuminant {
    /// Irradiance `irradiance` (per nm, at normal incidence) arriving from
    /// `direction`.
    Distant { direction: Vec3, irradiance: f64 },
    /// Lat-long radiance, integrated by texel quadrature with
    /// `supersample^2` cells per texel.
    Env { map: EnvMap, supersample: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderScene {
    pub width: usize,
    pub height: usize,
    pub geometry: Geometry,
    pub light: Illuminant,
    pub wavelengths: Vec<f64>,
}

/// Nine wavelengths, 400 to 1000 nm in 75 nm steps.
pub fn eval_wavelengths() -> Vec<f64> {
    (0..9).map(|k| 400.0 + 75.0 * k as f64).collect()
}

/// Direction of the default off-axis distant light.
pub fn eval_light() -> Vec3 {
    Vec3::new(0.4, 0.5, 1.0).normalized()
}

impl RenderScene {
    /// 64x64 sphere under the default distant light at unit irradiance.
    pub fn eval_sphere(wavelengths: Vec<f64>) -> Self {
        RenderScene {
            width: 64,
            height: 64,
            geometry: Geometry::Sphere,
            light: Illuminant::Distant { direction: eval_light(), irradiance: 1.0 },
            wavelengths,
        }
    }

    pub fn validate(&self, axis: &WavelengthAxis) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config("image size must be positive".into()));
        }
        for &l in &self.wavelengths {
            axis.check(l)?;
        }
        match &self.light {
            Illuminant::Distant { direction, irradiance } => {
                if (direction.norm() - 1.0).abs() > 1e-9 || !(*irradiance >= 0.0 && irradiance.is_finite()) {
                    return Err(Error::Config("distant light needs a unit direction and irradiance >= 0".into()));
                }
            }
            Illuminant::Env { map, .. } => {
                if map.layers.iter().flatten().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config("environment radiance must be finite and >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Visible pixels and their normals.
    pub fn hits(&self) -> Vec<(usize, Vec3)> {
        let (w, h) = (self.width, self.height);
        (0..w * h)
            .into_par_iter()
            .filter_map(|p| {
                let x = 2.0 * ((p % w) as f64 + 0.5) / w as f64 - 1.0;
                let y = 1.0 - 2.0 * ((p / w) as f64 + 0.5) / h as f64;
                let n = match &self.geometry {
                    Geometry::Sphere => {
                        let r2 = x * x + y * y;
                        if r2 >= 1.0 {
                            return None;
                        }
                        Vec3::new(x, y, (1.0 - r2).sqrt())
                    }
                    Geometry::Mesh(m) => m.hit(x, y)?,
                };
                (n.z > 0.0).then_some((p, n))
            })
            .collect()
    }
}

/// Angles of a world-space direction pair at a surface with normal `n`, or
/// `None` when the incident direction is at or below the horizon.
fn local_angles(n: Vec3, wi: Vec3, wo: Vec3) -> Option<(RusinAngles, f64)> {
    let cos_i = wi.dot(n);
    if cos_i <= 0.0 {
        return None;
    }
    let (t, b) = n.basis();
    let local = |v: Vec3| Vec3::new(v.dot(t), v.dot(b), v.dot(n)).normalized();
    let a = to_rusin(local(wi), local(wo)).ok()?;
    Some((a, cos_i))
}

pub fn render(scene: &RenderScene, brdf: &dyn SpectralBrdf) -> Result<SpectralImage> {
    scene.validate(brdf.axis())?;
    let hits = scene.hits();
    let n_px = scene.width * scene.height;
    let mut mask = vec![false; n_px];
    for &(p, _) in &hits {
        mask[p] = true;
    }
    let wo = Vec3::Z;
    let mut planes = Vec::with_capacity(scene.wavelengths.len());
    for &lambda in &scene.wavelengths {
        let mut plane = vec![0.0; n_px];
        match &scene.light {
            Illuminant::Distant { direction, irradiance } => {
                let q: Vec<(usize, RusinAngles, f64)> = hits
                    .iter()
                    .filter_map(|&(p, n)| local_angles(n, *direction, wo).map(|(a, c)| (p, a, c)))
                    .collect();
                let angles: Vec<RusinAngles> = q.iter().map(|x| x.1).collect();
                let r = brdf.eval_many(&angles, lambda)?;
                for ((p, _, cos), r) in q.into_iter().zip(r) {
                    plane[p] = irradiance * (r * cos);
                }
            }
            Illuminant::Env { map, supersample } => {
                let cells = map.cells(*supersample);
                let radiance = map.layer(lambda);
                for &(p, n) in &hits {
                    let mut angles = Vec::with_capacity(cells.len() / 2);
                    let mut weights = Vec::with_capacity(cells.len() / 2);
                    for c in &cells {
                        let l = radiance[c.texel];
                        if l == 0.0 {
                            continue;
                        }
                        if let Some((a, cos)) = local_angles(n, c.dir, wo) {
                            angles.push(a);
                            weights.push(l * cos * c.solid_angle);
                        }
                    }
                    let r = brdf.eval_many(&angles, lambda)?;
                    plane[p] = r.iter().zip(&weights).map(|(r, w)| r * w).sum();
                }
            }
        }
        planes.push(plane);
    }
    Ok(SpectralImage { width: scene.width, height: scene.height, wavelengths: scene.wavelengths.clone(), planes, mask })
}

fn default_size() -> usize {
    64
}

fn default_one() -> f64 {
    1.0
}

fn default_supersample() -> usize {
    2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum GeometrySpec {
    Sphere,
    /// OBJ path, relative to the scene file.
    Mesh { obj: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum LightSpec {
    Distant {
        direction: [f64; 3],
        #[serde(default = "default_one")]
        irradiance: f64,
    },
    /// Either a lat-long PFM (channel mean, box-filtered to at most 64x32)
    /// or a uniform `radiance` on a 64x32 grid.
    Envmap {
        #[serde(default)]
        pfm: Option<String>,
        #[serde(default)]
        radiance: Option<f64>,
        #[serde(default = "default_one")]
        scale: f64,
        #[serde(default = "default_supersample")]
        supersample: usize,
    },
}

/// JSON scene description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_size")]
    pub width: usize,
    #[serde(default = "default_size")]
    pub height: usize,
    #[serde(default = "eval_wavelengths")]
    pub wavelengths: Vec<f64>,
    #[serde(default = "sphere")]
    pub geometry: GeometrySpec,
    pub light: LightSpec,
}

fn sphere() -> GeometrySpec {
    GeometrySpec::Sphere
}

impl SceneSpec {
    /// Resolves file references relative to `base`.
    pub fn build(&self, base: &Path) -> Result<RenderScene> {
        let geometry = match &self.geometry {
            GeometrySpec::Sphere => Geometry::Sphere,
            GeometrySpec::Mesh { obj } => Geometry::Mesh(Mesh::load_obj(base.join(obj))?.fit_to_view()),
        };
        let light = match &self.light {
            LightSpec::Distant { direction, irradiance } => {
                let d = Vec3::new(direction[0], direction[1], direction[2]);
                if d.norm() == 0.0 {
                    return Err(Error::Config("light direction must be non-zero".into()));
                }
                Illuminant::Distant { direction: d.normalized(), irradiance: *irradiance }
            }
            LightSpec::Envmap { pfm, radiance, scale, supersample } => {
                let map = match (pfm, radiance) {
                    (Some(p), None) => EnvMap::from_pfm(&read_pfm(base.join(p))?)?.downsample(64, 32),
                    (None, Some(r)) => EnvMap::uniform(64, 32, *r),
                    _ => return Err(Error::Config("envmap needs exactly one of \"pfm\" or \"radiance\"".into())),
                };
                Illuminant::Env { map: map.scaled(*scale), supersample: *supersample }
            }
        };
        Ok(RenderScene { width: self.width, height: self.height, geometry, light, wavelengths: self.wavelengths.clone() })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<RenderScene> {
        let path = path.as_ref();
        let spec: SceneSpec = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        spec.build(path.parent().unwrap_or(Path::new(".")))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;

    fn constant_table(v: f32) -> SpectralBrdfTable {
        let axis = WavelengthAxis::new(400.0, 1000.0, 2).unwrap();
        SpectralBrdfTable::new("c", axis, [2, 2, 2], vec![v; 16]).unwrap()
    }

    fn scene(light: Illuminant) -> RenderScene {
        RenderScene { width: 24, height: 24, geometry: Geometry::Sphere, light, wavelengths: vec![550.0] }
    }

    #[test]
    fn zero_brdf_renders_black() {
        let img = render(&RenderScene::eval_sphere(vec![500.0]), &constant_table(0.0)).unwrap();
        assert!(img.planes[0].iter().all(|&v| v == 0.0));
        assert!(img.mask.iter().any(|&m| m));
    }

    #[test]
    fn white_furnace() {
        let s = scene(Illuminant::Env { map: EnvMap::uniform(64, 32, 1.0), supersample: 2 });
        let img = render(&s, &constant_table((1.0 / PI) as f32)).unwrap();
        for (v, m) in img.planes[0].iter().zip(&img.mask) {
            if *m {
                assert!((v - 1.0).abs() < 1e-2, "{v}");
            } else {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn lambertian_closed_form() {
        let rho = 0.6;
        let s = scene(Illuminant::Distant { direction: Vec3::Z, irradiance: 2.0 });
        let img = render(&s, &constant_table((rho / PI) as f32)).unwrap();
        for (p, n) in s.hits() {
            let expect = rho * 2.0 * n.z / PI;
            assert!((img.planes[0][p] - expect).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_in_light_and_mask_independent() {
        let t = constant_table(0.3);
        let a = render(&scene(Illuminant::Distant { direction: eval_light(), irradiance: 1.0 }), &t).unwrap();
        let b = render(&scene(Illuminant::Distant { direction: eval_light(), irradiance: 3.0 }), &t).unwrap();
        for (x, y) in a.planes[0].iter().zip(&b.planes[0]) {
            assert_eq!(3.0 * x, *y);
        }
        assert_eq!(a.mask, b.mask);
    }

    #[test]
    fn out_of_range_wavelength() {
        let mut s = RenderScene::eval_sphere(vec![1200.0]);
        assert!(matches!(render(&s, &constant_table(0.1)), Err(Error::WavelengthOutOfRange { .. })));
        s.wavelengths = vec![];
        assert!(render(&s, &constant_table(0.1)).unwrap().planes.is_empty());
    }

    #[test]
    fn scene_json() {
        let spec: SceneSpec =
            serde_json::from_str(r#"{"wavelengths":[550],"light":{"type":"distant","direction":[0,0,2]}}"#).unwrap();
        let s = spec.build(Path::new(".")).unwrap();
        assert_eq!(s.light, Illuminant::Distant { direction: Vec3::Z, irradiance: 1.0 });
        assert_eq!((s.width, s.geometry), (64, Geometry::Sphere));
        let bad = r#"{"light":{"type":"envmap"}}"#;
        assert!(serde_json::from_str::<SceneSpec>(bad).unwrap().build(Path::new(".")).is_err());
        assert!(serde_json::from_str::<SceneSpec>(r#"{"light":{"type":"sun"}}"#).is_err());
    }
}
