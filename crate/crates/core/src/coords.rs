//! Rusinkiewicz half/difference angles and plane coordinates.
//!
//! Directions live in the local shading frame with the normal on `+z`.
//! `theta_d` and `phi_d` describe the outgoing direction in the frame of the
//! half vector; `phi_d` is folded into `[0, pi)` since swapping the two
//! directions shifts it by exactly `pi`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3 { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Vec3 {
        self * (1.0 / self.norm())
    }

    /// Rotation about `+z` by `angle`.
    pub fn rotate_z(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x - s * self.y, s * self.x + c * self.y, self.z)
    }

    /// Rotation about `+y` by `angle`.
    pub fn rotate_y(self, angle: f64) -> Vec3 {
        let (s, c) = angle.sin_cos();
        Vec3::new(c * self.x + s * self.z, self.y, -s * self.x + c * self.z)
    }

    /// Unit vector at polar angle `theta` from `+z` and azimuth `phi`.
    pub fn spherical(theta: f64, phi: f64) -> Vec3 {
        let (st, ct) = theta.sin_cos();
        let (sp, cp) = phi.sin_cos();
        Vec3::new(st * cp, st * sp, ct)
    }

    /// An orthonormal `(tangent, bitangent)` pair completing `self`.
    pub fn basis(self) -> (Vec3, Vec3) {
        let helper = if self.x.abs() < 0.9 { Vec3::new(1.0, 0.0, 0.0) } else { Vec3::new(0.0, 1.0, 0.0) };
        let t = helper.cross(self).normalized();
        (t, self.cross(t))
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Half/difference angles of an isotropic direction pair, in radians.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RusinAngles {
    pub theta_h: f64,
    pub theta_d: f64,
    pub phi_d: f64,
}

/// Angles plus wavelength in nanometres.
#[derive(Clone, Copy, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct RusinCoord {
    pub angles: RusinAngles,
    pub lambda: f64,
}

impl RusinAngles {
    pub fn new(theta_h: f64, theta_d: f64, phi_d: f64) -> Self {
        RusinAngles { theta_h, theta_d, phi_d }
    }

    pub fn with_lambda(self, lambda: f64) -> RusinCoord {
        RusinCoord { angles: self, lambda }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WavelengthAxis {
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub count: usize,
}

impl Default for WavelengthAxis {
    fn default() -> Self {
        WavelengthAxis { lambda_min: 400.0, lambda_max: 1000.0, count: 39 }
    }
}

impl WavelengthAxis {
    pub fn new(lambda_min: f64, lambda_max: f64, count: usize) -> Result<Self> {
        let axis = WavelengthAxis { lambda_min, lambda_max, count };
        axis.validate()?;
        Ok(axis)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_min < self.lambda_max) || self.count < 2 || !self.lambda_min.is_finite() || !self.lambda_max.is_finite() {
            return Err(Error::Config(format!(
                "wavelength axis needs min < max and count >= 2, got {}..{} nm x {}",
                self.lambda_min, self.lambda_max, self.count
            )));
        }
        Ok(())
    }

    /// Wavelength of grid node `k`.
    pub fn node(&self, k: usize) -> f64 {
        self.lambda_min + (self.lambda_max - self.lambda_min) * k as f64 / (self.count - 1) as f64
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|k| self.node(k))
    }

    pub fn normalize(&self, lambda: f64) -> f64 {
        (lambda - self.lambda_min) / (self.lambda_max - self.lambda_min)
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda >= self.lambda_min - 1e-9 && lambda <= self.lambda_max + 1e-9
    }

    pub fn check(&self, lambda: f64) -> Result<()> {
        if self.contains(lambda) {
            Ok(())
        } else {
            Err(Error::WavelengthOutOfRange { lambda, min: self.lambda_min, max: self.lambda_max })
        }
    }
}

fn fold_phi(phi: f64) -> f64 {
    let mut p = phi.rem_euclid(PI);
    if p >= PI {
        p = 0.0;
    }
    p
}

/// Half/difference angles of `(wi, wo)`, both unit vectors.
pub fn to_rusin(wi: Vec3, wo: Vec3) -> Result<RusinAngles> {
    let sum = wi + wo;
    let len = sum.norm();
    if len < 1e-12 {
        return Err(Error::DegenerateGeometry);
    }
    let h = sum * (1.0 / len);
    let theta_h = h.z.clamp(-1.0, 1.0).acos();
    let phi_h = h.y.atan2(h.x);
    let d = wo.rotate_z(-phi_h).rotate_y(-theta_h);
    let theta_d = d.z.clamp(-1.0, 1.0).acos();
    let phi_d = fold_phi(d.y.atan2(d.x));
    Ok(RusinAngles { theta_h, theta_d, phi_d })
}

/// Reconstructs `(wi, wo)` from half/difference angles and a free half-vector
/// azimuth `phi_h`.
pub fn from_rusin(c: RusinAngles, phi_h: f64) -> Result<(Vec3, Vec3)> {
    let d = Vec3::spherical(c.theta_d, c.phi_d);
    let mirrored = Vec3::new(-d.x, -d.y, d.z);
    let to_world = |v: Vec3| v.rotate_y(c.theta_h).rotate_z(phi_h);
    let (wi, wo) = (to_world(mirrored), to_world(d));
    if wi.z < -1e-12 || wo.z < -1e-12 {
        return Err(Error::OutOfHemisphere);
    }
    Ok((wi, wo))
}

/// Normalized plane coordinates `[u_theta_h, u_theta_d, u_phi_d, u_lambda]`,
/// each in `[0, 1]`. `theta_h` uses the square-root warp.
pub fn normalize_coord(c: &RusinCoord, axis: &WavelengthAxis) -> [f64; 4] {
    let [a, b, p] = normalize_angles(&c.angles);
    [a, b, p, axis.normalize(c.lambda)]
}

pub fn normalize_angles(c: &RusinAngles) -> [f64; 3] {
    [
        (c.theta_h / FRAC_PI_2).max(0.0).sqrt(),
        c.theta_d / FRAC_PI_2,
        c.phi_d / PI,
    ]
}

/// Inverse of [`normalize_angles`].
pub fn denormalize_angles(u: [f64; 3]) -> RusinAngles {
    RusinAngles {
        theta_h: u[0] * u[0] * FRAC_PI_2,
        theta_d: u[1] * FRAC_PI_2,
        phi_d: u[2] * PI,
    }
}
