//! Triangle meshes from Wavefront OBJ, seen by the orthographic camera.

use std::path::Path;

use crate::coords::Vec3;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Mesh {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    /// Vertex indices and optional normal indices per triangle.
    pub triangles: Vec<([usize; 3], Option<[usize; 3]>)>,
}

fn index(tok: &str, len: usize) -> Result<usize> {
    let i: i64 = tok.parse().map_err(|_| Error::Format(format!("bad obj index {tok:?}")))?;
    let k = if i < 0 { len as i64 + i } else { i - 1 };
    if k < 0 || k as usize >= len {
        return Err(Error::Format(format!("obj index {i} out of range")));
    }
    Ok(k as usize)
}

impl Mesh {
    /// Parses `v`, `vn` and `f` records; polygons are fanned into triangles.
    pub fn parse_obj(text: &str) -> Result<Mesh> {
        let (mut positions, mut normals, mut faces) = (Vec::new(), Vec::new(), Vec::new());
        for line in text.lines() {
            let mut it = line.split_whitespace();
            match it.next() {
                Some(tag @ ("v" | "vn")) => {
                    let v: Vec<f64> = it.take(3).map(str::parse).collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Format(format!("bad obj record {line:?}")))?;
                    if v.len() != 3 {
                        return Err(Error::Format(format!("bad obj record {line:?}")));
                    }
                    let p = Vec3::new(v[0], v[1], v[2]);
                    if tag == "v" { positions.push(p) } else { normals.push(p.normalized()) }
                }
                Some("f") => faces.push(it.map(str::to_owned).collect::<Vec<_>>()),
                _ => {}
            }
        }
        let mut triangles = Vec::new();
        for f in faces {
            let mut corners = Vec::new();
            for c in &f {
                let mut parts = c.split('/');
                let v = index(parts.next().unwrap_or(""), positions.len())?;
                let n = match parts.nth(1) {
                    Some(s) if !s.is_empty() => Some(index(s, normals.len())?),
                    _ => None,
                };
                corners.push((v, n));
            }
            if corners.len() < 3 {
                return Err(Error::Format("obj face with fewer than 3 vertices".into()));
            }
            for k in 1..corners.len() - 1 {
                let tri = [corners[0], corners[k], corners[k + 1]];
                let vn = match (tri[0].1, tri[1].1, tri[2].1) {
                    (Some(a), Some(b), Some(c)) => Some([a, b, c]),
                    _ => None,
                };
                triangles.push(([tri[0].0, tri[1].0, tri[2].0], vn));
            }
        }
        if triangles.is_empty() {
            return Err(Error::Format("obj has no faces".into()));
        }
        Ok(Mesh { positions, normals, triangles })
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Mesh> {
        Self::parse_obj(&std::fs::read_to_string(path)?)
    }

    /// Scales and centres the mesh so its x-y bounds fit in `[-1, 1]^2`.
    pub fn fit_to_view(mut self) -> Mesh {
        let (mut lo, mut hi) = (Vec3::new(f64::MAX, f64::MAX, f64::MAX), Vec3::new(f64::MIN, f64::MIN, f64::MIN));
        for p in &self.positions {
            lo = Vec3::new(lo.x.min(p.x), lo.y.min(p.y), lo.z.min(p.z));
            hi = Vec3::new(hi.x.max(p.x), hi.y.max(p.y), hi.z.max(p.z));
        }
        let c = (lo + hi) * 0.5;
        let half = (0.5 * (hi.x - lo.x)).max(0.5 * (hi.y - lo.y)).max(1e-12);
        for p in &mut self.positions {
            *p = (*p - c) * (1.0 / half);
        }
        self
    }

    /// Nearest hit of the ray from `(x, y, +inf)` along `-z`; returns the
    /// shading normal oriented towards the camera unless vertex normals say
    /// otherwise.
    pub fn hit(&self, x: f64, y: f64) -> Option<Vec3> {
        let mut best: Option<(f64, Vec3)> = None;
        for (tri, vn) in &self.triangles {
            let [a, b, c] = tri.map(|i| self.positions[i]);
            // barycentric solve in the x-y projection
            let det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
            if det.abs() < 1e-15 {
                continue;
            }
            let u = ((x - a.x) * (c.y - a.y) - (c.x - a.x) * (y - a.y)) / det;
            let v = ((b.x - a.x) * (y - a.y) - (x - a.x) * (b.y - a.y)) / det;
            if u < 0.0 || v < 0.0 || u + v > 1.0 {
                continue;
            }
            let z = a.z + u * (b.z - a.z) + v * (c.z - a.z);
            if best.is_some_and(|(bz, _)| bz >= z) {
                continue;
            }
            let n = match vn {
                Some(ix) => {
                    let [na, nb, nc] = ix.map(|i| self.normals[i]);
                    (na * (1.0 - u - v) + nb * u + nc * v).normalized()
                }
                None => {
                    let n = (b - a).cross(c - a).normalized();
                    if n.z < 0.0 { -n } else { n }
                }
            };
            best = Some((z, n));
        }
        best.map(|(_, n)| n)
    }
}
