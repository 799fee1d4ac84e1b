//! Fusion of the six projected features into one `C`-vector.
//!
//! Adaptive fusion reshapes every feature to a `1 x H x W` map, sums six
//! branch-specific 3x3 convolutions into a hybrid map, pools it to a single
//! statistic, expands that to a `d`-dimensional descriptor and derives one
//! logit per branch. A softmax across the six logits gives convex weights
//! for the original features. The Hadamard baseline multiplies the six
//! features elementwise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{FeatureBundle, FeatureVars};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const DESCRIPTOR_DIM: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    Aff,
    Hadamard,
}

impl std::str::FromStr for FusionMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aff" => Ok(FusionMode::Aff),
            "hadamard" => Ok(FusionMode::Hadamard),
            other => Err(Error::Config(format!("unknown fusion mode {other:?} (aff|hadamard)"))),
        }
    }
}

/// The most square `(h, w)` with `h * w == channels` and `h <= w`.
pub fn default_grid(channels: usize) -> (usize, usize) {
    let mut h = (channels as f64).sqrt() as usize;
    while h > 1 && channels % h != 0 {
        h -= 1;
    }
    (h.max(1), channels / h.max(1))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AffWeights {
    grid: (usize, usize),
    /// Six `[1, 1, 3, 3]` kernels, ordered `d1, d2, d3, e1, e2, e3`.
    pub conv_w: [Tensor; 6],
    /// Six `[1]` biases.
    pub conv_b: [Tensor; 6],
    /// `[1, d]`
    pub expand_w: Tensor,
    /// `[d]`
    pub expand_b: Tensor,
    /// `[d, 6]`; column `i` is the branch kernel of feature `i`.
    pub branch_w: Tensor,
    /// `[6]`
    pub branch_b: Tensor,
}

impl AffWeights {
    /// Kernels uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(channels: usize, grid: (usize, usize), seed: u64) -> Result<Self> {
        if grid.0 * grid.1 != channels || grid.0 == 0 {
            return Err(Error::Config(format!("C = {channels} is not {} x {}", grid.0, grid.1)));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let conv_w = std::array::from_fn(|_| Tensor::uniform(&[1, 1, 3, 3], 1.0 / 3.0, &mut rng));
        let expand_w = Tensor::uniform(&[1, DESCRIPTOR_DIM], 1.0, &mut rng);
        let branch_w = Tensor::uniform(&[DESCRIPTOR_DIM, 6], 1.0 / (DESCRIPTOR_DIM as f64).sqrt(), &mut rng);
        Ok(AffWeights {
            grid,
            conv_w,
            conv_b: std::array::from_fn(|_| Tensor::zeros(&[1])),
            expand_w,
            expand_b: Tensor::zeros(&[DESCRIPTOR_DIM]),
            branch_w,
            branch_b: Tensor::zeros(&[6]),
        })
    }

    pub fn from_parts(grid: (usize, usize), tensors: Vec<Tensor>) -> Result<Self> {
        let mut it = tensors.into_iter();
        let mut next = |shape: &[usize]| -> Result<Tensor> {
            let t = it.next().ok_or_else(|| Error::Format("missing fusion tensor".into()))?;
            if t.shape() != shape {
                return Err(Error::shape("aff", format!("{:?}, expected {shape:?}", t.shape())));
            }
            Ok(t)
        };
        let mut conv_w = Vec::new();
        for _ in 0..6 {
            conv_w.push(next(&[1, 1, 3, 3])?);
        }
        let mut conv_b = Vec::new();
        for _ in 0..6 {
            conv_b.push(next(&[1])?);
        }
        Ok(AffWeights {
            grid,
            conv_w: conv_w.try_into().unwrap(),
            conv_b: conv_b.try_into().unwrap(),
            expand_w: next(&[1, DESCRIPTOR_DIM])?,
            expand_b: next(&[DESCRIPTOR_DIM])?,
            branch_w: next(&[DESCRIPTOR_DIM, 6])?,
            branch_b: next(&[6])?,
        })
    }

    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut v: Vec<&Tensor> = self.conv_w.iter().chain(&self.conv_b).collect();
        v.extend([&self.expand_w, &self.expand_b, &self.branch_w, &self.branch_b]);
        v
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.conv_w.iter_mut().chain(self.conv_b.iter_mut()).collect();
        v.extend([&mut self.expand_w, &mut self.expand_b, &mut self.branch_w, &mut self.branch_b]);
        v
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> AffVars {
        AffVars {
            grid: self.grid,
            conv_w: std::array::from_fn(|k| tape.param(&self.conv_w[k])),
            conv_b: std::array::from_fn(|k| tape.param(&self.conv_b[k])),
            expand_w: tape.param(&self.expand_w),
            expand_b: tape.param(&self.expand_b),
            branch_w: tape.param(&self.branch_w),
            branch_b: tape.param(&self.branch_b),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AffVars {
    grid: (usize, usize),
    conv_w: [Var; 6],
    conv_b: [Var; 6],
    expand_w: Var,
    expand_b: Var,
    branch_w: Var,
    branch_b: Var,
}

impl AffVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v: Vec<Var> = self.conv_w.iter().chain(&self.conv_b).copied().collect();
        v.extend([self.expand_w, self.expand_b, self.branch_w, self.branch_b]);
        v
    }
}

/// Branch weights `[N, 6]` and fused features `[N, C]`.
pub fn fuse_aff_weights(tape: &mut Tape<'_>, w: &AffVars, f: &FeatureVars) -> Result<(Var, Var)> {
    let shape = tape.value(f.0[0]).shape().to_vec();
    let (n, c) = (shape[0], shape[1]);
    let (h, wd) = w.grid;
    if h * wd != c {
        return Err(Error::Config(format!("C = {c} is not {h} x {wd}")));
    }
    let mut hybrid = None;
    for k in 0..6 {
        let map = tape.reshape(f.0[k], &[n, 1, h, wd])?;
        let conv = tape.conv2d(map, w.conv_w[k], Some(w.conv_b[k]), 1)?;
        hybrid = Some(match hybrid {
            None => conv,
            Some(acc) => tape.add(acc, conv)?,
        });
    }
    let flat = tape.reshape(hybrid.unwrap(), &[n, c])?;
    let pooled = tape.mean_axis(flat, 1)?;
    let s = tape.reshape(pooled, &[n, 1])?;
    let z = tape.matmul(s, w.expand_w)?;
    let z = tape.add_bias(z, w.expand_b)?;
    let z = tape.relu(z)?;
    let logits = tape.matmul(z, w.branch_w)?;
    let logits = tape.add_bias(logits, w.branch_b)?;
    let weights = tape.softmax_last(logits)?;
    let stacked = tape.stack(&f.0)?;
    let fused = tape.mix(weights, stacked)?;
    Ok((weights, fused))
}

pub fn fuse_aff_vars(tape: &mut Tape<'_>, w: &AffVars, f: &FeatureVars) -> Result<Var> {
    Ok(fuse_aff_weights(tape, w, f)?.1)
}

pub fn fuse_hadamard_vars(tape: &mut Tape<'_>, f: &FeatureVars) -> Result<Var> {
    let mut acc = f.0[0];
    for &v in &f.0[1..] {
        acc = tape.mul(acc, v)?;
    }
    Ok(acc)
}

fn bundle_vars<'a>(tape: &mut Tape<'a>, fb: &FeatureBundle) -> Result<FeatureVars> {
    let mut vars = Vec::with_capacity(6);
    for v in &fb.0 {
        vars.push(tape.constant(Tensor::new(&[1, v.len()], v.clone())?));
    }
    Ok(FeatureVars(vars.try_into().unwrap()))
}

/// Adaptive fusion of one feature bundle.
pub fn fuse_aff(w: &AffWeights, fb: &FeatureBundle) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = w.bind(&mut tape);
    let f = bundle_vars(&mut tape, fb)?;
    let out = fuse_aff_vars(&mut tape, &vars, &f)?;
    Ok(tape.value(out).data().to_vec())
}

/// Elementwise product of the six features.
pub fn fuse_hadamard(fb: &FeatureBundle) -> Vec<f64> {
    let mut out = fb.0[0].clone();
    for v in &fb.0[1..] {
        for (o, x) in out.iter_mut().zip(v) {
            *o *= x;
        }
    }
    out
}
