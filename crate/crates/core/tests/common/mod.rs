//! Finite-difference gradient suite shared by `gradients` and `acceptance`.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use specfield::encoder::{encode_vars, EncoderConfig, EncoderWeights};
use specfield::field::{plane_extents, project, project_rgb, FeatureVars, TriplaneSet};
use specfield::fusion::{default_grid, fuse_aff_vars, fuse_hadamard_vars, AffWeights};
use specfield::gradcheck::{check, CheckOptions, Closure, GradCheck, Objective};
use specfield::train::{loss_graph, ModelConfig, Sample, SampleBatch, SstaModel};
use specfield::{decoder::decode_vars, FusionMode, MlpWeights, OpKind, Result, RusinAngles, Tape, Tensor, Var, WavelengthAxis};

pub const TOLERANCE: f64 = 1e-3;
pub const OP_TOLERANCE: f64 = 1e-4;

pub struct CaseResult {
    pub name: String,
    pub kinds: Vec<OpKind>,
    pub check: GradCheck,
}

pub const ALL_KINDS: [OpKind; 24] = [
    OpKind::Leaf,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::MatMul,
    OpKind::AddBias,
    OpKind::Conv2d3x3,
    OpKind::Conv2d1x1,
    OpKind::Relu,
    OpKind::SoftmaxLastDim,
    OpKind::MeanReduce,
    OpKind::SumReduce,
    OpKind::Reshape,
    OpKind::BilinearSample2d,
    OpKind::ScalarScale,
    OpKind::Square,
    OpKind::Log1p,
    OpKind::Stack,
    OpKind::Mix,
    OpKind::TotalVariation,
    OpKind::ResizeNearest,
    OpKind::ResizeBilinear,
    OpKind::Slice,
    OpKind::ChannelLast,
];

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

/// Uniform in `±[0.2, 1]`, keeping relu inputs off the kink.
fn off_kink(shape: &[usize], seed: u64) -> Tensor {
    let mut r = rng(seed);
    let data = (0..shape.iter().product::<usize>())
        .map(|_| {
            let m: f64 = r.gen_range(0.2..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// `sum(x * w)` with fixed non-uniform weights, so every output entry matters.
pub fn weighted_sum(tape: &mut Tape<'_>, x: Var) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let w = Tensor::new(&shape, (0..n).map(|i| (0.7 * i as f64 + 0.3).sin()).collect())?;
    let w = tape.constant(w);
    let p = tape.mul(x, w)?;
    tape.sum(p)
}

fn sum_features(tape: &mut Tape<'_>, f: &FeatureVars) -> Result<Var> {
    let mut acc = weighted_sum(tape, f.0[0])?;
    for &v in &f.0[1..] {
        let s = weighted_sum(tape, v)?;
        acc = tape.add(acc, s)?;
    }
    Ok(acc)
}

fn run<O: Objective>(name: &str, obj: &O) -> CaseResult {
    run_with(name, obj, CheckOptions::default())
}

fn run_with<O: Objective>(name: &str, obj: &O, opts: CheckOptions) -> CaseResult {
    let mut tape = Tape::new();
    obj.record(&mut tape).unwrap_or_else(|e| panic!("{name}: {e}"));
    let kinds = tape.kinds();
    drop(tape);
    let check = check(obj, opts).unwrap_or_else(|e| panic!("{name}: {e}"));
    CaseResult { name: name.to_string(), kinds, check }
}

fn closure(name: &str, params: Vec<Tensor>, f: impl for<'a> Fn(&mut Tape<'a>, &[Var]) -> Result<Var> + Send + Sync + 'static) -> CaseResult {
    run(name, &Closure::new(params, f))
}

pub fn op_cases() -> Vec<CaseResult> {
    vec![
        closure("add", vec![uniform(&[3, 4], 1), uniform(&[3, 4], 2)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("sub", vec![uniform(&[3, 4], 3), uniform(&[3, 4], 4)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("mul", vec![uniform(&[3, 4], 5), uniform(&[3, 4], 6)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("matmul", vec![uniform(&[3, 4], 7), uniform(&[4, 2], 8)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("add_bias", vec![uniform(&[3, 4], 9), uniform(&[4], 10)], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("conv3x3", vec![uniform(&[2, 2, 5, 6], 11), uniform(&[3, 2, 3, 3], 12), uniform(&[3], 13)], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
            weighted_sum(t, y)
        }),
        closure("conv3x3_stride2", vec![uniform(&[1, 2, 7, 6], 14), uniform(&[3, 2, 3, 3], 15)], |t, v| {
            let y = t.conv2d(v[0], v[1], None, 2)?;
            weighted_sum(t, y)
        }),
        closure("conv1x1", vec![uniform(&[2, 3, 4, 4], 16), uniform(&[2, 3, 1, 1], 17), uniform(&[2], 18)], |t, v| {
            let y = t.conv2d(v[0], v[1], Some(v[2]), 1)?;
            weighted_sum(t, y)
        }),
        closure("relu", vec![off_kink(&[4, 5], 19)], |t, v| {
            let y = t.relu(v[0])?;
            weighted_sum(t, y)
        }),
        closure("softmax", vec![uniform(&[3, 5], 20)], |t, v| {
            let y = t.softmax_last(v[0])?;
            weighted_sum(t, y)
        }),
        closure("mean_axis", vec![uniform(&[3, 4, 2], 21)], |t, v| {
            let y = t.mean_axis(v[0], 1)?;
            weighted_sum(t, y)
        }),
        closure("mean_all", vec![uniform(&[3, 4], 22)], |t, v| {
            let s = t.square(v[0])?;
            t.mean(s)
        }),
        closure("sum_axis", vec![uniform(&[3, 4, 2], 23)], |t, v| {
            let y = t.sum_axis(v[0], 2)?;
            weighted_sum(t, y)
        }),
        closure("reshape", vec![uniform(&[3, 4], 24)], |t, v| {
            let y = t.reshape(v[0], &[2, 6])?;
            weighted_sum(t, y)
        }),
        closure("bilinear_sample", vec![uniform(&[4, 5, 3], 25)], |t, v| {
            let coords = vec![[0.1, 0.9], [0.5, 0.5], [0.0, 1.0], [0.33, 0.71], [0.99, 0.02], [1.0, 0.0]];
            let y = t.bilinear_sample(v[0], coords)?;
            weighted_sum(t, y)
        }),
        closure("scale", vec![uniform(&[5], 26)], |t, v| {
            let y = t.scale(v[0], -2.5)?;
            weighted_sum(t, y)
        }),
        closure("square", vec![uniform(&[5], 27)], |t, v| {
            let y = t.square(v[0])?;
            weighted_sum(t, y)
        }),
        closure("log1p", vec![uniform(&[5], 28).map(|x| x.abs() + 0.1)], |t, v| {
            let y = t.log1p(v[0])?;
            weighted_sum(t, y)
        }),
        closure("stack", vec![uniform(&[3, 2], 29), uniform(&[3, 2], 30), uniform(&[3, 2], 31)], |t, v| {
            let y = t.stack(v)?;
            weighted_sum(t, y)
        }),
        closure("mix", vec![uniform(&[3, 4], 32), uniform(&[3, 4, 2], 33)], |t, v| {
            let y = t.mix(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        closure("total_variation", vec![uniform(&[4, 5, 3], 34)], |t, v| t.total_variation(v[0])),
        closure("resize_nearest", vec![uniform(&[2, 3, 4], 35)], |t, v| {
            let y = t.resize_nearest(v[0], 5, 7)?;
            weighted_sum(t, y)
        }),
        closure("resize_bilinear", vec![uniform(&[2, 3, 4], 36)], |t, v| {
            let y = t.resize_bilinear(v[0], 6, 5)?;
            weighted_sum(t, y)
        }),
        closure("resize_bilinear_down", vec![uniform(&[2, 6, 7], 37)], |t, v| {
            let y = t.resize_bilinear(v[0], 3, 4)?;
            weighted_sum(t, y)
        }),
        closure("slice", vec![uniform(&[5, 3], 38)], |t, v| {
            let y = t.slice(v[0], 1, 3)?;
            weighted_sum(t, y)
        }),
        closure("channel_last", vec![uniform(&[3, 4, 5], 39)], |t, v| {
            let y = t.channel_last(v[0])?;
            weighted_sum(t, y)
        }),
    ]
}

fn small_axis() -> WavelengthAxis {
    WavelengthAxis::new(400.0, 700.0, 4).unwrap()
}

fn normalized_coords(n: usize, seed: u64) -> Vec<[f64; 4]> {
    let mut r = rng(seed);
    (0..n).map(|_| [r.gen(), r.gen(), r.gen(), r.gen()]).collect()
}

#[derive(Clone)]
struct ProjectCase {
    planes: TriplaneSet,
    rgb: bool,
}

impl Objective for ProjectCase {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.planes.planes_mut().iter_mut().collect()
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let pv = self.planes.bind(tape);
        let f = if self.rgb {
            let c: Vec<[f64; 3]> = normalized_coords(9, 41).iter().map(|u| [u[0], u[1], u[2]]).collect();
            project_rgb(tape, &pv, &c, self.planes.axis().count)?
        } else {
            project(tape, &pv, &normalized_coords(9, 40))?
        };
        Ok((sum_features(tape, &f)?, pv.0.to_vec()))
    }
}

#[derive(Clone)]
struct FuseCase {
    aff: Option<AffWeights>,
    features: Vec<Tensor>,
}

impl Objective for FuseCase {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.aff.as_mut().map(|a| a.tensors_mut()).unwrap_or_default();
        v.extend(self.features.iter_mut());
        v
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let av = self.aff.as_ref().map(|a| a.bind(tape));
        let fv: Vec<Var> = self.features.iter().map(|f| tape.param(f)).collect();
        let feats = FeatureVars(fv.clone().try_into().unwrap());
        let fused = match &av {
            Some(a) => fuse_aff_vars(tape, a, &feats)?,
            None => fuse_hadamard_vars(tape, &feats)?,
        };
        let mut vars = av.map(|a| a.all()).unwrap_or_default();
        vars.extend(fv);
        Ok((weighted_sum(tape, fused)?, vars))
    }
}

#[derive(Clone)]
struct DecodeCase {
    mlp: MlpWeights,
    input: Tensor,
}

impl Objective for DecodeCase {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.mlp.tensors_mut();
        v.push(&mut self.input);
        v
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let mv = self.mlp.bind(tape);
        let x = tape.param(&self.input);
        let y = decode_vars(tape, &mv, x)?;
        let mut vars = mv.all();
        vars.push(x);
        Ok((weighted_sum(tape, y)?, vars))
    }
}

#[derive(Clone)]
struct LossCase {
    model: SstaModel,
    batch: SampleBatch,
}

impl Objective for LossCase {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.model.tensors_mut()
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let (pv, hv) = self.model.bind(tape);
        let l = loss_graph(tape, &pv, &hv, &self.batch, self.model.axis(), 2.0)?;
        let mut vars = pv.0.to_vec();
        vars.extend(hv.all());
        Ok((l.total, vars))
    }
}

#[derive(Clone)]
struct EncodeCase {
    weights: EncoderWeights,
    image: Tensor,
    extents: [[usize; 2]; 6],
}

impl Objective for EncodeCase {
    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.weights.tensors_mut();
        v.push(&mut self.image);
        v
    }

    fn record<'a>(&'a self, tape: &mut Tape<'a>) -> Result<(Var, Vec<Var>)> {
        let layers = self.weights.bind(tape);
        let img = tape.param(&self.image);
        let planes = encode_vars(tape, &layers, &self.weights.config, img, self.weights.channels, self.extents)?;
        let f = FeatureVars(planes.0);
        let mut vars: Vec<Var> = layers.iter().flat_map(|&(w, b)| [w, b]).collect();
        vars.push(img);
        Ok((sum_features(tape, &f)?, vars))
    }
}

fn mixed_batch(axis: &WavelengthAxis) -> SampleBatch {
    let mut r = rng(50);
    let samples = (0..12)
        .map(|i| {
            let angles = RusinAngles::new(r.gen_range(0.0..1.5), r.gen_range(0.0..1.5), r.gen_range(0.0..3.1));
            let lambda = (i % 3 != 0).then(|| axis.lambda_min + r.gen::<f64>() * (axis.lambda_max - axis.lambda_min));
            Sample { angles, lambda, target: r.gen_range(0.0..0.8) }
        })
        .collect();
    SampleBatch { samples }
}

pub fn composite_cases() -> Vec<CaseResult> {
    let axis = small_axis();
    let dims = [4, 3, 5];
    let planes = TriplaneSet::from_planes(
        3,
        dims,
        axis,
        plane_extents(dims, axis.count).map(|[r, c]| uniform(&[r, c, 3], 60 + r as u64 * 7 + c as u64)),
    )
    .unwrap();
    let c = 4;
    let features: Vec<Tensor> = (0..6).map(|k| uniform(&[5, c], 70 + k)).collect();

    let mut model = SstaModel::init(ModelConfig::new(4, dims, axis, FusionMode::Aff), 80).unwrap();
    // Lift the planes off their small init so the decoder sees varied input.
    for (k, p) in model.planes.planes_mut().iter_mut().enumerate() {
        *p = uniform(p.shape(), 90 + k as u64);
    }

    let ecfg = EncoderConfig { widths: [3, 4, 4, 5], size: 12, input: 16 };
    let weights = EncoderWeights::init(ecfg, 4, 95).unwrap();

    vec![
        run("project", &ProjectCase { planes: planes.clone(), rgb: false }),
        run("project_rgb", &ProjectCase { planes, rgb: true }),
        run("fuse_aff", &FuseCase { aff: Some(AffWeights::init(c, default_grid(c), 71).unwrap()), features: features.clone() }),
        run("fuse_hadamard", &FuseCase { aff: None, features }),
        run("decode", &DecodeCase { mlp: MlpWeights::init(c, 72), input: uniform(&[6, c], 73) }),
        run("loss_stack", &LossCase { model, batch: mixed_batch(&axis) }),
        // A few deep relu inputs sit within 1e-5 of the kink; a smaller step
        // keeps the symmetric difference on one side of it.
        run_with(
            "encode",
            &EncodeCase { weights, image: uniform(&[3, 16, 16], 96).map(f64::abs), extents: plane_extents(dims, axis.count) },
            CheckOptions { step: 1e-6, ..CheckOptions::default() },
        ),
    ]
}

pub fn missing_kinds(results: &[CaseResult]) -> Vec<OpKind> {
    ALL_KINDS.iter().copied().filter(|k| !results.iter().any(|r| r.kinds.contains(k))).collect()
}

/// Largest angular error (radians) over `n` random coordinates pushed
/// through `from_rusin` then `to_rusin`; `phi_d` compared modulo pi.
pub fn coord_round_trip(n: usize, seed: u64) -> f64 {
    use specfield::coords::{from_rusin, to_rusin};
    use std::f64::consts::{FRAC_PI_2, PI};
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < n {
        let c = RusinAngles::new(r.gen_range(0.0..FRAC_PI_2), r.gen_range(0.0..FRAC_PI_2), r.gen_range(0.0..PI));
        let phi_h = r.gen_range(-PI..PI);
        let Ok((wi, wo)) = from_rusin(c, phi_h) else { continue };
        let back = to_rusin(wi, wo).expect("valid pair");
        let dp = (back.phi_d - c.phi_d).abs();
        worst = worst.max((back.theta_h - c.theta_h).abs()).max((back.theta_d - c.theta_d).abs()).max(dp.min(PI - dp));
        done += 1;
    }
    worst
}
