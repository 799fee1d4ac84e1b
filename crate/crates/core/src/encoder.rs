//! Image-to-triplane encoder.
//!
//! Four stride-2 3x3 convolutions take a `3 x H x W` sphere preview down to
//! a small feature map. Four stages of nearest-neighbour upsampling and 3x3
//! convolution bring it back up to `6C x S x S`; stage `k` upsamples to
//! `ceil(S / 2^(3 - k))`. The output splits into six groups of `C`
//! channels, one per plane, each bilinearly resized to its plane's extent.
//! Fusion and decoder weights are shared by every material.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::brdf::SpectralBrdfTable;
use crate::error::{Error, Result};
use crate::field::{plane_extents, PlaneVars, TriplaneSet};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::train::{
    loss_graph, lr_at_epoch, model_config, read_container, read_container_from, report, sample_spectral, write_container,
    write_container_to, Adam, Container, Heads, LossReport, ModelConfig, Sample, SampleBatch, SstaModel, TrainConfig,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    /// Channel widths of the four downsampling convolutions.
    pub widths: [usize; 4],
    /// Side of the square map the decoder produces before resizing.
    pub size: usize,
    /// Side of the square input image.
    pub input: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { widths: [16, 32, 64, 128], size: 96, input: 64 }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.contains(&0) || self.size < 2 || self.input < 2 {
            return Err(Error::Config(format!("invalid encoder config {self:?}")));
        }
        Ok(())
    }

    /// Upsampled side after decoder stage `k`.
    pub fn stage_size(&self, k: usize) -> usize {
        self.size.div_ceil(1 << (3 - k))
    }
}

/// Conv kernels and biases: four encoder stages then four decoder stages.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderWeights {
    pub config: EncoderConfig,
    pub channels: usize,
    pub layers: Vec<(Tensor, Tensor)>,
}

impl EncoderWeights {
    fn layer_shapes(cfg: &EncoderConfig, channels: usize) -> Vec<(usize, usize)> {
        let w = cfg.widths;
        vec![(3, w[0]), (w[0], w[1]), (w[1], w[2]), (w[2], w[3]), (w[3], w[2]), (w[2], w[1]), (w[1], w[0]), (w[0], 6 * channels)]
    }

    /// Kernels uniform in `+-1/sqrt(9 c_in)`, biases zero.
    pub fn init(config: EncoderConfig, channels: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = Self::layer_shapes(&config, channels)
            .into_iter()
            .map(|(ci, co)| (Tensor::uniform(&[co, ci, 3, 3], 1.0 / ((9 * ci) as f64).sqrt(), &mut rng), Tensor::zeros(&[co])))
            .collect();
        Ok(EncoderWeights { config, channels, layers })
    }

    pub fn zeros(config: EncoderConfig, channels: usize) -> Self {
        let layers = Self::layer_shapes(&config, channels)
            .into_iter()
            .map(|(ci, co)| (Tensor::zeros(&[co, ci, 3, 3]), Tensor::zeros(&[co])))
            .collect();
        EncoderWeights { config, channels, layers }
    }

    pub fn from_parts(config: EncoderConfig, channels: usize, tensors: Vec<Tensor>) -> Result<Self> {
        let shapes = Self::layer_shapes(&config, channels);
        if tensors.len() != 2 * shapes.len() {
            return Err(Error::Format(format!("encoder needs {} tensors, got {}", 2 * shapes.len(), tensors.len())));
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        for (ci, co) in shapes {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != [co, ci, 3, 3] || b.shape() != [co] {
                return Err(Error::shape("encoder", format!("{:?} / {:?}, expected [{co}, {ci}, 3, 3]", w.shape(), b.shape())));
            }
            layers.push((w, b));
        }
        Ok(EncoderWeights { config, channels, layers })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> Vec<(Var, Var)> {
        self.layers.iter().map(|(w, b)| (tape.param(w), tape.param(b))).collect()
    }
}

/// `6C x S x S` map -> six channel-last planes of the given extents.
pub fn split_planes(tape: &mut Tape<'_>, map: Var, channels: usize, extents: [[usize; 2]; 6]) -> Result<PlaneVars> {
    let mut planes = Vec::with_capacity(6);
    for (k, [r, c]) in extents.into_iter().enumerate() {
        let group = tape.slice(map, k * channels, channels)?;
        let resized = tape.resize_bilinear(group, r, c)?;
        planes.push(tape.channel_last(resized)?);
    }
    Ok(PlaneVars(planes.try_into().unwrap()))
}

/// Records the encoder on `tape`; `image` is `[3, H, W]`.
pub fn encode_vars(tape: &mut Tape<'_>, layers: &[(Var, Var)], cfg: &EncoderConfig, image: Var, channels: usize, extents: [[usize; 2]; 6]) -> Result<PlaneVars> {
    let s = tape.value(image).shape().to_vec();
    if s != [3, cfg.input, cfg.input] {
        return Err(Error::shape("encode", format!("image {s:?}, expected [3, {}, {}]", cfg.input, cfg.input)));
    }
    let mut x = tape.reshape(image, &[1, 3, cfg.input, cfg.input])?;
    for &(w, b) in &layers[..4] {
        x = tape.conv2d(x, w, Some(b), 2)?;
        x = tape.relu(x)?;
    }
    for (k, &(w, b)) in layers[4..].iter().enumerate() {
        let sh = tape.value(x).shape().to_vec();
        let side = cfg.stage_size(k);
        let flat = tape.reshape(x, &sh[1..])?;
        let up = tape.resize_nearest(flat, side, side)?;
        x = tape.reshape(up, &[1, sh[1], side, side])?;
        x = tape.conv2d(x, w, Some(b), 1)?;
        if k < 3 {
            x = tape.relu(x)?;
        }
    }
    let map = tape.reshape(x, &[6 * channels, cfg.size, cfg.size])?;
    split_planes(tape, map, channels, extents)
}

/// Encoder plus shared fusion/decoder heads.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderModel {
    pub model: ModelConfig,
    pub encoder: EncoderWeights,
    pub heads: Heads,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    kind: String,
    model: ModelConfig,
    encoder: EncoderConfig,
}

pub const ENCODER_KIND: &str = "ssta-encoder";

impl EncoderModel {
    pub fn init(model: ModelConfig, encoder: EncoderConfig, seed: u64) -> Result<Self> {
        let heads = Heads::init(&model, seed)?;
        let encoder = EncoderWeights::init(encoder, model.channels, seed ^ 0xE4C0)?;
        Ok(EncoderModel { model, encoder, heads })
    }

    fn extents(&self) -> [[usize; 2]; 6] {
        plane_extents(self.model.dims, self.model.axis.count)
    }

    /// Planes for one `[3, H, W]` image with values in `[0, 1]`.
    pub fn encode(&self, image: &Tensor) -> Result<TriplaneSet> {
        let mut tape = Tape::new();
        let layers = self.encoder.bind(&mut tape);
        let img = tape.constant_ref(image);
        let planes = encode_vars(&mut tape, &layers, &self.encoder.config, img, self.model.channels, self.extents())?;
        let planes = planes.0.map(|v| tape.value(v).clone());
        TriplaneSet::from_planes(self.model.channels, self.model.dims, self.model.axis, planes)
    }

    /// A standalone model for one image.
    pub fn generate(&self, image: &Tensor) -> Result<SstaModel> {
        SstaModel::from_parts(self.model.clone(), self.encode(image)?, self.heads.clone())
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = self.encoder.tensors_mut();
        v.extend(self.heads.tensors_mut());
        v
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> =
            self.encoder.tensors().into_iter().enumerate().map(|(k, t)| (format!("encoder/{k:02}"), t)).collect();
        v.extend(self.heads.named_tensors());
        v
    }

    fn header(&self) -> serde_json::Value {
        serde_json::to_value(FileHeader { kind: ENCODER_KIND.into(), model: self.model.clone(), encoder: self.encoder.config.clone() })
            .expect("config serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_container(path, &self.header(), &self.named_tensors())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        write_container_to(&mut buf, &self.header(), &self.named_tensors())?;
        Ok(buf)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&read_container(path)?)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_container(&read_container_from(bytes)?)
    }

    fn from_container(c: &Container) -> Result<Self> {
        let h: FileHeader = serde_json::from_value(c.config.clone())?;
        if h.kind != ENCODER_KIND {
            return Err(Error::Format(format!("expected a {ENCODER_KIND} file, found {:?}", h.kind)));
        }
        h.model.validate()?;
        h.encoder.validate()?;
        let encoder = EncoderWeights::from_parts(h.encoder, h.model.channels, c.section("encoder/"))?;
        let heads = Heads::load_section(&h.model, c)?;
        Ok(EncoderModel { model: h.model, encoder, heads })
    }
}

/// One training pair: a sphere preview and its spectral table.
pub struct EncoderPair<'a> {
    pub image: Tensor,
    pub table: &'a SpectralBrdfTable,
}

/// Sum over materials of each material's loss stack, the per-material
/// reports and the parameter handles in [`EncoderModel::tensors_mut`] order.
pub fn encoder_loss<'a>(
    tape: &mut Tape<'a>,
    enc: &'a EncoderModel,
    images: &[Var],
    batches: &[SampleBatch],
    tv_weight: f64,
) -> Result<(Var, Vec<LossReport>, Vec<Var>)> {
    let layers = enc.encoder.bind(tape);
    let heads = enc.heads.bind(tape);
    let mut params: Vec<Var> = layers.iter().flat_map(|&(w, b)| [w, b]).collect();
    params.extend(heads.all());
    let mut total = None;
    let mut reports = Vec::new();
    for (&img, batch) in images.iter().zip(batches) {
        let planes = encode_vars(tape, &layers, &enc.encoder.config, img, enc.model.channels, enc.extents())?;
        let l = loss_graph(tape, &planes, &heads, batch, &enc.model.axis, tv_weight)?;
        reports.push(report(tape, &l, 0.0)?);
        total = Some(match total {
            None => l.total,
            Some(t) => tape.add(t, l.total)?,
        });
    }
    total.map(|t| (t, reports, params)).ok_or_else(|| Error::Config("no encoder training pairs".into()))
}

/// Trains encoder and shared heads on `pairs` with the losses of a direct
/// fit. Every step draws one batch per material; an epoch is one pass over
/// each material's samples.
pub fn train_encoder(
    pairs: &[EncoderPair<'_>],
    cfg: &TrainConfig,
    enc_cfg: &EncoderConfig,
    mut progress: impl FnMut(usize, &[LossReport]),
) -> Result<EncoderModel> {
    cfg.validate()?;
    let first = pairs.first().ok_or_else(|| Error::Config("train-encoder needs at least one pair".into()))?;
    let axis = *first.table.axis();
    if pairs.iter().any(|p| *p.table.axis() != axis) {
        return Err(Error::Config("all training tables must share one wavelength axis".into()));
    }
    let mut enc = EncoderModel::init(model_config(cfg, axis), enc_cfg.clone(), cfg.seed)?;
    let mu = enc.model.mulaw();
    let mut samples: Vec<Vec<Sample>> = pairs
        .iter()
        .enumerate()
        .map(|(k, p)| Ok(sample_spectral(p.table, cfg.samples_per_material.min(p.table.len()), cfg.seed.wrapping_add(11 + k as u64), mu)?.samples))
        .collect::<Result<_>>()?;
    let per_epoch = samples.iter().map(|s| s.len().div_ceil(cfg.batch_size)).max().unwrap_or(0);
    let total_steps = cfg.max_steps.unwrap_or(usize::MAX).min(cfg.epochs * per_epoch);
    if total_steps == 0 {
        return Ok(enc);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut adam = Adam::new(cfg.adam());
    for step in 0..total_steps {
        let epoch = step / per_epoch;
        let within = step % per_epoch;
        if within == 0 {
            samples.iter_mut().for_each(|s| s.shuffle(&mut rng));
        }
        let lr = lr_at_epoch(cfg.lr, epoch, cfg.halve_every);
        let batches: Vec<SampleBatch> = samples
            .iter()
            .map(|s| {
                let start = (within * cfg.batch_size) % s.len();
                SampleBatch { samples: s[start..(start + cfg.batch_size).min(s.len())].to_vec() }
            })
            .collect();
        let (mut reports, grads) = {
            let mut tape = Tape::new();
            let images: Vec<Var> = pairs.iter().map(|p| tape.constant_ref(&p.image)).collect();
            let (total, reports, vars) = encoder_loss(&mut tape, &enc, &images, &batches, cfg.tv_weight)?;
            let mut grads = tape.backward(total)?;
            (reports, vars.into_iter().map(|v| grads.take(v)).collect::<Vec<_>>())
        };
        reports.iter_mut().for_each(|r| r.lr = lr);
        let refs: Vec<_> = grads.iter().map(Option::as_ref).collect();
        adam.step(lr, enc.tensors_mut(), &refs);
        progress(step + 1, &reports);
    }
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coords::WavelengthAxis;
    use crate::fusion::FusionMode;

    fn mini() -> (ModelConfig, EncoderConfig) {
        let axis = WavelengthAxis::new(400.0, 1000.0, 3).unwrap();
        (ModelConfig::new(4, [4, 3, 5], axis, FusionMode::Aff), EncoderConfig { widths: [2, 3, 4, 5], size: 12, input: 16 })
    }

    fn image(seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[3, 16, 16], 0.5, &mut rng).map(|v| v + 0.5)
    }

    #[test]
    fn stage_sizes() {
        let c = EncoderConfig::default();
        assert_eq!((0..4).map(|k| c.stage_size(k)).collect::<Vec<_>>(), vec![12, 24, 48, 96]);
        let c = EncoderConfig { size: 12, ..c };
        assert_eq!((0..4).map(|k| c.stage_size(k)).collect::<Vec<_>>(), vec![2, 3, 6, 12]);
    }

    #[test]
    fn zero_weights_give_zero_planes() {
        let (m, e) = mini();
        let enc = EncoderModel { encoder: EncoderWeights::zeros(e, 4), heads: Heads::init(&m, 0).unwrap(), model: m };
        let tp = enc.encode(&image(1)).unwrap();
        assert!(tp.planes().iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn seeds_differ_and_encode_is_deterministic() {
        let (m, e) = mini();
        let a = EncoderModel::init(m.clone(), e.clone(), 1).unwrap();
        let b = EncoderModel::init(m, e, 2).unwrap();
        let img = image(3);
        assert_eq!(a.encode(&img).unwrap(), a.encode(&img).unwrap());
        assert_ne!(a.encode(&img).unwrap(), b.encode(&img).unwrap());
    }

    #[test]
    fn constant_map_gives_constant_planes() {
        let (m, _) = mini();
        let mut tape = Tape::new();
        let map = tape.constant(Tensor::full(&[24, 12, 12], 0.7));
        let planes = split_planes(&mut tape, map, 4, plane_extents(m.dims, m.axis.count)).unwrap();
        for p in planes.0 {
            assert!(tape.value(p).data().iter().all(|&v| (v - 0.7).abs() < 1e-15));
        }
    }

    #[test]
    fn wrong_image_shape() {
        let (m, e) = mini();
        let enc = EncoderModel::init(m, e, 0).unwrap();
        assert!(enc.encode(&Tensor::zeros(&[3, 8, 8])).is_err());
    }

    #[test]
    fn save_load_and_zero_steps() {
        let (m, e) = mini();
        let axis = m.axis;
        let table = crate::brdf::synth_spectral("t", &Default::default(), &axis, [4, 3, 5]).unwrap();
        let cfg = TrainConfig { channels: 4, plane_dims: [4, 3, 5], epochs: 0, ..TrainConfig::default() };
        let pairs = [EncoderPair { image: image(1), table: &table }];
        let enc = train_encoder(&pairs, &cfg, &e, |_, _| {}).unwrap();
        assert_eq!(enc, EncoderModel::init(m, e, cfg.seed).unwrap());
        let back = EncoderModel::from_bytes(&enc.to_bytes().unwrap()).unwrap();
        assert_eq!(back.model, enc.model);
        assert_eq!(back.encoder.config, enc.encoder.config);
    }

    #[test]
    fn training_lowers_loss() {
        let (_, e) = mini();
        let axis = WavelengthAxis::new(400.0, 1000.0, 3).unwrap();
        let table = crate::brdf::synth_spectral("t", &Default::default(), &axis, [4, 3, 5]).unwrap();
        let cfg = TrainConfig { channels: 4, plane_dims: [4, 3, 5], epochs: 60, batch_size: 60, lr: 1e-2, ..TrainConfig::default() };
        let pairs = [EncoderPair { image: image(1), table: &table }];
        let mut hist = Vec::new();
        train_encoder(&pairs, &cfg, &e, |_, r| hist.push(r[0].spec.unwrap())).unwrap();
        assert!(hist.last().unwrap() < &(0.5 * hist[0]), "{} -> {}", hist[0], hist.last().unwrap());
    }
}
