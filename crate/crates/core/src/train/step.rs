use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::{lr_at_epoch, Adam};
use super::config::TrainConfig;
use super::loss::{mse_vars, tv_vars};
use super::model::{predict_vars, HeadVars, ModelConfig, SstaModel};
use super::sample::{sample_rgb, sample_spectral, Sample, SampleBatch};
use crate::brdf::{MerlBrdf, SpectralBrdfTable};
use crate::coords::{normalize_angles, normalize_coord, WavelengthAxis};
use crate::error::{Error, Result};
use crate::field::{self, PlaneVars};
use crate::tape::{Tape, Var};

/// Loss terms of one step. Absent terms had no samples in the batch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub total: f64,
    pub spec: Option<f64>,
    pub rgb: Option<f64>,
    pub tv: f64,
    pub lr: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub spec: Option<Var>,
    pub rgb: Option<Var>,
    pub tv: Var,
}

/// Records `L_spec + tv_weight * L_TV + L_RGB` for a batch.
pub fn loss_graph(
    tape: &mut Tape<'_>,
    planes: &PlaneVars,
    heads: &HeadVars,
    batch: &SampleBatch,
    axis: &WavelengthAxis,
    tv_weight: f64,
) -> Result<LossVars> {
    if batch.is_empty() {
        return Err(Error::Config("empty training batch".into()));
    }
    let (mut su, mut st, mut ru, mut rt) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for s in &batch.samples {
        match s.lambda {
            Some(l) => {
                su.push(normalize_coord(&s.angles.with_lambda(l), axis));
                st.push(s.target);
            }
            None => {
                ru.push(normalize_angles(&s.angles));
                rt.push(s.target);
            }
        }
    }
    let spec = if su.is_empty() {
        None
    } else {
        let f = field::project(tape, planes, &su)?;
        let pred = predict_vars(tape, heads, &f)?;
        Some(mse_vars(tape, pred, st)?)
    };
    let rgb = if ru.is_empty() {
        None
    } else {
        let f = field::project_rgb(tape, planes, &ru, axis.count)?;
        let pred = predict_vars(tape, heads, &f)?;
        Some(mse_vars(tape, pred, rt)?)
    };
    let tv = tv_vars(tape, planes)?;
    let mut total = tape.scale(tv, tv_weight)?;
    for term in [spec, rgb].into_iter().flatten() {
        total = tape.add(total, term)?;
    }
    Ok(LossVars { total, spec, rgb, tv })
}

/// Reads the loss terms off the tape, failing on the first non-finite one.
pub fn report(tape: &Tape<'_>, l: &LossVars, lr: f64) -> Result<LossReport> {
    let read = |v: Var, term: &'static str| {
        let x = tape.value(v).item();
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Error::Diverged { term, value: x })
        }
    };
    Ok(LossReport {
        spec: l.spec.map(|v| read(v, "spectral loss")).transpose()?,
        rgb: l.rgb.map(|v| read(v, "rgb loss")).transpose()?,
        tv: read(l.tv, "tv loss")?,
        total: read(l.total, "total loss")?,
        lr,
    })
}

/// One Adam update of every model parameter.
pub fn train_step(model: &mut SstaModel, batch: &SampleBatch, cfg: &TrainConfig, lr: f64, adam: &mut Adam) -> Result<LossReport> {
    let (rep, grads) = {
        let mut tape = Tape::new();
        let (planes, heads) = model.bind(&mut tape);
        let loss = loss_graph(&mut tape, &planes, &heads, batch, &model.config.axis, cfg.tv_weight)?;
        let rep = report(&tape, &loss, lr)?;
        let mut grads = tape.backward(loss.total)?;
        let params: Vec<Var> = planes.0.iter().copied().chain(heads.all()).collect();
        (rep, params.into_iter().map(|v| grads.take(v)).collect::<Vec<_>>())
    };
    let refs: Vec<_> = grads.iter().map(Option::as_ref).collect();
    adam.step(lr, model.tensors_mut(), &refs);
    Ok(rep)
}

#[derive(Clone, Copy, Debug)]
pub struct FitProgress {
    pub epoch: usize,
    /// Spectral batches completed so far.
    pub step: usize,
    pub report: LossReport,
}

pub fn model_config(cfg: &TrainConfig, axis: WavelengthAxis) -> ModelConfig {
    let mut m = ModelConfig::new(cfg.channels, cfg.plane_dims, axis, cfg.fusion);
    m.mu = cfg.mu;
    m
}

/// Fits a model to one spectral table, optionally with an auxiliary RGB
/// table of the same material.
pub fn fit(spectral: &SpectralBrdfTable, rgb: Option<&MerlBrdf>, cfg: &TrainConfig) -> Result<SstaModel> {
    fit_with(spectral, rgb, cfg, |_| {})
}

/// [`fit`] with a progress callback invoked after every spectral batch.
///
/// Each epoch is one shuffled pass over the spectral samples. With RGB data
/// every spectral step is followed by one RGB step of the same batch size,
/// cycling through the RGB samples.
pub fn fit_with(
    spectral: &SpectralBrdfTable,
    rgb: Option<&MerlBrdf>,
    cfg: &TrainConfig,
    mut progress: impl FnMut(&FitProgress),
) -> Result<SstaModel> {
    cfg.validate()?;
    let mut model = SstaModel::init(model_config(cfg, *spectral.axis()), cfg.seed)?;
    let mu = model.config.mulaw();
    let n_spec = cfg.samples_per_material.min(spectral.len());
    let mut spec = sample_spectral(spectral, n_spec, cfg.seed.wrapping_add(1), mu)?.samples;
    let mut rgb_samples: Vec<Sample> = match rgb {
        Some(m) => {
            let valid = (0..m.bins()).filter(|&b| m.is_valid(b)).count();
            sample_rgb(m, cfg.rgb_samples.unwrap_or(cfg.samples_per_material).min(valid), cfg.seed.wrapping_add(2), mu)?.samples
        }
        None => Vec::new(),
    };
    if spec.is_empty() {
        return Ok(model);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(3));
    let mut adam = Adam::new(cfg.adam());
    let mut step = 0usize;
    let mut rgb_cursor = 0usize;
    let limit = cfg.max_steps.unwrap_or(usize::MAX);
    'epochs: for epoch in 0..cfg.epochs {
        let lr = lr_at_epoch(cfg.lr, epoch, cfg.halve_every);
        spec.shuffle(&mut rng);
        for chunk in spec.chunks(cfg.batch_size) {
            if step >= limit {
                break 'epochs;
            }
            let batch = SampleBatch { samples: chunk.to_vec() };
            let report = train_step(&mut model, &batch, cfg, lr, &mut adam)?;
            if !rgb_samples.is_empty() {
                let mut samples = Vec::with_capacity(cfg.batch_size);
                while samples.len() < cfg.batch_size.min(rgb_samples.len()) {
                    if rgb_cursor == 0 {
                        rgb_samples.shuffle(&mut rng);
                    }
                    samples.push(rgb_samples[rgb_cursor]);
                    rgb_cursor = (rgb_cursor + 1) % rgb_samples.len();
                }
                train_step(&mut model, &SampleBatch { samples }, cfg, lr, &mut adam)?;
            }
            step += 1;
            progress(&FitProgress { epoch, step, report });
        }
    }
    Ok(model)
}
