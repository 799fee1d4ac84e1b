use std::path::Path;

use serde::{Deserialize, Serialize};

use super::container::{read_container, read_container_from, write_container, write_container_to, Container};
use super::mulaw::MuLaw;
use crate::brdf::AngleDims;
use crate::coords::{normalize_angles, normalize_coord, RusinAngles, RusinCoord, WavelengthAxis};
use crate::decoder::{decode_vars, MlpVars, MlpWeights};
use crate::error::{Error, Result};
use crate::field::{self, init_triplanes, FeatureVars, TriplaneSet, PLANE_NAMES};
use crate::fusion::{default_grid, fuse_aff_vars, fuse_hadamard_vars, AffVars, AffWeights, FusionMode};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Queries evaluated per tape during inference.
const INFERENCE_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub channels: usize,
    pub dims: AngleDims,
    pub axis: WavelengthAxis,
    pub fusion: FusionMode,
    /// `(H, W)` map the adaptive fusion reshapes a feature into.
    pub grid: (usize, usize),
    pub mu: f64,
}

impl ModelConfig {
    pub fn new(channels: usize, dims: AngleDims, axis: WavelengthAxis, fusion: FusionMode) -> Self {
        ModelConfig { channels, dims, axis, fusion, grid: default_grid(channels), mu: MuLaw::default().mu }
    }

    pub fn validate(&self) -> Result<()> {
        self.axis.validate()?;
        MuLaw::new(self.mu)?;
        if self.grid.0 * self.grid.1 != self.channels {
            return Err(Error::Config(format!("C = {} is not {} x {}", self.channels, self.grid.0, self.grid.1)));
        }
        Ok(())
    }

    pub fn mulaw(&self) -> MuLaw {
        MuLaw { mu: self.mu }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Fusion {
    Aff(AffWeights),
    Hadamard,
}

/// Fusion and decoder weights. These are per material for a direct fit and
/// shared across materials when planes come from the image encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub fusion: Fusion,
    pub mlp: MlpWeights,
}

#[derive(Clone, Debug)]
pub struct HeadVars {
    pub fusion: Option<AffVars>,
    pub mlp: MlpVars,
}

impl HeadVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = self.fusion.as_ref().map(AffVars::all).unwrap_or_default();
        v.extend(self.mlp.all());
        v
    }
}

impl Heads {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let fusion = match config.fusion {
            FusionMode::Aff => Fusion::Aff(AffWeights::init(config.channels, config.grid, seed ^ 0xA55A)?),
            FusionMode::Hadamard => Fusion::Hadamard,
        };
        Ok(Heads { fusion, mlp: MlpWeights::init(config.channels, seed ^ 0x5EED) })
    }

    pub fn mode(&self) -> FusionMode {
        match self.fusion {
            Fusion::Aff(_) => FusionMode::Aff,
            Fusion::Hadamard => FusionMode::Hadamard,
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v = Vec::new();
        if let Fusion::Aff(w) = &self.fusion {
            v.extend(w.tensors().into_iter().enumerate().map(|(k, t)| (format!("fusion/{k:02}"), t)));
        }
        v.extend(self.mlp.tensors().into_iter().enumerate().map(|(k, t)| (format!("mlp/{k:02}"), t)));
        v
    }

    /// Same order as [`HeadVars::all`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v = match &mut self.fusion {
            Fusion::Aff(w) => w.tensors_mut(),
            Fusion::Hadamard => Vec::new(),
        };
        v.extend(self.mlp.tensors_mut());
        v
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> HeadVars {
        let fusion = match &self.fusion {
            Fusion::Aff(w) => Some(w.bind(tape)),
            Fusion::Hadamard => None,
        };
        HeadVars { fusion, mlp: self.mlp.bind(tape) }
    }

    fn from_container(config: &ModelConfig, c: &Container) -> Result<Self> {
        let fusion = match config.fusion {
            FusionMode::Aff => Fusion::Aff(AffWeights::from_parts(config.grid, c.section("fusion/"))?),
            FusionMode::Hadamard => Fusion::Hadamard,
        };
        let mlp = MlpWeights::from_parts(c.section("mlp/"))?;
        if mlp.input_dim() != config.channels {
            return Err(Error::shape("mlp", format!("input {} vs C = {}", mlp.input_dim(), config.channels)));
        }
        Ok(Heads { fusion, mlp })
    }
}

/// Fused features -> decoded μ-law predictions `[N]`.
pub fn predict_vars(tape: &mut Tape<'_>, heads: &HeadVars, f: &FeatureVars) -> Result<Var> {
    let fused = match &heads.fusion {
        Some(w) => fuse_aff_vars(tape, w, f)?,
        None => fuse_hadamard_vars(tape, f)?,
    };
    decode_vars(tape, &heads.mlp, fused)
}

/// A fitted spectral BRDF: tri-planes plus fusion and decoder weights.
#[derive(Clone, Debug, PartialEq)]
pub struct SstaModel {
    pub config: ModelConfig,
    pub planes: TriplaneSet,
    pub heads: Heads,
}

#[derive(Serialize, Deserialize)]
struct FileHeader {
    kind: String,
    model: ModelConfig,
}

pub const MODEL_KIND: &str = "ssta-model";

impl SstaModel {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let heads = Heads::init(&config, seed)?;
        let planes = init_triplanes(config.channels, config.dims, config.axis, seed)?;
        Ok(SstaModel { config, planes, heads })
    }

    pub fn from_parts(config: ModelConfig, planes: TriplaneSet, heads: Heads) -> Result<Self> {
        config.validate()?;
        if planes.channels() != config.channels || planes.dims() != config.dims || *planes.axis() != config.axis {
            return Err(Error::Config("planes do not match the model configuration".into()));
        }
        if heads.mode() != config.fusion || heads.mlp.input_dim() != config.channels {
            return Err(Error::Config("heads do not match the model configuration".into()));
        }
        Ok(SstaModel { config, planes, heads })
    }

    pub fn axis(&self) -> &WavelengthAxis {
        &self.config.axis
    }

    pub fn parameter_count(&self) -> usize {
        self.planes.parameter_count() + self.heads.parameter_count()
    }

    /// Same order as the tape handles from [`SstaModel::bind`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut v: Vec<&mut Tensor> = self.planes.planes_mut().iter_mut().collect();
        v.extend(self.heads.tensors_mut());
        v
    }

    pub fn bind<'a>(&'a self, tape: &mut Tape<'a>) -> (field::PlaneVars, HeadVars) {
        (self.planes.bind(tape), self.heads.bind(tape))
    }

    /// μ-law predictions at spectral coordinates.
    pub fn predict(&self, coords: &[RusinCoord]) -> Result<Vec<f64>> {
        let axis = self.config.axis;
        let u: Vec<[f64; 4]> = coords.iter().map(|c| normalize_coord(c, &axis)).collect();
        self.predict_normalized(&u)
    }

    pub fn predict_normalized(&self, u: &[[f64; 4]]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(u.len());
        for chunk in u.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let (planes, heads) = self.bind(&mut tape);
            let f = field::project(&mut tape, &planes, chunk)?;
            let y = predict_vars(&mut tape, &heads, &f)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// μ-law predictions from wavelength-averaged spectral features.
    pub fn predict_rgb(&self, angles: &[RusinAngles]) -> Result<Vec<f64>> {
        let u: Vec<[f64; 3]> = angles.iter().map(normalize_angles).collect();
        let mut out = Vec::with_capacity(u.len());
        for chunk in u.chunks(INFERENCE_CHUNK) {
            let mut tape = Tape::new();
            let (planes, heads) = self.bind(&mut tape);
            let f = field::project_rgb(&mut tape, &planes, chunk, self.config.axis.count)?;
            let y = predict_vars(&mut tape, &heads, &f)?;
            out.extend_from_slice(tape.value(y).data());
        }
        Ok(out)
    }

    /// Linear reflectance: predictions clamped at zero, then expanded.
    pub fn reflectance(&self, coords: &[RusinCoord]) -> Result<Vec<f64>> {
        let mu = self.config.mulaw();
        Ok(self.predict(coords)?.into_iter().map(|p| mu.expand(p.max(0.0))).collect())
    }

    pub fn eval(&self, angles: RusinAngles, lambda: f64) -> Result<f64> {
        self.config.axis.check(lambda)?;
        Ok(self.reflectance(&[angles.with_lambda(lambda)])?[0])
    }

    fn header(&self) -> serde_json::Value {
        serde_json::to_value(FileHeader { kind: MODEL_KIND.into(), model: self.config.clone() }).expect("config serializes")
    }

    fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> =
            PLANE_NAMES.iter().zip(self.planes.planes()).map(|(n, t)| (format!("planes/{n}"), t)).collect();
        v.extend(self.heads.named_tensors());
        v
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

    pub fn from_container(c: &Container) -> Result<Self> {
        let header: FileHeader = serde_json::from_value(c.config.clone())?;
        if header.kind != MODEL_KIND {
            return Err(Error::Format(format!("expected a {MODEL_KIND} file, found {:?}", header.kind)));
        }
        let config = header.model;
        config.validate()?;
        let planes: Vec<Tensor> = c.section("planes/");
        let planes: [Tensor; 6] =
            planes.try_into().map_err(|p: Vec<Tensor>| Error::Format(format!("expected 6 planes, found {}", p.len())))?;
        let planes = TriplaneSet::from_planes(config.channels, config.dims, config.axis, planes)?;
        let heads = Heads::from_container(&config, c)?;
        SstaModel::from_parts(config, planes, heads)
    }
}

impl Heads {
    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub(crate) fn load_section(config: &ModelConfig, c: &Container) -> Result<Self> {
        Self::from_container(config, c)
    }
}
