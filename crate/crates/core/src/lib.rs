//! Spectral BRDFs as dual tri-plane neural fields.

pub mod brdf;
pub mod coords;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod field;
pub mod fusion;
pub mod gradcheck;
pub mod metrics;
pub mod render;
pub mod tape;
pub mod tensor;
pub mod train;

pub use brdf::{MerlBrdf, SpectralBrdfTable, SyntheticSpec};
pub use coords::{RusinAngles, RusinCoord, Vec3, WavelengthAxis};
pub use error::{Error, Result};
pub use field::{FeatureBundle, TriplaneSet};
pub use fusion::{AffWeights, FusionMode};
pub use decoder::MlpWeights;
pub use tape::{Grads, OpKind, Tape, Var};
pub use tensor::Tensor;
pub use encoder::{EncoderConfig, EncoderModel};
pub use metrics::MetricReport;
pub use render::{render, RenderScene, SpectralImage};
pub use train::{fit, MuLaw, SstaModel, TrainConfig};
