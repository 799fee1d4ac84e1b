//! μ-law targets, losses, sampling, Adam and the fitting loop.

mod adam;
mod config;
mod container;
mod loss;
mod model;
mod mulaw;
mod sample;
mod step;

pub use adam::{lr_at_epoch, Adam, AdamParams};
pub use config::TrainConfig;
pub use container::{read_container, read_container_from, write_container, write_container_to, Container, SSTA_MAGIC, SSTA_VERSION};
pub use loss::{loss_rgb, loss_spec, loss_tv, mse_vars, tv_vars};
pub use model::{predict_vars, Fusion, HeadVars, Heads, ModelConfig, SstaModel, MODEL_KIND};
pub use mulaw::{mulaw, mulaw_inv, MuLaw};
pub use sample::{sample_rgb, sample_spectral, Domain, Sample, SampleBatch};
pub use step::{fit, fit_with, loss_graph, model_config, report, train_step, FitProgress, LossReport, LossVars};
