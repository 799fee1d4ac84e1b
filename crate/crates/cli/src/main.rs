//! `specfield`: fit, generate, render and evaluate spectral BRDF fields.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

use specfield::FusionMode;

#[derive(Parser, Debug)]
#[command(name = "specfield", version, about = "Spectral BRDFs as tri-plane neural fields")]
#[command(after_help = "Exit status: 0 on success, 1 on usage errors, 2 on data errors.\n\
SPECFIELD_THREADS caps the worker threads used by training, rendering and evaluation.")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Summarise a MERL binary or SBRD table as JSON statistics.
    #[command(long_about = "Summarise a MERL binary or SBRD table.\n\n\
MERL: three i32 dims (90, 90, 180) then R, G, B blocks of f64.\n\
SBRD: \"SBRD\" | u32 version=1 | u32 M | u32 dims x3 | f32 lambda_min | f32 lambda_max | u32 name_len | name | f32 payload.\n\
The output is a JSON object with dimensions, valid-bin counts and per-channel min/mean/max.")]
    Convert(ConvertArgs),
    /// Write a synthetic spectral table (SBRD) from a JSON description.
    #[command(long_about = "Write a synthetic spectral table.\n\n\
spec.json (every key optional):\n\
  {\"name\": \"synthetic\",\n   \"material\": {\"diffuse_peak\", \"diffuse_center\", \"diffuse_width\",\n                \"specular_strength\", \"specular_exponent\", \"specular_tilt\"},\n   \"axis\": {\"lambda_min\": 400, \"lambda_max\": 1000, \"count\": 39},\n   \"dims\": [90, 90, 180]}")]
    Synth(SynthArgs),
    /// Fit a tri-plane model to a spectral table, optionally with an RGB table.
    #[command(long_about = "Fit a tri-plane model to an SBRD table and write an SSTA container.\n\n\
--config takes a JSON object with any of: lr, beta1, beta2, eps, batch_size, epochs,\n\
halve_every, tv_weight, fusion (\"aff\"|\"hadamard\"), seed, samples_per_material,\n\
rgb_samples, channels, plane_dims, mu, max_steps. Flags override the file.\n\
--merl accepts a MERL binary or a directory holding <table name>.binary.")]
    Fit(FitArgs),
    /// Train the image encoder on (preview image, spectral table) pairs.
    #[command(long_about = "Train the image-to-triplane encoder.\n\n\
pairs.json: {\"pairs\": [{\"image\": \"a_rgb.pfm\", \"sbrd\": \"a.sbrd\"}, ...],\n\
             \"encoder\": {\"widths\": [16, 32, 64, 128], \"size\": 96, \"input\": 64}}\n\
Images are three-channel PFM previews as written by `render` (<prefix>_rgb.pfm);\n\
every table must share one wavelength axis. Training flags as for `fit`.")]
    TrainEncoder(TrainEncoderArgs),
    /// Generate a tri-plane model from a preview image with a trained encoder.
    Generate(GenerateArgs),
    /// Render a model or table into per-wavelength PFM/PNG images.
    #[command(long_about = "Render per-wavelength images.\n\n\
Writes <out>_<lambda>nm.pfm and .png for each wavelength plus a three-channel\n\
preview <out>_rgb.pfm (the encoder input format).\n\n\
scene.json (every key but light optional):\n\
  {\"width\": 64, \"height\": 64, \"wavelengths\": [400, 475, ...],\n\
   \"geometry\": {\"type\": \"sphere\"} | {\"type\": \"mesh\", \"obj\": \"bunny.obj\"},\n\
   \"light\": {\"type\": \"distant\", \"direction\": [0.4, 0.5, 1.0], \"irradiance\": 1.0}\n\
          | {\"type\": \"envmap\", \"pfm\": \"sky.pfm\" | \"radiance\": 1.0, \"scale\": 1.0, \"supersample\": 2}}\n\
Paths inside the scene resolve relative to the scene file. Without --scene the\n\
64x64 sphere under the default distant light at nine wavelengths is used.")]
    Render(RenderArgs),
    /// Compare two directories of per-wavelength PFM renders.
    #[command(long_about = "Compare renders wavelength by wavelength.\n\n\
Every <name>_<lambda>nm.pfm in --a must have a counterpart of the same name in --b.\n\
PSNR uses the --a image's maximum as peak; SSIM uses an 11x11 Gaussian window.\n\
The report is JSON with per-wavelength psnr/ssim and their means.")]
    Eval(EvalArgs),
    /// Compare AFF and Hadamard fusion on a synthetic material.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct ConvertInput {
    /// MERL binary to summarise.
    #[arg(long)]
    pub merl: Option<PathBuf>,
    /// SBRD table to summarise.
    #[arg(long)]
    pub sbrd: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct ConvertArgs {
    #[command(flatten)]
    pub input: ConvertInput,
    /// Where to write the JSON summary.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// JSON material description; the default material when omitted.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Output SBRD path.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the three-band RGB reduction as a MERL binary (MERL dims only).
    #[arg(long)]
    pub rgb_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FusionArg {
    Aff,
    Hadamard,
}

impl From<FusionArg> for FusionMode {
    fn from(f: FusionArg) -> Self {
        match f {
            FusionArg::Aff => FusionMode::Aff,
            FusionArg::Hadamard => FusionMode::Hadamard,
        }
    }
}

/// Training options; each flag overrides the same key of `--config`.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// JSON training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub halve_every: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Stop after this many spectral batches.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Spectral samples drawn per material.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Feature channels per plane.
    #[arg(long)]
    pub channels: Option<usize>,
    /// Plane resolution as theta_h,theta_d,phi_d.
    #[arg(long, value_parser = parse_dims, value_name = "H,D,P")]
    pub plane_dims: Option<[usize; 3]>,
    #[arg(long, value_enum)]
    pub fusion: Option<FusionArg>,
    #[arg(long)]
    pub tv_weight: Option<f64>,
    /// Print the loss every N steps (0 = quiet).
    #[arg(long, default_value_t = 500)]
    pub log_every: usize,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    /// Spectral table to fit.
    #[arg(long)]
    pub sbrd: PathBuf,
    /// Auxiliary RGB measurement for joint training.
    #[arg(long)]
    pub merl: Option<PathBuf>,
    /// Output SSTA path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct TrainEncoderArgs {
    /// JSON list of (image, table) pairs.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Output SSTA path.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub train: TrainFlags,
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Trained encoder.
    #[arg(long)]
    pub encoder: PathBuf,
    /// Three-channel PFM preview of the material.
    #[arg(long)]
    pub image: PathBuf,
    /// Output SSTA path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
#[group(required = true, multiple = false)]
pub struct RenderSource {
    /// Fitted or generated model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Spectral table, rendered directly.
    #[arg(long)]
    pub sbrd: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[command(flatten)]
    pub source: RenderSource,
    /// JSON scene description.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Output prefix.
    #[arg(long)]
    pub out: String,
    /// Linear scale applied before PNG tone mapping.
    #[arg(long, default_value_t = 1.0)]
    pub exposure: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Reference renders.
    #[arg(long)]
    pub a: PathBuf,
    /// Test renders.
    #[arg(long)]
    pub b: PathBuf,
    /// JSON report path.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Fusion modes to run; both when omitted.
    #[arg(long, value_enum)]
    pub fusion: Vec<FusionArg>,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 16)]
    pub channels: usize,
    /// Angular resolution d; planes use [d, d, 2d].
    #[arg(long, default_value_t = 24)]
    pub dims: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Optional JSON report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

fn parse_dims(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<usize> = s.split(',').map(|t| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"))).collect::<Result<_, _>>()?;
    parts.try_into().map_err(|p: Vec<usize>| format!("expected three comma-separated sizes, got {}", p.len()))
}

/// A failure with its exit status.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Data(m) => f.write_str(m),
        }
    }
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("SPECFIELD_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("SPECFIELD_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| Failure::Usage(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let result = init_threads().and_then(|_| commands::run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
