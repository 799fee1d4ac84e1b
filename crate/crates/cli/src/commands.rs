use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use specfield::brdf::{parse_merl, read_merl, read_sbrd, synth_spectral, write_merl, write_sbrd, AngleDims, MERL_DIMS};
use specfield::encoder::{train_encoder, EncoderPair};
use specfield::metrics::MetricReport;
use specfield::render::{eval_wavelengths, read_pfm, render, write_pfm, Pfm, RenderScene, SceneSpec, SpectralBrdf, SpectralImage};
use specfield::train::{fit_with, FitProgress, TrainConfig};
use specfield::{EncoderConfig, EncoderModel, FusionMode, MerlBrdf, SpectralBrdfTable, SstaModel, SyntheticSpec, WavelengthAxis};

use crate::{AblateArgs, Command, ConvertArgs, EvalArgs, Failure, FitArgs, GenerateArgs, RenderArgs, SynthArgs, TrainEncoderArgs, TrainFlags};

type Outcome = Result<(), Failure>;

fn data(context: impl std::fmt::Display) -> impl FnOnce(specfield::Error) -> Failure {
    move |e| Failure::Data(format!("{context}: {e}"))
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

fn parse_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, Failure> {
    serde_json::from_str(&read_text(path)?).map_err(|e| Failure::Data(format!("malformed {}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Data(format!("serialising {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

pub fn run(cmd: Command) -> Outcome {
    match cmd {
        Command::Convert(a) => convert(a),
        Command::Synth(a) => synth(a),
        Command::Fit(a) => fit(a),
        Command::TrainEncoder(a) => train_enc(a),
        Command::Generate(a) => generate(a),
        Command::Render(a) => render_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
    }
}

#[derive(Serialize)]
struct ChannelStats {
    min: f64,
    mean: f64,
    max: f64,
}

fn stats(values: impl Iterator<Item = f64>) -> ChannelStats {
    let (mut min, mut max, mut sum, mut n) = (f64::INFINITY, f64::NEG_INFINITY, 0.0, 0usize);
    for v in values {
        min = min.min(v);
        max = max.max(v);
        sum += v;
        n += 1;
    }
    if n == 0 {
        return ChannelStats { min: 0.0, mean: 0.0, max: 0.0 };
    }
    ChannelStats { min, mean: sum / n as f64, max }
}

fn convert(a: ConvertArgs) -> Outcome {
    let summary = if let Some(p) = &a.input.merl {
        let m = read_merl(p).map_err(data(format!("reading MERL {}", p.display())))?;
        let valid: Vec<usize> = (0..m.bins()).filter(|&b| m.is_valid(b)).collect();
        let ch = |c: usize| stats(valid.iter().map(|&b| m.reflectance(c, b)));
        json!({
            "format": "merl",
            "dims": m.dims(),
            "bins": m.bins(),
            "valid_bins": valid.len(),
            "red": ch(0),
            "green": ch(1),
            "blue": ch(2),
        })
    } else {
        let p = a.input.sbrd.as_ref().expect("clap requires one input");
        let t = read_sbrd(p).map_err(data(format!("reading SBRD {}", p.display())))?;
        let n = t.bins_per_wavelength();
        let per: Vec<_> = t
            .axis()
            .nodes()
            .enumerate()
            .map(|(l, lambda)| json!({ "lambda_nm": lambda, "stats": stats(t.data()[l * n..(l + 1) * n].iter().map(|&v| v as f64)) }))
            .collect();
        json!({
            "format": "sbrd",
            "name": t.name,
            "dims": t.dims(),
            "axis": t.axis(),
            "values": t.len(),
            "all": stats(t.data().iter().map(|&v| v as f64)),
            "per_wavelength": per,
        })
    };
    write_json(&a.out, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary).unwrap_or_default());
    Ok(())
}

#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SynthFile {
    name: String,
    material: SyntheticSpec,
    axis: WavelengthAxis,
    dims: AngleDims,
}

impl Default for SynthFile {
    fn default() -> Self {
        SynthFile { name: "synthetic".into(), material: SyntheticSpec::default(), axis: WavelengthAxis::default(), dims: MERL_DIMS }
    }
}

fn synth(a: SynthArgs) -> Outcome {
    let spec: SynthFile = match &a.spec {
        Some(p) => parse_json(p)?,
        None => SynthFile::default(),
    };
    if a.rgb_out.is_some() && spec.dims != MERL_DIMS {
        return Err(Failure::Data(format!("--rgb-out needs MERL dims {MERL_DIMS:?}, spec has {:?}", spec.dims)));
    }
    let table = synth_spectral(&spec.name, &spec.material, &spec.axis, spec.dims).map_err(data("synthesising table"))?;
    write_sbrd(&table, &a.out).map_err(data(format!("writing {}", a.out.display())))?;
    println!("wrote {} ({} x {:?})", a.out.display(), spec.axis.count, spec.dims);
    if let Some(p) = &a.rgb_out {
        fs::write(p, write_merl(&table.to_band_rgb())).map_err(|e| Failure::Data(format!("cannot write {}: {e}", p.display())))?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn train_config(flags: &TrainFlags) -> Result<TrainConfig, Failure> {
    let mut cfg = match &flags.config {
        Some(p) => TrainConfig::from_json(&read_text(p)?).map_err(data(format!("config {}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(v) = flags.seed {
        cfg.seed = v;
    }
    if let Some(v) = flags.lr {
        cfg.lr = v;
    }
    if let Some(v) = flags.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = flags.halve_every {
        cfg.halve_every = v;
    }
    if let Some(v) = flags.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = flags.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = flags.samples {
        cfg.samples_per_material = v;
    }
    if let Some(v) = flags.channels {
        cfg.channels = v;
    }
    if let Some(v) = flags.plane_dims {
        cfg.plane_dims = v;
    }
    if let Some(v) = flags.fusion {
        cfg.fusion = v.into();
    }
    if let Some(v) = flags.tv_weight {
        cfg.tv_weight = v;
    }
    cfg.validate().map_err(|e| Failure::Usage(format!("training options: {e}")))?;
    Ok(cfg)
}

fn load_merl(path: &Path, table: &SpectralBrdfTable) -> Result<MerlBrdf, Failure> {
    let file: PathBuf = if path.is_dir() { path.join(format!("{}.binary", table.name)) } else { path.to_path_buf() };
    let bytes = fs::read(&file).map_err(|e| Failure::Data(format!("cannot read MERL {}: {e}", file.display())))?;
    parse_merl(&bytes).map_err(data(format!("MERL {}", file.display())))
}

fn fit(a: FitArgs) -> Outcome {
    let cfg = train_config(&a.train)?;
    let table = read_sbrd(&a.sbrd).map_err(data(format!("reading SBRD {}", a.sbrd.display())))?;
    let rgb = a.merl.as_deref().map(|p| load_merl(p, &table)).transpose()?;
    let every = a.train.log_every;
    let model = fit_with(&table, rgb.as_ref(), &cfg, |p: &FitProgress| {
        if every > 0 && p.step % every == 0 {
            eprintln!("epoch {} step {} loss {:.4e} lr {:.2e}", p.epoch, p.step, p.report.total, p.report.lr);
        }
    })
    .map_err(data("training"))?;
    model.save(&a.out).map_err(data(format!("writing {}", a.out.display())))?;
    println!("wrote {} ({} parameters)", a.out.display(), model.parameter_count());
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    image: PathBuf,
    sbrd: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PairsFile {
    pairs: Vec<PairEntry>,
    #[serde(default)]
    encoder: EncoderConfig,
}

fn read_image(path: &Path) -> Result<specfield::Tensor, Failure> {
    let img = read_pfm(path).map_err(data(format!("reading image {}", path.display())))?;
    if img.channels != 3 {
        return Err(Failure::Data(format!("{} has {} channel(s); the encoder takes a three-channel preview", path.display(), img.channels)));
    }
    Ok(img.to_planar())
}

fn train_enc(a: TrainEncoderArgs) -> Outcome {
    let cfg = train_config(&a.train)?;
    let file: PairsFile = parse_json(&a.pairs)?;
    let tables = file
        .pairs
        .iter()
        .map(|p| read_sbrd(&p.sbrd).map_err(data(format!("reading SBRD {}", p.sbrd.display()))))
        .collect::<Result<Vec<_>, _>>()?;
    let images = file.pairs.iter().map(|p| read_image(&p.image)).collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<EncoderPair> = images.into_iter().zip(&tables).map(|(image, table)| EncoderPair { image, table }).collect();
    let every = a.train.log_every;
    let enc = train_encoder(&pairs, &cfg, &file.encoder, |step, reports| {
        if every > 0 && step % every == 0 {
            let losses: Vec<String> = reports.iter().map(|r| format!("{:.4e}", r.total)).collect();
            eprintln!("step {step} losses [{}]", losses.join(", "));
        }
    })
    .map_err(data("training encoder"))?;
    enc.save(&a.out).map_err(data(format!("writing {}", a.out.display())))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn generate(a: GenerateArgs) -> Outcome {
    let enc = EncoderModel::load(&a.encoder).map_err(data(format!("loading encoder {}", a.encoder.display())))?;
    let image = read_image(&a.image)?;
    let model = enc.generate(&image).map_err(data(format!("encoding {}", a.image.display())))?;
    model.save(&a.out).map_err(data(format!("writing {}", a.out.display())))?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn write_render(img: &SpectralImage, prefix: &str, exposure: f64) -> Outcome {
    let paths = img.write_all(prefix, exposure).map_err(data(format!("writing {prefix}_*")))?;
    let preview = format!("{prefix}_rgb.pfm");
    let pfm = Pfm::from_planar(&img.rgb_preview()).map_err(data("building preview"))?;
    write_pfm(&preview, &pfm).map_err(data(format!("writing {preview}")))?;
    for p in paths.iter().chain([&preview]) {
        println!("{p}");
    }
    Ok(())
}

fn render_cmd(a: RenderArgs) -> Outcome {
    let scene = match &a.scene {
        Some(p) => {
            if !p.exists() {
                return Err(Failure::Data(format!("scene file {} does not exist", p.display())));
            }
            SceneSpec::load(p).map_err(data(format!("scene {}", p.display())))?
        }
        None => RenderScene::eval_sphere(eval_wavelengths()),
    };
    let source: Box<dyn SpectralBrdf> = match (&a.source.model, &a.source.sbrd) {
        (Some(m), _) => Box::new(SstaModel::load(m).map_err(data(format!("loading model {}", m.display())))?),
        (None, Some(t)) => Box::new(read_sbrd(t).map_err(data(format!("reading SBRD {}", t.display())))?),
        (None, None) => unreachable!("clap requires a source"),
    };
    let img = render(&scene, source.as_ref()).map_err(data("rendering"))?;
    write_render(&img, &a.out, a.exposure)
}

/// `<name>_<lambda>nm.pfm` -> (name, lambda).
fn split_render_name(file: &str) -> Option<(String, f64)> {
    let stem = file.strip_suffix(".pfm")?;
    let (name, tail) = stem.rsplit_once('_')?;
    let lambda = tail.strip_suffix("nm")?.parse().ok()?;
    Some((name.to_string(), lambda))
}

fn collect_renders(dir: &Path) -> Result<BTreeMap<String, Vec<(f64, PathBuf)>>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::Data(format!("cannot list {}: {e}", dir.display())))?;
    let mut out: BTreeMap<String, Vec<(f64, PathBuf)>> = BTreeMap::new();
    for entry in entries.flatten() {
        let file = entry.file_name().to_string_lossy().into_owned();
        if let Some((name, lambda)) = split_render_name(&file) {
            out.entry(name).or_default().push((lambda, entry.path()));
        }
    }
    for v in out.values_mut() {
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn load_spectral(files: &[(f64, PathBuf)]) -> Result<SpectralImage, Failure> {
    let mut planes = Vec::new();
    let (mut w, mut h) = (0, 0);
    for (k, (_, p)) in files.iter().enumerate() {
        let img = read_pfm(p).map_err(data(format!("reading {}", p.display())))?;
        if k > 0 && (img.width, img.height) != (w, h) {
            return Err(Failure::Data(format!("{} is {}x{}, expected {w}x{h}", p.display(), img.width, img.height)));
        }
        (w, h) = (img.width, img.height);
        planes.push(img.luminance());
    }
    Ok(SpectralImage { width: w, height: h, wavelengths: files.iter().map(|f| f.0).collect(), planes, mask: vec![true; w * h] })
}

fn eval(a: EvalArgs) -> Outcome {
    let (ra, rb) = (collect_renders(&a.a)?, collect_renders(&a.b)?);
    if ra.is_empty() {
        return Err(Failure::Data(format!("no <name>_<lambda>nm.pfm renders in {}", a.a.display())));
    }
    let mut reports = BTreeMap::new();
    for (name, files) in &ra {
        let other = rb.get(name).ok_or_else(|| Failure::Data(format!("{} has renders named {name:?} but {} does not", a.a.display(), a.b.display())))?;
        let la: Vec<f64> = files.iter().map(|f| f.0).collect();
        let lb: Vec<f64> = other.iter().map(|f| f.0).collect();
        if la != lb {
            return Err(Failure::Data(format!("{name}: wavelengths differ ({la:?} vs {lb:?})")));
        }
        let report = MetricReport::compare(&load_spectral(files)?, &load_spectral(other)?).map_err(data(format!("comparing {name}")))?;
        println!("{name}\n{}", report.to_table());
        reports.insert(name.clone(), report);
    }
    write_json(&a.report, &reports)
}

fn ablate(a: AblateArgs) -> Outcome {
    let modes: Vec<FusionMode> = if a.fusion.is_empty() { vec![FusionMode::Aff, FusionMode::Hadamard] } else { a.fusion.iter().map(|&f| f.into()).collect() };
    let axis = WavelengthAxis::new(400.0, 1000.0, 9).map_err(data("axis"))?;
    let dims = [a.dims, a.dims, 2 * a.dims];
    let table = synth_spectral("synthetic", &SyntheticSpec::default(), &axis, dims).map_err(data("synthesising table"))?;
    let scene = RenderScene::eval_sphere(eval_wavelengths());
    let gt = render(&scene, &table).map_err(data("rendering reference"))?;
    let mut rows = Vec::new();
    for mode in modes {
        let cfg = TrainConfig {
            channels: a.channels,
            plane_dims: dims,
            batch_size: 256,
            lr: a.lr,
            seed: a.seed,
            fusion: mode,
            max_steps: Some(a.steps),
            epochs: 1000,
            samples_per_material: table.len(),
            ..TrainConfig::default()
        };
        cfg.validate().map_err(|e| Failure::Usage(format!("ablation options: {e}")))?;
        let model = fit_with(&table, None, &cfg, |_| {}).map_err(data(format!("training {mode:?}")))?;
        let img = render(&scene, &model).map_err(data("rendering"))?;
        let report = MetricReport::compare(&gt, &img).map_err(data("comparing"))?;
        let label = match mode {
            FusionMode::Aff => "aff",
            FusionMode::Hadamard => "hadamard",
        };
        println!("{label:<10} {:>8.2} dB  ssim {:.4}", report.mean_psnr_db(), report.mean_ssim);
        rows.push(json!({ "fusion": label, "psnr_db": report.mean_psnr_db(), "ssim": report.mean_ssim, "steps": a.steps, "seed": a.seed }));
    }
    if let Some(p) = &a.report {
        write_json(p, &rows)?;
    }
    Ok(())
}
