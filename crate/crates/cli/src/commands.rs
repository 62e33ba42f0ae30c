use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Args, ValueEnum};
use serde::Serialize;

use exgs::io::{
    load_dataset, read_cameras, read_checkpoint, read_spec, save_image, save_plane, write_checkpoint, write_dataset,
    write_float_dump, Checkpoint, Dataset,
};
use exgs::metrics::{psnr, ssim};
use exgs::scene::{init_scene_graph, shift_camera, CameraView, GroundTruth, SceneGraph, SyntheticSceneSpec};
use exgs::splat::{certainty_modulation, composite_nodes, RasterConfig, RenderOptions};
use exgs::train::{
    BiasProvider, IdentityProvider, IterationLog, MaskedNoiseProvider, PseudoGtProvider, TrainConfig, Trainer,
};

use crate::manifest::RunManifest;

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text).map_err(|e| exgs::Error::io(path, e))?;
    Ok(())
}

fn read_config(path: &Path) -> exgs::Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| exgs::Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| exgs::Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

pub fn synth(spec_path: Option<&Path>, out: &Path) -> anyhow::Result<()> {
    let spec = match spec_path {
        Some(p) => read_spec(p).with_context(|| format!("reading scene spec {}", p.display()))?,
        None => SyntheticSceneSpec::default(),
    };
    spec.validate()?;
    let manifest = RunManifest::start("synth", spec_path, Some(spec.seed), out)?;
    let result = write_dataset(out, &spec).map(|ds| {
        log::info!(
            "wrote {} views, {} shift sets and {} probes to {}",
            ds.views.len(),
            ds.shifted.len(),
            ds.probes.len(),
            out.display()
        );
    });
    manifest.finish(result.map_err(Into::into))
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ProviderKind {
    /// True render of the synthetic scene at the shifted camera.
    Identity,
    /// True render plus a constant color offset (`--bias`).
    Bias,
    /// Noise where uncertainty exceeds `--noise-threshold`, the render elsewhere.
    Noise,
    /// No provider; training fails once shifted views are needed.
    None,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config JSON; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset directory written by `exgs synth`.
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Start from the desk-scale schedule (300 / 350 / 400) instead of the full one.
    #[arg(long)]
    pub desk: bool,
    /// Continue from a checkpoint; the metrics CSV is appended to.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop before this iteration instead of at the configured total.
    #[arg(long)]
    pub until: Option<usize>,
    #[arg(long, value_enum, default_value_t = ProviderKind::Identity)]
    pub provider: ProviderKind,
    #[arg(long, default_value_t = 0.1)]
    pub bias: f64,
    #[arg(long, default_value_t = 0.5)]
    pub noise_threshold: f64,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn make_provider(args: &TrainArgs, spec: &SyntheticSceneSpec, seed: u64) -> exgs::Result<Option<Box<dyn PseudoGtProvider>>> {
    let identity = || -> exgs::Result<Box<dyn PseudoGtProvider>> { Ok(Box::new(IdentityProvider::new(GroundTruth::new(spec)?))) };
    Ok(match args.provider {
        ProviderKind::Identity => Some(identity()?),
        ProviderKind::Bias => Some(Box::new(BiasProvider {
            inner: identity()?,
            bias: [args.bias; 3],
        })),
        ProviderKind::Noise => Some(Box::new(MaskedNoiseProvider {
            threshold: args.noise_threshold,
            seed,
        })),
        ProviderKind::None => None,
    })
}

pub fn train(args: &TrainArgs) -> anyhow::Result<()> {
    let mut config = match &args.config {
        Some(p) => read_config(p).with_context(|| format!("reading training config {}", p.display()))?,
        None if args.desk => TrainConfig::desk(),
        None => TrainConfig::default(),
    };
    if let Some(s) = args.seed {
        config.seed = s;
    }
    config.validate()?;
    let manifest = RunManifest::start("train", args.config.as_deref(), Some(config.seed), &args.out)?;
    let result = train_inner(args, config);
    manifest.finish(result)
}

fn train_inner(args: &TrainArgs, config: TrainConfig) -> anyhow::Result<()> {
    let ds = load_dataset(&args.dataset).with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let provider = make_provider(args, &ds.spec, config.seed)?;
    let mut trainer = match &args.resume {
        Some(p) => {
            let ck = read_checkpoint(p).with_context(|| format!("reading checkpoint {}", p.display()))?;
            let mut t = Trainer::new(ck.scene, Some(ck.encoder), config.clone())?;
            t.iteration = ck.iteration;
            log::info!("resuming at iteration {}", ck.iteration);
            t
        }
        None => {
            let scene = init_scene_graph(&ds.views, &ds.spec, &config.init)?;
            Trainer::new(scene, None, config.clone())?
        }
    };
    write_json(&args.out.join("config.json"), &config)?;

    let csv_path = args.out.join("metrics.csv");
    let append = args.resume.is_some() && csv_path.is_file();
    let mut csv = OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&csv_path)
        .map_err(|e| exgs::Error::io(&csv_path, e))?;
    if !append {
        writeln!(csv, "{}", IterationLog::CSV_HEADER)?;
    }

    let end = args.until.unwrap_or(config.total_iters).min(config.total_iters);
    let phase_a_end = config.stage_iters[0];
    let mut write_err = None;
    let mut log_row = |row: &IterationLog| {
        if let Err(e) = writeln!(csv, "{}", row.csv_row()) {
            write_err.get_or_insert(e);
        }
    };
    let p = provider.as_deref();
    if trainer.iteration < phase_a_end {
        trainer.run_until(phase_a_end.min(end), &ds.views, p, &mut log_row)?;
        if trainer.iteration == phase_a_end {
            save(&args.out.join("checkpoint_phase_a.ckpt"), &trainer)?;
        }
    }
    trainer.run_until(end, &ds.views, p, &mut log_row)?;
    if let Some(e) = write_err {
        return Err(exgs::Error::io(&csv_path, e).into());
    }
    save(&args.out.join("checkpoint.ckpt"), &trainer)?;
    log::info!("stopped at iteration {}", trainer.iteration);
    Ok(())
}

fn save(path: &Path, t: &Trainer) -> anyhow::Result<()> {
    let ck = Checkpoint {
        iteration: t.iteration,
        scene: t.scene.clone(),
        encoder: t.encoder.clone(),
    };
    write_checkpoint(path, &ck)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Camera file: JSON array of {fx, fy, cx, cy, width, height, pose}.
    #[arg(long)]
    pub cameras: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the uncertainty map (grayscale PNG and float dump).
    #[arg(long)]
    pub uncertainty: bool,
    /// Lateral shift applied to every camera before rendering, meters.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub shift: f64,
    /// Scale each Gaussian's opacity by its view certainty.
    #[arg(long)]
    pub modulate_opacity: bool,
}

pub fn render(args: &RenderArgs) -> anyhow::Result<()> {
    let manifest = RunManifest::start("render", None, None, &args.out)?;
    let result = render_inner(args);
    manifest.finish(result)
}

fn render_inner(args: &RenderArgs) -> anyhow::Result<()> {
    let ck = read_checkpoint(&args.checkpoint).with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let cams = read_cameras(&args.cameras).with_context(|| format!("reading cameras {}", args.cameras.display()))?;
    for (i, cam) in cams.iter().enumerate() {
        let cam = shift_camera(cam, args.shift)?;
        let opts = RenderOptions {
            raster: RasterConfig::default(),
            modulation: args.modulate_opacity.then(|| certainty_modulation(&ck.scene, &cam)),
        };
        let frame = composite_nodes(&ck.scene, &cam, &opts)?;
        save_image(&args.out.join(format!("color_{i:04}.png")), &frame.color)?;
        if args.uncertainty {
            save_plane(&args.out.join(format!("uncertainty_{i:04}.png")), &frame.uncertainty)?;
            write_float_dump(&args.out.join(format!("uncertainty_{i:04}.bin")), &frame.uncertainty)?;
        }
    }
    log::info!("rendered {} cameras to {}", cams.len(), args.out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory for report.json and report.schema.json.
    #[arg(long)]
    pub out: PathBuf,
    /// Shifts to evaluate (repeatable); all shifts in the dataset when omitted.
    #[arg(long = "shift", allow_negative_numbers = true)]
    pub shifts: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ImageScores {
    pub views: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ShiftScores {
    pub shift: f64,
    #[serde(flatten)]
    pub scores: ImageScores,
}

#[derive(Clone, Debug, Serialize)]
pub struct UncertaintyStats {
    pub train_mean: f64,
    pub probe_mean: Option<f64>,
    /// `probe_mean - train_mean`.
    pub separation: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub iteration: usize,
    pub original: ImageScores,
    pub shifted: Vec<ShiftScores>,
    pub uncertainty: UncertaintyStats,
}

/// JSON schema of [`EvalReport`], written next to every report.
pub const REPORT_SCHEMA: &str = include_str!("report.schema.json");

fn score(scene: &SceneGraph, views: &[CameraView]) -> exgs::Result<(ImageScores, f64)> {
    let opts = RenderOptions::default();
    let (mut p, mut s, mut u) = (0.0, 0.0, 0.0);
    for v in views {
        let f = composite_nodes(scene, &v.camera, &opts)?;
        p += psnr(&f.color, &v.image);
        s += ssim(&f.color, &v.image);
        u += f.uncertainty.mean();
    }
    let n = views.len().max(1) as f64;
    Ok((
        ImageScores {
            views: views.len(),
            psnr: p / n,
            ssim: s / n,
        },
        u / n,
    ))
}

pub fn eval(args: &EvalArgs) -> anyhow::Result<()> {
    let manifest = RunManifest::start("eval", None, None, &args.out)?;
    let result = eval_inner(args);
    manifest.finish(result)
}

fn eval_inner(args: &EvalArgs) -> anyhow::Result<()> {
    let ck = read_checkpoint(&args.checkpoint).with_context(|| format!("reading checkpoint {}", args.checkpoint.display()))?;
    let ds: Dataset = load_dataset(&args.dataset).with_context(|| format!("loading dataset {}", args.dataset.display()))?;
    let shifts: Vec<f64> = match args.shifts.is_empty() {
        true => ds.shifted.iter().map(|s| s.shift).collect(),
        false => args.shifts.clone(),
    };
    let mut shifted = Vec::new();
    for s in shifts {
        let set = ds.shift_set(s).ok_or_else(|| {
            exgs::Error::invalid("shift", format!("dataset {} has no ground truth for shift {s}", args.dataset.display()))
        })?;
        shifted.push(ShiftScores {
            shift: s,
            scores: score(&ck.scene, &set.views)?.0,
        });
    }
    let (original, train_u) = score(&ck.scene, &ds.views)?;
    let probe_u = match ds.probes.is_empty() {
        true => None,
        false => Some(score(&ck.scene, &ds.probes)?.1),
    };
    let report = EvalReport {
        checkpoint: args.checkpoint.clone(),
        dataset: args.dataset.clone(),
        iteration: ck.iteration,
        original,
        shifted,
        uncertainty: UncertaintyStats {
            train_mean: train_u,
            probe_mean: probe_u,
            separation: probe_u.map(|p| p - train_u),
        },
    };
    write_json(&args.out.join("report.json"), &report)?;
    let schema_path = args.out.join("report.schema.json");
    std::fs::write(&schema_path, REPORT_SCHEMA).map_err(|e| exgs::Error::io(&schema_path, e))?;
    log::info!(
        "original PSNR {:.2} dB, SSIM {:.4}; uncertainty separation {:?}",
        report.original.psnr,
        report.original.ssim,
        report.uncertainty.separation
    );
    Ok(())
}
