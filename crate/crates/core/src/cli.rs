//! Command-line front end. Every subcommand prints one JSON summary line
//! (`metrics` prints one line per metric) and writes files under `--out`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::decoder::DecoderConfig;
use crate::embedding::EmbedConfig;
use crate::error::{Error, Result};
use crate::io::{self, Checkpoint, RunConfig, SynthKind, VideoBuffer};
use crate::metrics;
use crate::model::{Model, ModelConfig};
use crate::sampling::PatchSpec;
use crate::tasks::{self, NoiseKind, NoiseSpec};
use crate::tensor::Tensor;
use crate::training::{self, BlurConfig};

pub const CHECKPOINT: &str = "model.pnrv";
pub const TRAIN_LOG: &str = "train_log.jsonl";

#[derive(Parser, Debug)]
#[command(name = "polyvid", version, about = "Patch-wise polynomial neural video representation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a model to a frame directory.
    Train(TrainArgs),
    /// Decode every frame of a checkpoint.
    Reconstruct(ReconstructArgs),
    /// Prune a checkpoint and fine-tune it.
    Compress(CompressArgs),
    /// Decode at an integer multiple of the training resolution.
    Superres(SuperresArgs),
    /// Decode at arbitrary times and score held-out frames.
    Interpolate(InterpolateArgs),
    /// Corrupt a video, fit a model to it and score against the clean video.
    Denoise(DenoiseArgs),
    /// Compare two frame directories.
    Metrics(MetricsArgs),
    /// Write a procedural test video.
    Synth(SynthArgs),
    /// Check the training-loss gradient against finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Hold out every fourth frame, overriding the manifest's mask.
    #[arg(long)]
    holdout: bool,
}

#[derive(Args, Debug)]
struct ReconstructArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Apply the configured post-processing blur.
    #[arg(long)]
    blur: bool,
}

#[derive(Args, Debug)]
struct CompressArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Fraction of weight entries to zero.
    #[arg(long)]
    rho: f64,
    /// Fine-tuning epochs after pruning; 0 skips fine-tuning.
    #[arg(long, default_value_t = 0)]
    epochs: usize,
}

#[derive(Args, Debug)]
struct SuperresArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    factor: usize,
    /// Ground truth at the target resolution, for scoring.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InterpolateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Ground truth whose manifest marks the held-out frames.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Score with every fourth frame held out instead of the manifest's mask.
    #[arg(long)]
    holdout: bool,
    /// Comma-separated times in [0, 1]; defaults to every frame time.
    #[arg(long, value_delimiter = ',')]
    times: Vec<f64>,
}

#[derive(Args, Debug)]
struct DenoiseArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    video: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "salt_pepper")]
    noise: String,
    #[arg(long, default_value_t = 0.05)]
    sigma: f64,
    #[arg(long, default_value_t = 0.05)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct MetricsArgs {
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    kind: String,
    #[arg(long)]
    frames: usize,
    /// Square frame size; `--height`/`--width` override it.
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    /// Number of parameter entries to perturb.
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

/// Runs the CLI on `argv` (including the program name) and returns the exit
/// code: 0 on success, 1 on a failed run, 2 on a usage error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command) -> Result<Vec<Value>> {
    match cmd {
        Command::Train(a) => train(a),
        Command::Reconstruct(a) => reconstruct(a),
        Command::Compress(a) => compress(a),
        Command::Superres(a) => superres(a),
        Command::Interpolate(a) => interpolate(a),
        Command::Denoise(a) => denoise(a),
        Command::Metrics(a) => metrics_cmd(a),
        Command::Synth(a) => synth(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
    .map(|v| match v {
        Value::Array(lines) => lines,
        one => vec![one],
    })
}

fn raw_blur(blur: &BlurConfig) -> BlurConfig {
    BlurConfig {
        enabled: false,
        ..blur.clone()
    }
}

fn write_frames(frames: Vec<Tensor>, source: &str, dir: &Path) -> Result<VideoBuffer> {
    let buf = VideoBuffer::new(frames, source)?;
    io::save_video(&buf, dir)?;
    Ok(buf)
}

/// Fits a fresh model and writes the checkpoint and training log.
fn fit(run: &RunConfig, video: &VideoBuffer, seen: &[bool], out: &Path) -> Result<(Model, training::TrainLog)> {
    let (t, h, w) = video.dims();
    let spec = run.patch.resolve(t, h, w)?;
    let mut model = Model::new(run.model_config(spec), run.train.seed)?;
    let log = training::train(&mut model, &video.frames, Some(seen), &run.train)?;
    fs::create_dir_all(out)?;
    io::write_atomic(&out.join(TRAIN_LOG), log.to_string().as_bytes())?;
    let ck = Checkpoint {
        model,
        train: run.train.clone(),
    };
    io::save_checkpoint(&ck, &out.join(CHECKPOINT))?;
    Ok((ck.model, log))
}

fn train(a: TrainArgs) -> Result<Value> {
    let run = RunConfig::load(&a.config)?;
    let video = io::load_video(&a.video)?;
    let seen = if a.holdout {
        tasks::split_seen(video.len())
    } else {
        video.manifest.seen_mask.clone()
    };
    let (model, log) = fit(&run, &video, &seen, &a.out)?;
    let last = log.last().cloned();
    Ok(json!({
        "task": "train",
        "steps": log.steps,
        "params": model.parameter_count(),
        "loss": last.as_ref().map(|r| r.loss),
        "psnr": last.as_ref().map(|r| r.psnr),
        "psnr_blur": last.as_ref().map(|r| r.psnr_blur),
        "checkpoint": a.out.join(CHECKPOINT),
    }))
}

fn reconstruct(a: ReconstructArgs) -> Result<Value> {
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let blur = if a.blur { ck.train.blur.clone() } else { raw_blur(&ck.train.blur) };
    let times = training::frame_times(ck.model.spec());
    let frames = training::reconstruct(&ck.model, &times, &blur)?;
    let n = frames.len();
    write_frames(frames, "reconstruct", &a.out)?;
    Ok(json!({"task": "reconstruct", "frames": n, "blur": blur.enabled, "out": a.out}))
}

fn compress(a: CompressArgs) -> Result<Value> {
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let video = io::load_video(&a.video)?;
    let mut cfg = ck.train.clone();
    cfg.epochs = a.epochs;
    cfg.log_every = a.epochs.max(1);
    let (pruned, report) = tasks::compress(&ck.model, &video.frames, a.rho, &cfg)?;
    fs::create_dir_all(&a.out)?;
    io::write_atomic(&a.out.join("sparsity.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    io::save_checkpoint(
        &Checkpoint {
            model: pruned,
            train: ck.train,
        },
        &a.out.join(CHECKPOINT),
    )?;
    Ok(json!({
        "task": "compress",
        "rho": report.rho,
        "zeroed": report.zeroed,
        "prunable": report.prunable,
        "psnr_dense": report.psnr_dense,
        "psnr_pruned": report.psnr_pruned,
        "psnr_finetuned": report.psnr_finetuned,
    }))
}

fn superres(a: SuperresArgs) -> Result<Value> {
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let times = training::frame_times(ck.model.spec());
    let frames = tasks::super_resolve(&ck.model, a.factor, &times, &raw_blur(&ck.train.blur))?;
    let shape = frames[0].shape().to_vec();
    let psnr = match &a.reference {
        Some(dir) => Some(metrics::video_psnr(&frames, &io::load_video(dir)?.frames)?),
        None => None,
    };
    write_frames(frames, "superres", &a.out)?;
    Ok(json!({
        "task": "superres",
        "factor": a.factor,
        "height": shape[0],
        "width": shape[1],
        "psnr": psnr,
    }))
}

fn interpolate(a: InterpolateArgs) -> Result<Value> {
    let ck = io::load_checkpoint(&a.checkpoint)?;
    let spec = *ck.model.spec();
    let blur = raw_blur(&ck.train.blur);
    let times = if a.times.is_empty() {
        training::frame_times(&spec)
    } else {
        a.times.clone()
    };
    let frames = tasks::interpolate(&ck.model, &times, &blur)?;
    let mut summary = json!({"task": "interpolate", "frames": frames.len()});
    if let Some(dir) = &a.video {
        if !a.times.is_empty() {
            return Err(Error::invalid("--video scoring needs the default frame times (omit --times)"));
        }
        let gt = io::load_video(dir)?;
        let seen = &if a.holdout {
            tasks::split_seen(gt.len())
        } else {
            gt.manifest.seen_mask.clone()
        };
        let (seen_psnr, unseen_psnr) = tasks::split_psnr(&frames, &gt.frames, seen)?;
        let copy = tasks::copy_nearest_seen(&gt.frames, seen)?;
        let (_, copy_psnr) = tasks::split_psnr(&copy, &gt.frames, seen)?;
        let finite = |v: f64| v.is_finite().then_some(v);
        summary["psnr_seen"] = json!(finite(seen_psnr));
        summary["psnr_unseen"] = json!(finite(unseen_psnr));
        summary["psnr_unseen_copy"] = json!(finite(copy_psnr));
    }
    write_frames(frames, "interpolate", &a.out)?;
    Ok(summary)
}

fn denoise(a: DenoiseArgs) -> Result<Value> {
    let run = RunConfig::load(&a.config)?;
    let clean = io::load_video(&a.video)?;
    let spec = match a.noise.parse::<NoiseKind>()? {
        NoiseKind::White => NoiseSpec::white(a.sigma, a.seed),
        NoiseKind::SaltPepper => NoiseSpec::salt_pepper(a.p, a.seed),
    };
    let mut noisy = clean.clone();
    noisy.frames = tasks::add_noise(&clean.frames, &spec)?;
    noisy.manifest.noise = Some(spec);
    io::save_video(&noisy, &a.out.join("noisy"))?;

    let seen = vec![true; clean.len()];
    let (model, _) = fit(&run, &noisy, &seen, &a.out)?;
    let times = training::frame_times(model.spec());
    let raw = training::reconstruct(&model, &times, &raw_blur(&run.train.blur))?;
    let psnr_raw = metrics::video_psnr(&raw, &clean.frames)?;
    let recon = raw
        .into_iter()
        .map(|f| training::apply_blur(f, &run.train.blur))
        .collect::<Result<Vec<_>>>()?;
    let psnr_noisy = metrics::video_psnr(&noisy.frames, &clean.frames)?;
    let psnr_denoised = metrics::video_psnr(&recon, &clean.frames)?;
    write_frames(recon, "denoise", &a.out.join("recon"))?;
    Ok(json!({
        "task": "denoise",
        "noise": a.noise,
        "blur": run.train.blur.enabled,
        "psnr_noisy": psnr_noisy,
        "psnr_denoised": psnr_denoised,
        "psnr_denoised_raw": psnr_raw,
    }))
}

fn metrics_cmd(a: MetricsArgs) -> Result<Value> {
    let va = io::load_video(&a.a)?;
    let vb = io::load_video(&a.b)?;
    let name = a.b.display().to_string();
    let records = tasks::metric_suite("metrics", &name, &va.frames, &vb.frames)?;
    Ok(Value::Array(records.iter().map(|r| json!(r)).collect()))
}

fn synth(a: SynthArgs) -> Result<Value> {
    let kind: SynthKind = a.kind.parse()?;
    let (h, w) = match (a.height.or(a.size), a.width.or(a.size)) {
        (Some(h), Some(w)) => (h, w),
        _ => return Err(Error::invalid("give --size or both --height and --width")),
    };
    let video = io::synth_video(kind, a.frames, h, w, a.seed)?;
    io::save_video(&video, &a.out)?;
    Ok(json!({"task": "synth", "kind": kind.name(), "frames": a.frames, "height": h, "width": w, "out": a.out}))
}

/// A 16×16 single-patch model small enough for finite differences.
fn probe_config() -> Result<ModelConfig> {
    Ok(ModelConfig {
        patch: PatchSpec::new(1, 16, 16, (1, 1), (2, 2))?,
        embed: EmbedConfig::with_width(4),
        decoder: DecoderConfig {
            seed: (2, 2),
            upscales: [2, 2, 2],
            u_channels: 8,
            f11_mid: 4,
            channels: [8, 8, 8, 4, 4, 4],
            activation: true,
        },
    })
}

fn gradcheck(a: GradcheckArgs) -> Result<Value> {
    let model = Model::new(probe_config()?, a.seed)?;
    let video = io::synth_video(SynthKind::CheckerboardDrift, 1, 16, 16, a.seed)?;
    let rep = training::loss_gradcheck(&model, &video.frames, 0.7, a.count, a.seed)?;
    if !(rep.max_rel_err < a.tol) {
        return Err(Error::invalid(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            rep.max_rel_err, a.tol
        )));
    }
    Ok(json!({"task": "gradcheck", "checked": rep.checked, "max_rel_err": rep.max_rel_err}))
}
