//! Downstream uses of a trained representation: compression by pruning,
//! super-resolution, frame interpolation, denoising and ablation runs.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{self, Layout};
use crate::fusion::FusionMode;
use crate::model::{Model, ModelConfig, QueryGrid};
use crate::params::{ParamKind, ParamStore};
use crate::rng::{self, Stream};
use crate::training::{self, BlurConfig, TrainConfig, TrainLog};
use crate::tensor::Tensor;

// ---- compression ------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SparsityReport {
    pub rho: f64,
    /// Entries eligible for pruning (weight matrices only).
    pub prunable: usize,
    pub zeroed: usize,
    /// Zero entries per prunable parameter after pruning.
    pub per_path: Vec<(String, usize)>,
    pub psnr_dense: Option<f64>,
    pub psnr_pruned: Option<f64>,
    pub psnr_finetuned: Option<f64>,
}

/// Global magnitude pruning mask over `params`: the `⌈rho · P⌉`
/// smallest-magnitude entries of `Weight` parameters are switched off, `P`
/// being the number of such entries. Ties go to the earlier parameter path,
/// then the lower flat index. An existing mask is kept and extended.
/// Returns the mask and `(P, ⌈rho · P⌉)`.
pub fn prune_mask(
    params: &ParamStore,
    existing: Option<&[Vec<bool>]>,
    rho: f64,
) -> Result<(Vec<Vec<bool>>, usize, usize)> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid(format!("sparsity {rho} outside [0, 1)")));
    }
    let params = params.params();
    let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
    for (pi, p) in params.iter().enumerate() {
        if p.kind == ParamKind::Weight {
            candidates.extend(p.data.iter().enumerate().map(|(k, &v)| (pi, k, v.abs())));
        }
    }
    let prunable = candidates.len();
    let zeroed = (rho * prunable as f64).ceil() as usize;
    // stable sort keeps the path-then-index enumeration order among ties
    candidates.sort_by(|a, b| a.2.total_cmp(&b.2));

    let mut mask: Vec<Vec<bool>> = match existing {
        Some(m) => m.to_vec(),
        None => params.iter().map(|p| vec![true; p.data.len()]).collect(),
    };
    for &(pi, k, _) in &candidates[..zeroed] {
        mask[pi][k] = false;
    }
    Ok((mask, prunable, zeroed))
}

/// Prunes a model with [`prune_mask`]. The returned model carries the mask,
/// which keeps the zeros fixed during further training.
pub fn prune(model: &Model, rho: f64) -> Result<(Model, SparsityReport)> {
    let (mask, prunable, zeroed) = prune_mask(&model.params, model.mask.as_deref(), rho)?;
    let mut pruned = model.clone();
    training::apply_mask(&mut pruned.params, &mask);
    pruned.mask = Some(mask);

    let per_path = pruned
        .params
        .params()
        .iter()
        .filter(|p| p.kind == ParamKind::Weight)
        .map(|p| (p.path.clone(), p.data.iter().filter(|&&v| v == 0.0).count()))
        .collect();
    let report = SparsityReport {
        rho,
        prunable,
        zeroed,
        per_path,
        psnr_dense: None,
        psnr_pruned: None,
        psnr_finetuned: None,
    };
    Ok((pruned, report))
}

/// Continues training a pruned model. Masked entries stay exactly zero.
pub fn fine_tune(model: &mut Model, frames: &[Tensor], cfg: &TrainConfig) -> Result<TrainLog> {
    if model.mask.is_none() {
        return Err(Error::invalid("fine-tuning requires a pruned model with a mask"));
    }
    training::train(model, frames, None, cfg)
}

/// Prunes, measures, fine-tunes and measures again. PSNR is of the raw
/// (unblurred) reconstruction against `frames`.
pub fn compress(
    model: &Model,
    frames: &[Tensor],
    rho: f64,
    cfg: &TrainConfig,
) -> Result<(Model, SparsityReport)> {
    let times = training::frame_times(model.spec());
    let raw = BlurConfig {
        enabled: false,
        ..cfg.blur.clone()
    };
    let score = |m: &Model| -> Result<f64> {
        metrics::video_psnr(&training::reconstruct(m, &times, &raw)?, frames)
    };
    let (mut pruned, mut report) = prune(model, rho)?;
    report.psnr_dense = Some(score(model)?);
    report.psnr_pruned = Some(score(&pruned)?);
    if cfg.epochs > 0 {
        fine_tune(&mut pruned, frames, cfg)?;
        report.psnr_finetuned = Some(score(&pruned)?);
    }
    Ok((pruned, report))
}

// ---- super-resolution ---------------------------------------------------------

/// Renders frames `factor` times larger in both axes. For every sub-pixel
/// phase `(a, b)` the patch grid is re-queried on a virtual grid `factor`
/// times denser, and the phase frames are interleaved so that output pixel
/// `(factor·y + a, factor·x + b)` comes from phase `(a, b)` at `(y, x)`.
pub fn super_resolve(model: &Model, factor: usize, t_values: &[f64], blur: &BlurConfig) -> Result<Vec<Tensor>> {
    if factor == 0 {
        return Err(Error::invalid("super-resolution factor must be >= 1"));
    }
    let spec = model.spec();
    let (h, w) = (spec.height, spec.width);
    let mut grids = Vec::with_capacity(factor * factor);
    for a in 0..factor {
        for b in 0..factor {
            grids.push(((a, b), QueryGrid::phase(spec, factor, (a, b))?));
        }
    }
    let mut out = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let mut frame = Tensor::zeros([h * factor, w * factor, 3]);
        for ((a, b), grid) in &grids {
            let phase = model.render(grid, t)?;
            for y in 0..h {
                for x in 0..w {
                    let src = (y * w + x) * 3;
                    let dst = ((factor * y + a) * w * factor + factor * x + b) * 3;
                    frame.data_mut()[dst..dst + 3].copy_from_slice(&phase.data()[src..src + 3]);
                }
            }
        }
        out.push(training::apply_blur(frame, blur)?);
    }
    Ok(out)
}

/// Averages non-overlapping `factor × factor` blocks of an `[H, D, C]` frame.
pub fn box_downsample(frame: &Tensor, factor: usize) -> Result<Tensor> {
    let &[h, w, c] = frame.shape() else {
        return Err(Error::invalid("frame must be [H, D, C]"));
    };
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::invalid(format!("{h}x{w} is not divisible by {factor}")));
    }
    let (oh, ow) = (h / factor, w / factor);
    let norm = 1.0 / (factor * factor) as f64;
    let mut out = vec![0.0; oh * ow * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out[((y / factor) * ow + x / factor) * c + ch] += frame.data()[(y * w + x) * c + ch] * norm;
            }
        }
    }
    Tensor::new([oh, ow, c], out)
}

fn cubic_weight(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x <= 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((A * x - 5.0 * A) * x + 8.0 * A) * x - 4.0 * A
    } else {
        0.0
    }
}

/// Bicubic upsampling (Keys kernel, a = −0.5, clamped borders, half-pixel
/// centers). Reference resampler for comparing super-resolution output.
pub fn bicubic_upsample(frame: &Tensor, factor: usize) -> Result<Tensor> {
    let &[h, w, c] = frame.shape() else {
        return Err(Error::invalid("frame must be [H, D, C]"));
    };
    if factor == 0 {
        return Err(Error::invalid("upsampling factor must be >= 1"));
    }
    let taps = |n: usize, size: usize| -> Vec<[(usize, f64); 4]> {
        (0..n)
            .map(|o| {
                let src = (o as f64 + 0.5) / factor as f64 - 0.5;
                let base = src.floor();
                let mut t = [(0, 0.0); 4];
                for (k, slot) in t.iter_mut().enumerate() {
                    let pos = base + k as f64 - 1.0;
                    let idx = pos.clamp(0.0, (size - 1) as f64) as usize;
                    *slot = (idx, cubic_weight(src - pos));
                }
                t
            })
            .collect()
    };
    let (oh, ow) = (h * factor, w * factor);
    let (ty, tx) = (taps(oh, h), taps(ow, w));
    let mut out = vec![0.0; oh * ow * c];
    for (y, ry) in ty.iter().enumerate() {
        for (x, rx) in tx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(sy, wy) in ry {
                    for &(sx, wx) in rx {
                        acc += wy * wx * frame.data()[(sy * w + sx) * c + ch];
                    }
                }
                out[(y * ow + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Tensor::new([oh, ow, c], out)
}

// ---- interpolation ------------------------------------------------------------

/// Decodes frames at arbitrary normalized times.
pub fn interpolate(model: &Model, t_query: &[f64], blur: &BlurConfig) -> Result<Vec<Tensor>> {
    if let Some(t) = t_query.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::invalid(format!("query time {t} outside [0, 1]")));
    }
    training::reconstruct(model, t_query, blur)
}

/// 3:1 split: every fourth frame (indices 3, 7, ...) is held out.
pub fn split_seen(frames: usize) -> Vec<bool> {
    (0..frames).map(|i| i % 4 != 3).collect()
}

/// Replaces every unseen frame with the nearest seen one (the earlier one
/// on ties).
pub fn copy_nearest_seen(frames: &[Tensor], seen: &[bool]) -> Result<Vec<Tensor>> {
    if frames.len() != seen.len() {
        return Err(Error::invalid("seen mask length differs from frame count"));
    }
    let seen_idx: Vec<usize> = (0..frames.len()).filter(|&i| seen[i]).collect();
    if seen_idx.is_empty() {
        return Err(Error::invalid("no seen frames"));
    }
    Ok((0..frames.len())
        .map(|i| {
            let nearest = *seen_idx.iter().min_by_key(|&&s| s.abs_diff(i)).unwrap();
            frames[nearest].clone()
        })
        .collect())
}

/// Mean PSNR over seen and over unseen frames. A side with no frames is NaN.
pub fn split_psnr(pred: &[Tensor], gt: &[Tensor], seen: &[bool]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() || pred.len() != seen.len() {
        return Err(Error::invalid("frame counts differ"));
    }
    let side = |want: bool| -> Result<f64> {
        let (a, b): (Vec<_>, Vec<_>) = (0..pred.len())
            .filter(|&i| seen[i] == want)
            .map(|i| (pred[i].clone(), gt[i].clone()))
            .unzip();
        if a.is_empty() {
            Ok(f64::NAN)
        } else {
            metrics::video_psnr(&a, &b)
        }
    };
    Ok((side(true)?, side(false)?))
}

// ---- denoising ------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    White,
    SaltPepper,
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::SaltPepper => "salt_pepper",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "salt_pepper" => Ok(NoiseKind::SaltPepper),
            _ => Err(Error::invalid(format!("unknown noise kind `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    /// Standard deviation of white noise on the unit range.
    pub sigma: f64,
    /// Salt-and-pepper corruption probability per pixel.
    pub p: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn white(sigma: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::White,
            sigma,
            p: 0.05,
            seed,
        }
    }

    pub fn salt_pepper(p: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::SaltPepper,
            sigma: 0.05,
            p,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0) || !(0.0..=1.0).contains(&self.p) {
            return Err(Error::invalid(format!(
                "noise needs sigma >= 0 and p in [0, 1], got sigma {} p {}",
                self.sigma, self.p
            )));
        }
        Ok(())
    }
}

/// Corrupts `[H, D, 3]` frames. White noise is clamped to `[0, 1]`;
/// salt-and-pepper sets a whole pixel to black or white with probability
/// `p / 2` each.
pub fn add_noise(frames: &[Tensor], ns: &NoiseSpec) -> Result<Vec<Tensor>> {
    ns.validate()?;
    let mut rng = rng::stream(ns.seed, Stream::Noise);
    let mut out = Vec::with_capacity(frames.len());
    for f in frames {
        let mut f = f.clone();
        match ns.kind {
            NoiseKind::White => {
                if ns.sigma > 0.0 {
                    let normal = Normal::new(0.0, ns.sigma).map_err(|e| Error::invalid(e.to_string()))?;
                    for v in f.data_mut() {
                        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                    }
                }
            }
            NoiseKind::SaltPepper => {
                let c = *f.shape().last().unwrap_or(&1);
                for px in f.data_mut().chunks_mut(c) {
                    let u: f64 = rng.random();
                    if u < ns.p / 2.0 {
                        px.fill(0.0);
                    } else if u < ns.p {
                        px.fill(1.0);
                    }
                }
            }
        }
        out.push(f);
    }
    Ok(out)
}

// ---- ablations ------------------------------------------------------------------

/// One trained variant of an ablation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationArm {
    pub label: String,
    pub params: usize,
    /// Raw reconstruction PSNR after training.
    pub psnr: f64,
}

/// Variants of `base` differing only in the fusion strategy, in
/// [`FusionMode::ALL`] order.
pub fn fusion_arms(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    FusionMode::ALL
        .into_iter()
        .map(|mode| {
            let mut cfg = base.clone();
            cfg.embed.fusion = mode;
            (mode.name().to_string(), cfg)
        })
        .collect()
}

/// `base` with and without the hidden-layer activations.
pub fn activation_arms(base: &ModelConfig) -> Vec<(String, ModelConfig)> {
    [("gelu", true), ("none", false)]
        .into_iter()
        .map(|(label, on)| {
            let mut cfg = base.clone();
            cfg.decoder.activation = on;
            (label.to_string(), cfg)
        })
        .collect()
}

/// Trains every arm from the same init seed with the same budget.
pub fn run_ablation(
    arms: &[(String, ModelConfig)],
    frames: &[Tensor],
    model_seed: u64,
    cfg: &TrainConfig,
) -> Result<Vec<AblationArm>> {
    let raw = BlurConfig {
        enabled: false,
        ..cfg.blur.clone()
    };
    arms.iter()
        .map(|(label, mc)| {
            let mut model = Model::new(mc.clone(), model_seed)?;
            training::train(&mut model, frames, None, cfg)?;
            let recon = training::reconstruct(&model, &training::frame_times(model.spec()), &raw)?;
            Ok(AblationArm {
                label: label.clone(),
                params: model.parameter_count(),
                psnr: metrics::video_psnr(&recon, frames)?,
            })
        })
        .collect()
}

// ---- metric records ----------------------------------------------------------------

/// One metric result, serialized as a JSON line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub task: String,
    pub video: String,
    pub metric: String,
    pub value: f64,
}

impl MetricRecord {
    pub fn new(task: &str, video: &str, metric: &str, value: f64) -> Self {
        MetricRecord {
            task: task.into(),
            video: video.into(),
            metric: metric.into(),
            value,
        }
    }
}

impl fmt::Display for MetricRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&serde_json::to_string(self).map_err(|_| fmt::Error)?)
    }
}

/// PSNR, SSIM and MS-SSIM averaged over frames of two `[H, D, 3]` videos.
pub fn metric_suite(task: &str, video: &str, a: &[Tensor], b: &[Tensor]) -> Result<Vec<MetricRecord>> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid("videos must have the same non-zero frame count"));
    }
    let n = a.len() as f64;
    let mut ssim = 0.0;
    let mut ms = 0.0;
    for (x, y) in a.iter().zip(b) {
        ssim += metrics::ssim(x, y, Layout::Hwc)?;
        ms += metrics::ms_ssim(x, y, Layout::Hwc, metrics::MS_SSIM_WEIGHTS.len())?;
    }
    Ok(vec![
        MetricRecord::new(task, video, "psnr", metrics::video_psnr(a, b)?),
        MetricRecord::new(task, video, "ssim", ssim / n),
        MetricRecord::new(task, video, "ms_ssim", ms / n),
    ])
}
