//! Loss, optimizer, schedule and the patch-batch training loop.

use std::f64::consts::PI;
use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gradcheck::{self, GradReport};
use crate::metrics::{self, SSIM_C1, SSIM_C2, SSIM_SIGMA};
use crate::model::{Model, QueryGrid};
use crate::params::ParamStore;
use crate::rng::{self, Stream};
use crate::sampling::{self, PatchSpec};
use crate::tensor::{Precision, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct BlurConfig {
    pub enabled: bool,
    pub ksize: usize,
    pub sigma: f64,
}

impl Default for BlurConfig {
    fn default() -> Self {
        BlurConfig {
            enabled: true,
            ksize: 3,
            sigma: 0.8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Weight of the L1 term; SSIM gets `1 − gamma`.
    pub gamma: f64,
    pub epochs: usize,
    /// Patches per optimizer step.
    pub batch_size: usize,
    pub lr0: f64,
    pub seed: u64,
    pub blur: BlurConfig,
    pub precision: Precision,
    /// Reconstruction PSNR is evaluated (and a record emitted) every
    /// `log_every` epochs and after the last one.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            gamma: 0.7,
            epochs: 100,
            batch_size: 16,
            lr0: 5e-4,
            seed: 0,
            blur: BlurConfig::default(),
            precision: Precision::F64,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::invalid(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 || self.log_every == 0 {
            return Err(Error::invalid("batch_size and log_every must be >= 1"));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::invalid("lr0 must be >= 0"));
        }

        if self.blur.ksize.is_multiple_of(2) {
            return Err(Error::invalid("blur kernel size must be odd"));
        }
        Ok(())
    }

    /// Optimizer steps for `patches` training patches.
    pub fn total_steps(&self, patches: usize) -> usize {
        self.epochs * patches.div_ceil(self.batch_size)
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    /// PSNR of the raw reconstruction over all frames.
    pub psnr: f64,
    /// PSNR after the post-processing blur.
    pub psnr_blur: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    pub steps: usize,
}

impl TrainLog {
    pub fn last(&self) -> Option<&TrainRecord> {
        self.records.last()
    }
}

impl fmt::Display for TrainLog {
    /// One JSON object per line, fields in declaration order.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for r in &self.records {
            let line = serde_json::to_string(r).map_err(|_| fmt::Error)?;
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

// ---- loss ---------------------------------------------------------------------

/// Differentiable mean SSIM of two `[C, H, W]` images.
pub fn ssim_var(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    let shape = tape.shape(a)?.to_vec();
    if shape.len() != 3 || tape.shape(b)? != shape.as_slice() {
        return Err(Error::Shape {
            op: "ssim",
            lhs: shape,
            rhs: tape.shape(b)?.to_vec(),
        });
    }
    let k = metrics::ssim_window_size(shape[1], shape[2]);
    let win = metrics::gaussian_window(k, SSIM_SIGMA);
    let aa = tape.hadamard(a, a)?;
    let bb = tape.hadamard(b, b)?;
    let ab = tape.hadamard(a, b)?;
    let mu_a = tape.filter(a, &win, k, k)?;
    let mu_b = tape.filter(b, &win, k, k)?;
    let e_aa = tape.filter(aa, &win, k, k)?;
    let e_bb = tape.filter(bb, &win, k, k)?;
    let e_ab = tape.filter(ab, &win, k, k)?;
    let ma2 = tape.hadamard(mu_a, mu_a)?;
    let mb2 = tape.hadamard(mu_b, mu_b)?;
    let mab = tape.hadamard(mu_a, mu_b)?;
    let va = tape.sub(e_aa, ma2)?;
    let vb = tape.sub(e_bb, mb2)?;
    let cov = tape.sub(e_ab, mab)?;

    let l_num = tape.mul_scalar(mab, 2.0)?;
    let l_num = tape.add_scalar(l_num, SSIM_C1)?;
    let c_num = tape.mul_scalar(cov, 2.0)?;
    let c_num = tape.add_scalar(c_num, SSIM_C2)?;
    let l_den = tape.add(ma2, mb2)?;
    let l_den = tape.add_scalar(l_den, SSIM_C1)?;
    let c_den = tape.add(va, vb)?;
    let c_den = tape.add_scalar(c_den, SSIM_C2)?;
    let num = tape.hadamard(l_num, c_num)?;
    let den = tape.hadamard(l_den, c_den)?;
    let map = tape.div(num, den)?;
    tape.mean(map)
}

/// `gamma·mean|pred − gt| + (1 − gamma)·(1 − ssim(pred, gt))` for one image.
pub fn loss_var(tape: &mut Tape, pred: Var, gt: Var, gamma: f64) -> Result<Var> {
    let d = tape.sub(pred, gt)?;
    let d = tape.unary(crate::tensor::Unary::Abs, d)?;
    let l1 = tape.mean(d)?;
    let s = ssim_var(tape, pred, gt)?;
    let l1 = tape.mul_scalar(l1, gamma)?;
    let dissim = tape.mul_scalar(s, -(1.0 - gamma))?;
    let dissim = tape.add_scalar(dissim, 1.0 - gamma)?;
    tape.add(l1, dissim)
}

/// Mean loss over a batch of `[C, H, W]` prediction/target pairs.
pub fn loss(pred: &[Tensor], gt: &[Tensor], gamma: f64) -> Result<f64> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::invalid(format!(
            "batch sizes differ or are empty: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let mut tape = Tape::new();
        let vp = tape.leaf(p.clone(), false);
        let vg = tape.leaf(g.clone(), false);
        let l = loss_var(&mut tape, vp, vg, gamma)?;
        total += tape.value(l)?[0];
    }
    Ok(total / pred.len() as f64)
}

// ---- optimizer ----------------------------------------------------------------

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(shapes: &[usize]) -> Self {
        Adam {
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            step: 0,
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn moments(&self) -> (&[Vec<f64>], &[Vec<f64>]) {
        (&self.m, &self.v)
    }

    /// Bias-corrected Adam update of `params` in place.
    pub fn update(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>], lr: f64) -> Result<()> {
        let aligned = params.len() == self.m.len()
            && grads.len() == self.m.len()
            && params
                .iter()
                .zip(grads)
                .zip(&self.m)
                .all(|((p, g), m)| p.len() == m.len() && g.len() == m.len());
        if !aligned {
            return Err(Error::invalid("gradients do not match optimizer state"));
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Cosine annealing from `lr0` at step 0 to zero at `total`.
pub fn cosine_lr(step: usize, total: usize, lr0: f64) -> Result<f64> {
    if step > total {
        return Err(Error::invalid(format!("step {step} beyond schedule length {total}")));
    }
    if total == 0 {
        return Ok(lr0);
    }
    Ok(lr0 * 0.5 * (1.0 + (PI * step as f64 / total as f64).cos()))
}

// ---- blur -----------------------------------------------------------------------

fn reflect101(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut r = i.rem_euclid(period);
    if r >= n as isize {
        r = period - r;
    }
    r as usize
}

/// Separable Gaussian blur of an `[H, W, C]` frame with reflect-101 borders.
pub fn gaussian_blur(frame: &Tensor, ksize: usize, sigma: f64) -> Result<Tensor> {
    if ksize.is_multiple_of(2) {
        return Err(Error::invalid(format!("blur kernel size {ksize} must be odd")));
    }
    let &[h, w, c] = frame.shape() else {
        return Err(Error::invalid(format!("expected [H, W, C], got {:?}", frame.shape())));
    };
    let taps = metrics::gaussian_taps(ksize, sigma);
    let r = (ksize / 2) as isize;
    let src = frame.data();
    let mut tmp = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let xx = reflect101(x as isize + k as isize - r, w);
                    s += t * src[(y * w + xx) * c + ch];
                }
                tmp[(y * w + x) * c + ch] = s;
            }
        }
    }
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut s = 0.0;
                for (k, t) in taps.iter().enumerate() {
                    let yy = reflect101(y as isize + k as isize - r, h);
                    s += t * tmp[(yy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = s;
            }
        }
    }
    Tensor::new([h, w, c], out)
}

pub fn apply_blur(frame: Tensor, blur: &BlurConfig) -> Result<Tensor> {
    if blur.enabled {
        gaussian_blur(&frame, blur.ksize, blur.sigma)
    } else {
        Ok(frame)
    }
}

// ---- training loop ----------------------------------------------------------------

/// Renders frames at normalized times `t_values`, blurred if `blur.enabled`.
pub fn reconstruct(model: &Model, t_values: &[f64], blur: &BlurConfig) -> Result<Vec<Tensor>> {
    let grid = QueryGrid::new(model.spec())?;
    t_values
        .iter()
        .map(|&t| apply_blur(model.render(&grid, t)?, blur))
        .collect()
}

/// Frame times of every frame of `spec`.
pub fn frame_times(spec: &PatchSpec) -> Vec<f64> {
    (0..spec.frames).map(|i| spec.frame_time(i)).collect()
}

fn check_frames(spec: &PatchSpec, frames: &[Tensor]) -> Result<()> {
    if frames.len() != spec.frames {
        return Err(Error::invalid(format!(
            "video has {} frames, spec expects {}",
            frames.len(),
            spec.frames
        )));
    }
    for f in frames {
        if f.shape() != [spec.height, spec.width, 3] {
            return Err(Error::invalid(format!(
                "frame shape {:?} does not match {}x{}x3",
                f.shape(),
                spec.height,
                spec.width
            )));
        }
    }
    Ok(())
}

/// One training sample: frame index and patch position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Sample {
    frame: usize,
    patch: usize,
}

/// Trains `model` on `frames` (each `[H, D, 3]`). Only frames whose entry in
/// `seen` is `true` contribute patches. If the model carries a prune mask,
/// masked entries receive no gradient and stay zero.
pub fn train(
    model: &mut Model,
    frames: &[Tensor],
    seen: Option<&[bool]>,
    cfg: &TrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let spec = *model.spec();
    check_frames(&spec, frames)?;
    if let Some(s) = seen {
        if s.len() != frames.len() {
            return Err(Error::invalid("seen mask length differs from frame count"));
        }
    }
    let is_seen = |t: usize| seen.is_none_or(|s| s[t]);
    let grid = QueryGrid::new(&spec)?;
    let per_frame = spec.patches_per_frame();

    let mut targets = Vec::with_capacity(frames.len() * per_frame);
    for f in frames {
        for i in 0..spec.m {
            for j in 0..spec.n {
                targets.push(sampling::hwc_to_chw(&sampling::extract_patch(f, &spec, i, j)?)?);
            }
        }
    }
    let mut samples: Vec<Sample> = (0..frames.len())
        .filter(|&t| is_seen(t))
        .flat_map(|frame| (0..per_frame).map(move |patch| Sample { frame, patch }))
        .collect();
    if samples.is_empty() {
        return Err(Error::invalid("no seen frames to train on"));
    }

    let times = frame_times(&spec);
    let total = cfg.total_steps(samples.len());
    let sizes: Vec<usize> = model.params.params().iter().map(|p| p.data.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut rng = rng::stream(cfg.seed, Stream::Batches);
    let mut log = TrainLog::default();
    let mut step = 0;

    for epoch in 1..=cfg.epochs {
        samples.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut lr = cfg.lr0;
        for batch in samples.chunks(cfg.batch_size) {
            lr = cosine_lr(step, total, cfg.lr0)?;
            let mut grads = model.params.zeros_like();
            for s in batch {
                let mut tape = Tape::with_precision(cfg.precision);
                let p = model.params.bind(&mut tape)?;
                let query = grid.get(s.patch / spec.n, s.patch % spec.n);
                let pred = model.forward(&mut tape, &p, query, times[s.frame])?;
                let target = &targets[s.frame * per_frame + s.patch];
                let gt = tape.constant(target.shape().to_vec(), target.data().to_vec())?;
                let l = loss_var(&mut tape, pred, gt, cfg.gamma)?;
                epoch_loss += tape.value(l)?[0];
                let l = tape.mul_scalar(l, 1.0 / batch.len() as f64)?;
                tape.backward(l)?;
                p.accumulate_grads(&mut tape, &mut grads)?;
            }
            if let Some(mask) = &model.mask {
                for (g, m) in grads.iter_mut().zip(mask) {
                    for (gi, &keep) in g.iter_mut().zip(m) {
                        if !keep {
                            *gi = 0.0;
                        }
                    }
                }
            }
            let mut slots: Vec<&mut [f64]> = model
                .params
                .params_mut()
                .iter_mut()
                .map(|p| p.data.as_mut_slice())
                .collect();
            adam.update(&mut slots, &grads, lr)?;
            if let Some(mask) = &model.mask {
                apply_mask(&mut model.params, mask);
            }
            step += 1;
        }
        if epoch % cfg.log_every == 0 || epoch == cfg.epochs {
            let raw = reconstruct(model, &times, &BlurConfig { enabled: false, ..cfg.blur.clone() })?;
            let psnr = metrics::video_psnr(&raw, frames)?;
            let blurred = raw
                .into_iter()
                .map(|f| gaussian_blur(&f, cfg.blur.ksize, cfg.blur.sigma))
                .collect::<Result<Vec<_>>>()?;
            let psnr_blur = metrics::video_psnr(&blurred, frames)?;
            log.records.push(TrainRecord {
                epoch,
                lr,
                loss: epoch_loss / samples.len() as f64,
                psnr,
                psnr_blur,
            });
        }
    }
    log.steps = step;
    Ok(log)
}

/// Finite-difference check of the training-loss gradient of patch `(0, 0)`
/// of the first frame, at `count` randomly chosen parameter entries.
pub fn loss_gradcheck(model: &Model, frames: &[Tensor], gamma: f64, count: usize, seed: u64) -> Result<GradReport> {
    let spec = *model.spec();
    check_frames(&spec, frames)?;
    let grid = QueryGrid::new(&spec)?;
    let target = sampling::hwc_to_chw(&sampling::extract_patch(&frames[0], &spec, 0, 0)?)?;
    let t = spec.frame_time(0);
    gradcheck::check_store_sampled(&model.params, count, seed, |tape, p| {
        let pred = model.forward(tape, p, grid.get(0, 0), t)?;
        let gt = tape.constant(target.shape().to_vec(), target.data().to_vec())?;
        loss_var(tape, pred, gt, gamma)
    })
}

/// Zeroes every entry whose mask bit is `false`.
pub fn apply_mask(params: &mut ParamStore, mask: &[Vec<bool>]) {
    for (p, m) in params.params_mut().iter_mut().zip(mask) {
        for (v, &keep) in p.data.iter_mut().zip(m) {
            if !keep {
                *v = 0.0;
            }
        }
    }
}
