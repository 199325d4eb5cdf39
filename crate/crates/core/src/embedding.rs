//! Positional embeddings of the frame index and patch coordinates.
//!
//! * [`fpe`]: sinusoidal embedding of the normalized frame time.
//! * [`tse`]: time-aware spatial embedding, an angle-modulated carrier whose
//!   angular frequency is perturbed by the coarse patch centroid.
//! * [`ppe`]: learnable embedding of the fine centroids. Each centroid is
//!   encoded with [`fpe`] per axis, the `K·L` encodings are mixed by a
//!   non-local attention block and projected to the fused width.

use std::f64::consts::PI;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::FusionMode;
use crate::params::{Bound, ParamBuilder, ParamKind};
use crate::sampling::{CoarseCoord, FineCoords};
use crate::tensor::{Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    /// Frequency base of the frame-index embedding.
    pub nu: f64,
    /// Number of sin/cos pairs of the frame-index embedding.
    pub l: usize,
    /// Frequency base of the time-aware spatial embedding.
    pub beta: f64,
    /// Number of cos/sin pairs of the time-aware spatial embedding.
    pub l_tse: usize,
    /// Fused embedding width (the multiplicative-fusion rank).
    pub k: usize,
    pub fusion: FusionMode,
}

impl EmbedConfig {
    pub fn desk() -> Self {
        Self::with_width(20)
    }

    pub fn full() -> Self {
        Self::with_width(80)
    }

    /// All three embeddings share width `2·l`.
    pub fn with_width(l: usize) -> Self {
        EmbedConfig {
            nu: 1.25,
            l,
            beta: 1.25,
            l_tse: l,
            k: 2 * l,
            fusion: FusionMode::Hmf,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 1.0) || !(self.beta > 1.0) {
            return Err(Error::invalid("frequency bases nu and beta must exceed 1"));
        }
        if self.l == 0 || self.l_tse == 0 {
            return Err(Error::invalid("l and l_tse must be at least 1"));
        }
        if 2 * self.l != self.k || 2 * self.l_tse != self.k {
            return Err(Error::invalid(format!(
                "embedding widths must agree: 2·l = {}, 2·l_tse = {}, k = {}",
                2 * self.l,
                2 * self.l_tse,
                self.k
            )));
        }
        Ok(())
    }

    /// Channels of one fine-coordinate encoding (both axes).
    pub fn ppe_channels(&self) -> usize {
        4 * self.l
    }

    /// Inner width of the attention projections.
    pub fn attention_width(&self) -> usize {
        2 * self.l
    }
}

fn unit_range(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::invalid(format!("{name} = {v} outside [0, 1]")));
    }
    Ok(())
}

/// `[sin(π νⁱ t), cos(π νⁱ t)]` for `i = 0…l−1`, without range checks.
pub fn fourier_features(t: f64, nu: f64, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * l);
    let mut freq = PI;
    for _ in 0..l {
        let (s, c) = (freq * t).sin_cos();
        out.push(s);
        out.push(c);
        freq *= nu;
    }
    out
}

/// Frame-index embedding of normalized time `t ∈ [0, 1]`.
pub fn fpe(t: f64, cfg: &EmbedConfig) -> Result<Vec<f64>> {
    unit_range("t", t)?;
    Ok(fourier_features(t, cfg.nu, cfg.l))
}

/// Angular frequency of TSE term `alpha` for centroid `λ`.
pub fn tse_omega(lambda: CoarseCoord, alpha: usize, beta: f64) -> f64 {
    let b = beta.powi(alpha as i32);
    let [ly, lx] = lambda.0;
    2.0 * PI * b + (2.0 * PI * lx * b).sin() / b + (2.0 * PI * ly * b).sin() / b
}

/// Time-aware spatial embedding: `[cos(Ωₐ t), sin(Ωₐ t)]` for `a = 0…l_tse−1`.
pub fn tse(lambda: CoarseCoord, t: f64, cfg: &EmbedConfig) -> Result<Vec<f64>> {
    unit_range("t", t)?;
    unit_range("lambda.row", lambda.0[0])?;
    unit_range("lambda.col", lambda.0[1])?;
    let mut out = Vec::with_capacity(2 * cfg.l_tse);
    for alpha in 0..cfg.l_tse {
        let (s, c) = (tse_omega(lambda, alpha, cfg.beta) * t).sin_cos();
        out.push(c);
        out.push(s);
    }
    Ok(out)
}

/// The `K·L × 4l` feature map fed to the non-local block: for every fine
/// centroid, the Fourier features of its row coordinate followed by those of
/// its column coordinate.
pub fn ppe_features(fine: &FineCoords, cfg: &EmbedConfig) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(fine.coords.len() * cfg.ppe_channels());
    for &[y, x] in &fine.coords {
        unit_range("fine.row", y)?;
        unit_range("fine.col", x)?;
        out.extend(fourier_features(y, cfg.nu, cfg.l));
        out.extend(fourier_features(x, cfg.nu, cfg.l));
    }
    Ok(out)
}

pub fn init_ppe<R: Rng>(b: &mut ParamBuilder<R>, cfg: &EmbedConfig, positions: usize) {
    let c = cfg.ppe_channels();
    let d = cfg.attention_width();
    b.scope("ppe", |b| {
        b.scope("nonlocal", |b| {
            b.uniform("query", &[c, d], c, ParamKind::Embedding);
            b.uniform("key", &[c, d], c, ParamKind::Embedding);
            b.uniform("value", &[c, d], c, ParamKind::Embedding);
            b.uniform("out", &[d, c], d, ParamKind::Embedding);
        });
        b.uniform("proj.weight", &[positions * c, cfg.k], positions * c, ParamKind::Embedding);
        b.uniform("proj.bias", &[cfg.k], positions * c, ParamKind::Embedding);
    });
}

/// Embedded-Gaussian non-local block with a residual connection:
/// `y = x + softmax(q kᵀ / √d) · v · W_out` where `q, k, v` are row-wise
/// projections of `x: [P, C]`.
pub fn non_local(tape: &mut Tape, x: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let wq = p.var(&format!("{prefix}.query"))?;
    let wk = p.var(&format!("{prefix}.key"))?;
    let wv = p.var(&format!("{prefix}.value"))?;
    let wo = p.var(&format!("{prefix}.out"))?;
    let d = tape.shape(wq)?[1];
    let q = tape.matmul(x, wq)?;
    let k = tape.matmul(x, wk)?;
    let v = tape.matmul(x, wv)?;
    let kt = tape.transpose(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.mul_scalar(scores, 1.0 / (d as f64).sqrt())?;
    let attn = tape.softmax(scores, 1)?;
    let mixed = tape.matmul(attn, v)?;
    let back = tape.matmul(mixed, wo)?;
    tape.add(x, back)
}

/// Learnable fine-coordinate embedding, returned as a `[1, k]` row.
pub fn ppe(tape: &mut Tape, fine: &FineCoords, p: &Bound, cfg: &EmbedConfig) -> Result<Var> {
    let positions = fine.coords.len();
    let feats = ppe_features(fine, cfg)?;
    let x = tape.constant([positions, cfg.ppe_channels()], feats)?;
    let mixed = non_local(tape, x, p, "ppe.nonlocal")?;
    let flat = tape.reshape(mixed, [1, positions * cfg.ppe_channels()])?;
    let w = p.var("ppe.proj.weight")?;
    if tape.shape(w)?[0] != positions * cfg.ppe_channels() {
        return Err(Error::Shape {
            op: "ppe",
            lhs: vec![positions, cfg.ppe_channels()],
            rhs: tape.shape(w)?.to_vec(),
        });
    }
    let y = tape.matmul(flat, w)?;
    tape.add_bias(y, p.var("ppe.proj.bias")?)
}
