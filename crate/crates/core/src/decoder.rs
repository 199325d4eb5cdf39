//! Polynomial patch decoder.
//!
//! `z` is lifted to a small feature map by a third-order block `U`, then passed
//! through three second-order product blocks. Block `r` computes
//!
//! ```text
//! y_r1 = F_r1(o_(r-1)) ⊙ Ψ_r1
//! o_r  = F_r2(y_r1)    ⊙ Ψ_r2
//! ```
//!
//! where `F` is AdaIN → conv → pixel shuffle → GeLU. In block 1 the gates `Ψ`
//! are linear maps of `z` broadcast over space; in later blocks they are
//! transposed convolutions of the block input. A 1×1 convolution and a sigmoid
//! map the last feature map to RGB.
//!
//! [`ncp_forward`] is the plain vector form of the same coupled factorization
//! and is used for property tests.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamBuilder, ParamKind};
use crate::tensor::{Tape, Var};

/// Epsilon of the instance normalization inside AdaIN.
pub const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DecoderConfig {
    /// Spatial size `(h0, w0)` of the map produced by `U`.
    pub seed: (usize, usize),
    /// Pixel-shuffle factors applied by `F11`, `F12` and `F21`.
    pub upscales: [usize; 3],
    /// Channels of `U` (the rank of the first product block).
    pub u_channels: usize,
    /// Inner channels of the factorized `F11`.
    pub f11_mid: usize,
    /// Output channels of `F11, F12, F21, F22, F31, F32`.
    pub channels: [usize; 6],
    /// GeLU after each F block; the output sigmoid is always kept.
    pub activation: bool,
}

impl DecoderConfig {
    /// Small preset for 16×16 patches.
    pub fn desk() -> Self {
        DecoderConfig {
            seed: (4, 4),
            upscales: [2, 2, 1],
            u_channels: 32,
            f11_mid: 8,
            channels: [32, 16, 16, 8, 8, 8],
            activation: true,
        }
    }

    /// The large preset (320×180 patches).
    pub fn full() -> Self {
        DecoderConfig {
            seed: (16, 9),
            upscales: [5, 2, 2],
            u_channels: 324,
            f11_mid: 81,
            channels: [324, 162, 384, 96, 96, 96],
            activation: true,
        }
    }

    /// Output patch size `(pH, pW)`.
    pub fn patch_size(&self) -> (usize, usize) {
        let s: usize = self.upscales.iter().product();
        (self.seed.0 * s, self.seed.1 * s)
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = self.seed;
        if h == 0 || w == 0 || h * w < 2 {
            return Err(Error::invalid("decoder seed map needs at least two positions"));
        }
        if self.upscales.contains(&0) {
            return Err(Error::invalid("decoder upscale factors must be >= 1"));
        }
        if self.u_channels == 0 || self.f11_mid == 0 || self.channels.contains(&0) {
            return Err(Error::invalid("decoder channel counts must be >= 1"));
        }
        Ok(())
    }

    /// Polynomial degree in `z` of every output coordinate when GeLU, AdaIN
    /// and the output sigmoid are removed.
    pub fn structural_degree(&self) -> usize {
        // U is cubic and block 1 adds two linear gates of z. In later blocks
        // both the path and the gates are driven by the block input of degree
        // d, giving d + d for the first stage and 2d + d for the second.
        let u = 3;
        let block1 = u + 2;
        let block2 = 3 * block1;
        3 * block2
    }
}

/// Kernel size of a gate transposed convolution with padding 1 that
/// multiplies spatial size by `stride`.
fn gate_kernel(stride: usize) -> usize {
    stride + 2
}

/// Init gain for gate weights. Gates start close to their unit bias so the
/// products do not compound through the three blocks.
pub const GATE_GAIN: f64 = 0.1;

fn linear<R: Rng>(
    b: &mut ParamBuilder<R>,
    name: &str,
    inp: usize,
    out: usize,
    bias: f64,
    gain: f64,
) {
    b.scope(name, |b| {
        b.uniform_scaled("weight", &[inp, out], inp, gain, ParamKind::Weight);
        b.constant("bias", &[out], bias, ParamKind::Bias);
    });
}

fn conv<R: Rng>(b: &mut ParamBuilder<R>, name: &str, inp: usize, out: usize, k: usize) {
    b.scope(name, |b| {
        b.uniform("weight", &[out, inp, k, k], inp * k * k, ParamKind::Weight);
        b.uniform("bias", &[out], inp * k * k, ParamKind::Bias);
    });
}

fn conv_t<R: Rng>(
    b: &mut ParamBuilder<R>,
    name: &str,
    inp: usize,
    out: usize,
    k: usize,
    stride: usize,
    bias: f64,
    gain: f64,
) {
    let fan_in = (inp * k * k / (stride * stride)).max(1);
    b.scope(name, |b| {
        b.uniform_scaled("weight", &[inp, out, k, k], fan_in, gain, ParamKind::Weight);
        b.constant("bias", &[out], bias, ParamKind::Bias);
    });
}

fn adain_params<R: Rng>(b: &mut ParamBuilder<R>, k: usize, ch: usize) {
    b.scope("adain", |b| {
        b.uniform("scale.weight", &[k, ch], k, ParamKind::AdaIn);
        b.constant("scale.bias", &[ch], 1.0, ParamKind::AdaIn);
        b.uniform("shift.weight", &[k, ch], k, ParamKind::AdaIn);
        b.constant("shift.bias", &[ch], 0.0, ParamKind::AdaIn);
    });
}

/// Registers decoder parameters under `decoder.` for input width `k`.
pub fn init_decoder<R: Rng>(b: &mut ParamBuilder<R>, cfg: &DecoderConfig, k: usize) {
    let (h0, w0) = cfg.seed;
    let c0 = cfg.u_channels;
    let [s1, s2, s3] = cfg.upscales;
    let [c11, c12, c21, c22, c31, c32] = cfg.channels;
    b.scope("decoder", |b| {
        b.scope("u", |b| {
            linear(b, "seed", k, c0 * h0 * w0, 0.0, 1.0);
            for name in ["t1", "t2", "t3"] {
                conv_t(b, name, c0, c0, 3, 1, 0.0, 1.0);
            }
        });
        b.scope("b1", |b| {
            b.scope("f1", |b| {
                adain_params(b, k, c0);
                conv(b, "conv_a", c0, cfg.f11_mid * s1 * s1, 3);
                conv(b, "conv_b", cfg.f11_mid, c11, 3);
            });
            b.scope("f2", |b| {
                adain_params(b, k, c11);
                conv(b, "conv", c11, c12 * s2 * s2, 3);
            });
            linear(b, "psi1", k, c11, 1.0, GATE_GAIN);
            linear(b, "psi2", k, c12, 1.0, GATE_GAIN);
        });
        b.scope("b2", |b| {
            b.scope("f1", |b| {
                adain_params(b, k, c12);
                conv(b, "conv", c12, c21 * s3 * s3, 3);
            });
            b.scope("f2", |b| {
                adain_params(b, k, c21);
                conv(b, "conv", c21, c22, 3);
            });
            conv_t(b, "psi1", c12, c21, gate_kernel(s3), s3, 1.0, GATE_GAIN);
            conv_t(b, "psi2", c12, c22, gate_kernel(s3), s3, 1.0, GATE_GAIN);
        });
        b.scope("b3", |b| {
            b.scope("f1", |b| {
                adain_params(b, k, c22);
                conv(b, "conv", c22, c31, 3);
            });
            b.scope("f2", |b| {
                adain_params(b, k, c31);
                conv(b, "conv", c31, c32, 3);
            });
            conv_t(b, "psi1", c22, c31, gate_kernel(1), 1, 1.0, GATE_GAIN);
            conv_t(b, "psi2", c22, c32, gate_kernel(1), 1, 1.0, GATE_GAIN);
        });
        conv(b, "to_rgb", c32, 3, 1);
    });
}

/// Which nonlinear pieces are evaluated. `Probe` drops all of them, leaving a
/// polynomial in `z`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Standard,
    Probe,
}

struct Ctx<'p, 'b> {
    p: &'p Bound<'b>,
    z: Var,
    activation: bool,
    adain: bool,
}

fn lin(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p.var(&format!("{name}.weight"))?)?;
    tape.add_bias(y, p.var(&format!("{name}.bias"))?)
}

/// Linear map of `[1, k]` returned as a flat `[n]` vector.
fn lin_vec(tape: &mut Tape, p: &Bound, name: &str, z: Var) -> Result<Var> {
    let y = lin(tape, p, name, z)?;
    let n = tape.shape(y)?[1];
    tape.reshape(y, [n])
}

fn conv_layer(tape: &mut Tape, p: &Bound, name: &str, x: Var) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let k = tape.shape(w)?[2];
    let y = tape.conv2d(x, w, 1, k / 2)?;
    tape.add_channels(y, p.var(&format!("{name}.bias"))?)
}

fn conv_t_layer(tape: &mut Tape, p: &Bound, name: &str, x: Var, stride: usize) -> Result<Var> {
    let w = p.var(&format!("{name}.weight"))?;
    let y = tape.conv_transpose2d(x, w, stride, 1)?;
    tape.add_channels(y, p.var(&format!("{name}.bias"))?)
}

/// Instance normalization of `x: [C, H, W]` with per-channel scale and shift
/// predicted from `z: [1, k]`.
pub fn adain(tape: &mut Tape, x: Var, z: Var, p: &Bound, prefix: &str) -> Result<Var> {
    let scale = lin_vec(tape, p, &format!("{prefix}.scale"), z)?;
    let shift = lin_vec(tape, p, &format!("{prefix}.shift"), z)?;
    let n = tape.instance_norm(x, NORM_EPS)?;
    let y = tape.mul_channels(n, scale)?;
    tape.add_channels(y, shift)
}

/// The third-order lift from `z: [1, k]` to a `[C0, h0, w0]` map.
pub fn u_block(tape: &mut Tape, z: Var, p: &Bound, cfg: &DecoderConfig) -> Result<Var> {
    let (h0, w0) = cfg.seed;
    let seed = lin(tape, p, "decoder.u.seed", z)?;
    let seed = tape.reshape(seed, [cfg.u_channels, h0, w0])?;
    let mut x = conv_t_layer(tape, p, "decoder.u.t1", seed, 1)?;
    for name in ["decoder.u.t2", "decoder.u.t3"] {
        let g = conv_t_layer(tape, p, name, seed, 1)?;
        let prod = tape.hadamard(g, x)?;
        x = tape.add(prod, x)?;
    }
    Ok(x)
}

/// F block at `prefix` in standard mode: AdaIN, convolution, pixel shuffle
/// and (if `activation`) GeLU.
pub fn f_block(
    tape: &mut Tape,
    x: Var,
    z: Var,
    p: &Bound,
    prefix: &str,
    upscale: usize,
    activation: bool,
) -> Result<Var> {
    let cx = Ctx {
        p,
        z,
        activation,
        adain: true,
    };
    f_stage(tape, x, &cx, prefix, upscale)
}

fn f_stage(tape: &mut Tape, x: Var, cx: &Ctx, prefix: &str, upscale: usize) -> Result<Var> {
    let x = if cx.adain {
        adain(tape, x, cx.z, cx.p, &format!("{prefix}.adain"))?
    } else {
        x
    };
    let y = if cx.p.has(&format!("{prefix}.conv_a.weight")) {
        let a = conv_layer(tape, cx.p, &format!("{prefix}.conv_a"), x)?;
        let a = tape.pixel_shuffle(a, upscale)?;
        conv_layer(tape, cx.p, &format!("{prefix}.conv_b"), a)?
    } else {
        let a = conv_layer(tape, cx.p, &format!("{prefix}.conv"), x)?;
        if upscale > 1 {
            tape.pixel_shuffle(a, upscale)?
        } else {
            a
        }
    };
    if cx.activation {
        tape.gelu(y)
    } else {
        Ok(y)
    }
}

fn gate(tape: &mut Tape, y: Var, g: Var, broadcast: bool) -> Result<Var> {
    if broadcast {
        tape.mul_channels(y, g)
    } else {
        tape.hadamard(y, g)
    }
}

fn prodpoly(
    tape: &mut Tape,
    input: Var,
    cx: &Ctx,
    cfg: &DecoderConfig,
    r: usize,
) -> Result<Var> {
    let [s1, s2, s3] = cfg.upscales;
    let (ups, psi_stride) = match r {
        1 => ([s1, s2], 1),
        2 => ([s3, 1], s3),
        3 => ([1, 1], 1),
        _ => return Err(Error::invalid(format!("product block index {r} not in 1..=3"))),
    };
    let base = format!("decoder.b{r}");
    let psi = |tape: &mut Tape, m: usize| -> Result<Var> {
        let name = format!("{base}.psi{m}");
        if r == 1 {
            lin_vec(tape, cx.p, &name, cx.z)
        } else {
            conv_t_layer(tape, cx.p, &name, input, psi_stride)
        }
    };
    let f1 = f_stage(tape, input, cx, &format!("{base}.f1"), ups[0])?;
    let g1 = psi(tape, 1)?;
    let y1 = gate(tape, f1, g1, r == 1)?;
    let f2 = f_stage(tape, y1, cx, &format!("{base}.f2"), ups[1])?;
    let g2 = psi(tape, 2)?;
    gate(tape, f2, g2, r == 1)
}

/// One product block applied to `input` with conditioning `z: [1, k]`.
pub fn prodpoly_block(
    tape: &mut Tape,
    input: Var,
    z: Var,
    p: &Bound,
    cfg: &DecoderConfig,
    r: usize,
    mode: Mode,
) -> Result<Var> {
    let cx = Ctx {
        p,
        z,
        activation: cfg.activation && mode == Mode::Standard,
        adain: mode == Mode::Standard,
    };
    prodpoly(tape, input, &cx, cfg, r)
}

/// Decodes `z: [1, k]` into a `[3, pH, pW]` patch. In [`Mode::Probe`] the
/// result is the pre-sigmoid output of the polynomial backbone.
pub fn decode(tape: &mut Tape, z: Var, p: &Bound, cfg: &DecoderConfig, mode: Mode) -> Result<Var> {
    let cx = Ctx {
        p,
        z,
        activation: cfg.activation && mode == Mode::Standard,
        adain: mode == Mode::Standard,
    };
    let mut x = u_block(tape, z, p, cfg)?;
    for r in 1..=3 {
        x = prodpoly(tape, x, &cx, cfg, r)?;
    }
    let rgb = conv_layer(tape, p, "decoder.to_rgb", x)?;
    match mode {
        Mode::Standard => tape.sigmoid(rgb),
        Mode::Probe => Ok(rgb),
    }
}

/// [`decode`] in standard mode: values in `(0, 1)`.
pub fn decode_patch(tape: &mut Tape, z: Var, p: &Bound, cfg: &DecoderConfig) -> Result<Var> {
    decode(tape, z, p, cfg, Mode::Standard)
}

/// Parameters of a vector-valued coupled polynomial under `ncp.`.
pub fn init_ncp<R: Rng>(b: &mut ParamBuilder<R>, d: usize, rank: usize, out: usize, order: usize) {
    b.scope("ncp", |b| {
        for n in 1..=order {
            b.uniform(&format!("a{n}"), &[d, rank], d, ParamKind::Weight);
            if n > 1 {
                b.uniform(&format!("s{n}"), &[rank, rank], rank, ParamKind::Weight);
            }
            b.uniform(&format!("b{n}"), &[rank], rank, ParamKind::Bias);
        }
        b.uniform("c", &[rank, out], rank, ParamKind::Weight);
        b.uniform("q", &[out], rank, ParamKind::Bias);
    });
}

/// Coupled polynomial of `z: [1, d]`:
///
/// ```text
/// x1 = (A1ᵀ z) ⊙ b1
/// xn = (Anᵀ z) ⊙ (Snᵀ x(n-1) + bn)
/// y  = Cᵀ x_order + q
/// ```
///
/// With `use_activation` a GeLU follows every stage.
pub fn ncp_forward(
    tape: &mut Tape,
    z: Var,
    p: &Bound,
    order: usize,
    use_activation: bool,
) -> Result<Var> {
    if order == 0 {
        return Err(Error::invalid("polynomial order must be >= 1"));
    }
    let mut x: Option<Var> = None;
    for n in 1..=order {
        let az = tape.matmul(z, p.var(&format!("ncp.a{n}"))?)?;
        let b = p.var(&format!("ncp.b{n}"))?;
        let inner = match x {
            None => {
                let rank = tape.shape(az)?[1];
                let zeros = tape.constant([1, rank], vec![0.0; rank])?;
                tape.add_bias(zeros, b)?
            }
            Some(prev) => {
                let s = tape.matmul(prev, p.var(&format!("ncp.s{n}"))?)?;
                tape.add_bias(s, b)?
            }
        };
        let mut xn = tape.hadamard(az, inner)?;
        if use_activation {
            xn = tape.gelu(xn)?;
        }
        x = Some(xn);
    }
    let y = tape.matmul(x.expect("order >= 1"), p.var("ncp.c")?)?;
    tape.add_bias(y, p.var("ncp.q")?)
}

#[cfg(test)]
mod tests;
