use std::sync::atomic::{AtomicU32, Ordering};

use super::conv::Window;
use super::gemm::{gemm, Mat};
use super::Tensor;
use crate::error::{Error, Result};

static NEXT_TAPE_ID: AtomicU32 = AtomicU32::new(1);

const GELU_C: f64 = 0.044_715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

/// Storage precision of recorded forward values.
///
/// `F32` rounds every operation output through `f32`, which reproduces the
/// storage error of a single-precision run. Gradient checks always use `F64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    #[default]
    F64,
    F32,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u32,
    idx: u32,
}

/// Elementwise kernels with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    /// tanh approximation, `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.
    Gelu,
    Sin,
    Cos,
    AddScalar(f64),
    MulScalar(f64),
    Sigmoid,
    Abs,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                0.5 * x * (1.0 + u.tanh())
            }
            Unary::Sin => x.sin(),
            Unary::Cos => x.cos(),
            Unary::AddScalar(s) => x + s,
            Unary::MulScalar(s) => x * s,
            Unary::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Unary::Abs => x.abs(),
        }
    }

    /// Derivative at input `x` with forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Gelu => {
                let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t)
                    + 0.5 * x * (1.0 - t * t) * SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x)
            }
            Unary::Sin => x.cos(),
            Unary::Cos => -x.sin(),
            Unary::AddScalar(_) => 1.0,
            Unary::MulScalar(s) => s,
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
        }
    }
}

enum Data<'a> {
    Owned(Vec<f64>),
    Borrowed(&'a [f64]),
}

impl Data<'_> {
    fn as_slice(&self) -> &[f64] {
        match self {
            Data::Owned(v) => v,
            Data::Borrowed(s) => s,
        }
    }
}

enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Hadamard(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Div(usize, usize),
    Unary(Unary, usize),
    Sum(usize),
    Mean(usize),
    Reshape(usize),
    Transpose { x: usize, rows: usize, cols: usize },
    Concat(Vec<usize>),
    Softmax { x: usize, outer: usize, len: usize, inner: usize },
    InstanceNorm { x: usize, inv_std: Vec<f64> },
    Conv2d { x: usize, w: usize, win: Window, out_c: usize, cols: Vec<f64> },
    ConvTranspose2d { x: usize, w: usize, win: Window, in_c: usize },
    PixelShuffle { x: usize, s: usize },
    MulChannels { x: usize, v: usize },
    AddChannels { x: usize, v: usize },
    AddBias { x: usize, b: usize },
    Filter { x: usize, kernel: Vec<f64>, kh: usize, kw: usize },
}

struct Node<'a> {
    shape: Vec<usize>,
    value: Data<'a>,
    op: Op,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Records one forward pass. Values borrowed from parameter storage live for
/// `'a`; everything computed is owned by the tape.
pub struct Tape<'a> {
    id: u32,
    precision: Precision,
    nodes: Vec<Node<'a>>,
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

fn chw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::invalid(format!("{op}: expected [C, H, W], got {shape:?}"))),
    }
}

fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Vec<f64>>], j: usize) -> Option<&'g mut Vec<f64>> {
    if !nodes[j].requires_grad {
        return None;
    }
    let n = nodes[j].value.as_slice().len();
    Some(grads[j].get_or_insert_with(|| vec![0.0; n]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self::with_precision(Precision::F64)
    }

    pub fn with_precision(precision: Precision) -> Self {
        Tape {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            precision,
            nodes: Vec::new(),
        }
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize> {
        if v.tape != self.id || v.idx as usize >= self.nodes.len() {
            return Err(Error::DetachedTape);
        }
        Ok(v.idx as usize)
    }

    fn var(&self, idx: usize) -> Var {
        Var {
            tape: self.id,
            idx: idx as u32,
        }
    }

    fn push(&mut self, shape: Vec<usize>, mut value: Vec<f64>, op: Op, inputs: &[usize]) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.precision == Precision::F32 {
            value.iter_mut().for_each(|v| *v = *v as f32 as f64);
        }
        let requires_grad = inputs.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            shape,
            value: Data::Owned(value),
            op,
            requires_grad,
            grad: None,
        });
        self.var(self.nodes.len() - 1)
    }

    fn push_leaf(&mut self, shape: Vec<usize>, value: Data<'a>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            shape,
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        self.var(self.nodes.len() - 1)
    }

    fn val(&self, i: usize) -> &[f64] {
        self.nodes[i].value.as_slice()
    }

    // ---- leaves -------------------------------------------------------------

    pub fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Var {
        let Tensor { shape, data } = t;
        self.push_leaf(shape, Data::Owned(data), requires_grad)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Var> {
        Ok(self.leaf(Tensor::new(shape, data)?, false))
    }

    /// Differentiable leaf that borrows its storage (model parameters).
    pub fn param(&mut self, shape: &[usize], data: &'a [f64]) -> Result<Var> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::invalid(format!(
                "parameter shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(self.push_leaf(shape.to_vec(), Data::Borrowed(data), true))
    }

    // ---- inspection ---------------------------------------------------------

    pub fn value(&self, v: Var) -> Result<&[f64]> {
        Ok(self.val(self.idx(v)?))
    }

    pub fn shape(&self, v: Var) -> Result<&[usize]> {
        Ok(&self.nodes[self.idx(v)?].shape)
    }

    pub fn tensor(&self, v: Var) -> Result<Tensor> {
        let i = self.idx(v)?;
        Ok(Tensor {
            shape: self.nodes[i].shape.clone(),
            data: self.val(i).to_vec(),
        })
    }

    pub fn requires_grad(&self, v: Var) -> Result<bool> {
        Ok(self.nodes[self.idx(v)?].requires_grad)
    }

    /// Accumulated gradient of a differentiable leaf after [`Tape::backward`].
    pub fn grad(&self, v: Var) -> Result<Option<&[f64]>> {
        Ok(self.nodes[self.idx(v)?].grad.as_deref())
    }

    pub fn take_grad(&mut self, v: Var) -> Result<Option<Vec<f64>>> {
        let i = self.idx(v)?;
        Ok(self.nodes[i].grad.take())
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    // ---- linear algebra -----------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let (sa, sb) = (&self.nodes[ia].shape, &self.nodes[ib].shape);
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::Shape {
                    op: "matmul",
                    lhs: sa.clone(),
                    rhs: sb.clone(),
                })
            }
        };
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, Mat::n(self.val(ia)), Mat::n(self.val(ib)), 0.0, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul { a: ia, b: ib, m, k, n }, &[ia, ib]))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let (rows, cols) = match self.nodes[ix].shape.as_slice() {
            [r, c] => (*r, *c),
            s => return Err(Error::invalid(format!("transpose needs a matrix, got {s:?}"))),
        };
        let src = self.val(ix);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                out[c * rows + r] = src[r * cols + c];
            }
        }
        Ok(self.push(vec![cols, rows], out, Op::Transpose { x: ix, rows, cols }, &[ix]))
    }

    // ---- elementwise --------------------------------------------------------

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        same_shape(name, &self.nodes[ia].shape, &self.nodes[ib].shape)?;
        let out: Vec<f64> = self
            .val(ia)
            .iter()
            .zip(self.val(ib))
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.nodes[ia].shape.clone();
        Ok(self.push(shape, out, op(ia, ib), &[ia, ib]))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("hadamard", a, b, |x, y| x * y, Op::Hadamard)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("div", a, b, |x, y| x / y, Op::Div)
    }

    pub fn unary(&mut self, kind: Unary, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let out: Vec<f64> = self.val(ix).iter().map(|&v| kind.apply(v)).collect();
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::Unary(kind, ix), &[ix]))
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Gelu, x)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(Unary::Sigmoid, x)
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(Unary::AddScalar(s), x)
    }

    pub fn mul_scalar(&mut self, x: Var, s: f64) -> Result<Var> {
        self.unary(Unary::MulScalar(s), x)
    }

    // ---- reductions and layout ----------------------------------------------

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let s: f64 = self.val(ix).iter().sum();
        Ok(self.push(vec![1], vec![s], Op::Sum(ix), &[ix]))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = self.val(ix);
        let s = v.iter().sum::<f64>() / v.len() as f64;
        Ok(self.push(vec![1], vec![s], Op::Mean(ix), &[ix]))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = shape.into();
        if shape.iter().product::<usize>() != self.val(ix).len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.nodes[ix].shape.clone(),
                rhs: shape,
            });
        }
        let out = self.val(ix).to_vec();
        Ok(self.push(shape, out, Op::Reshape(ix), &[ix]))
    }

    /// Concatenates along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let idxs = parts
            .iter()
            .map(|&p| self.idx(p))
            .collect::<Result<Vec<_>>>()?;
        let first = idxs
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let tail = self.nodes[*first].shape[1..].to_vec();
        let mut lead = 0;
        let mut out = Vec::new();
        for &i in &idxs {
            let s = &self.nodes[i].shape;
            if s[1..] != tail[..] {
                return Err(Error::Shape {
                    op: "concat",
                    lhs: self.nodes[*first].shape.clone(),
                    rhs: s.clone(),
                });
            }
            lead += s[0];
            out.extend_from_slice(self.val(i));
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        Ok(self.push(shape, out, Op::Concat(idxs.clone()), &idxs))
    }

    /// Max-subtracted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.nodes[ix].shape.clone();
        if axis >= shape.len() {
            return Err(Error::invalid(format!(
                "softmax axis {axis} out of range for {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let len = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let src = self.val(ix);
        let mut out = vec![0.0; src.len()];
        for o in 0..outer {
            for q in 0..inner {
                let at = |a: usize| (o * len + a) * inner + q;
                let mx = (0..len).map(|a| src[at(a)]).fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for a in 0..len {
                    let e = (src[at(a)] - mx).exp();
                    out[at(a)] = e;
                    z += e;
                }
                for a in 0..len {
                    out[at(a)] /= z;
                }
            }
        }
        Ok(self.push(
            shape,
            out,
            Op::Softmax {
                x: ix,
                outer,
                len,
                inner,
            },
            &[ix],
        ))
    }

    // ---- feature-map operations ---------------------------------------------

    /// Per-channel standardization of a `[C, H, W]` map with the biased variance.
    pub fn instance_norm(&mut self, x: Var, eps: f64) -> Result<Var> {
        let ix = self.idx(x)?;
        let shape = self.nodes[ix].shape.clone();
        let (c, h, w) = chw("instance_norm", &shape)?;
        if h * w < 2 {
            return Err(Error::invalid("instance_norm needs at least two positions"));
        }
        let n = h * w;
        let src = self.val(ix);
        let mut out = vec![0.0; src.len()];
        let mut inv_std = vec![0.0; c];
        for ch in 0..c {
            let xs = &src[ch * n..(ch + 1) * n];
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[ch] = is;
            for (o, v) in out[ch * n..(ch + 1) * n].iter_mut().zip(xs) {
                *o = (v - mean) * is;
            }
        }
        Ok(self.push(shape, out, Op::InstanceNorm { x: ix, inv_std }, &[ix]))
    }

    /// Cross-correlation of `x: [C, H, W]` with `w: [O, C, kh, kw]`, zero padded.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let (c, h, wd) = chw("conv2d", &self.nodes[ix].shape)?;
        let (o, kc, kh, kw) = match *self.nodes[iw].shape.as_slice() {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            _ => {
                return Err(Error::Shape {
                    op: "conv2d",
                    lhs: self.nodes[ix].shape.clone(),
                    rhs: self.nodes[iw].shape.clone(),
                })
            }
        };
        if kc != c {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: self.nodes[ix].shape.clone(),
                rhs: self.nodes[iw].shape.clone(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be at least 1"));
        }
        let win = Window {
            channels: c,
            height: h,
            width: wd,
            kh,
            kw,
            stride,
            pad,
        };
        let (ho, wo) = win.out_dims().ok_or_else(|| {
            Error::invalid(format!(
                "conv2d kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                wd + 2 * pad
            ))
        })?;
        let cols = win.im2col(self.val(ix));
        let mut out = vec![0.0; o * ho * wo];
        gemm(o, win.rows(), ho * wo, Mat::n(self.val(iw)), Mat::n(&cols), 0.0, &mut out);
        let keep = if self.nodes[iw].requires_grad { cols } else { Vec::new() };
        Ok(self.push(
            vec![o, ho, wo],
            out,
            Op::Conv2d {
                x: ix,
                w: iw,
                win,
                out_c: o,
                cols: keep,
            },
            &[ix, iw],
        ))
    }

    /// Transposed convolution of `x: [C, H, W]` with `w: [C, O, kh, kw]`;
    /// output is `[O, (H−1)·stride − 2·pad + kh, …]`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var> {
        let (ix, iw) = (self.idx(x)?, self.idx(w)?);
        let (c, h, wd) = chw("conv_transpose2d", &self.nodes[ix].shape)?;
        let (kc, o, kh, kw) = match *self.nodes[iw].shape.as_slice() {
            [kc, o, kh, kw] if kc == c => (kc, o, kh, kw),
            _ => {
                return Err(Error::Shape {
                    op: "conv_transpose2d",
                    lhs: self.nodes[ix].shape.clone(),
                    rhs: self.nodes[iw].shape.clone(),
                })
            }
        };
        if stride == 0 {
            return Err(Error::invalid("conv_transpose2d stride must be at least 1"));
        }
        let ho = (h as isize - 1) * stride as isize - 2 * pad as isize + kh as isize;
        let wo = (wd as isize - 1) * stride as isize - 2 * pad as isize + kw as isize;
        if ho <= 0 || wo <= 0 {
            return Err(Error::invalid(format!(
                "conv_transpose2d output size {ho}x{wo} is not positive"
            )));
        }
        let (ho, wo) = (ho as usize, wo as usize);
        // Geometry of the forward convolution this operator is the adjoint of.
        let win = Window {
            channels: o,
            height: ho,
            width: wo,
            kh,
            kw,
            stride,
            pad,
        };
        debug_assert_eq!(win.out_dims(), Some((h, wd)));
        let mut cols = vec![0.0; win.rows() * h * wd];
        gemm(win.rows(), kc, h * wd, Mat::t(self.val(iw)), Mat::n(self.val(ix)), 0.0, &mut cols);
        let mut out = vec![0.0; o * ho * wo];
        win.col2im(&cols, &mut out);
        Ok(self.push(
            vec![o, ho, wo],
            out,
            Op::ConvTranspose2d {
                x: ix,
                w: iw,
                win,
                in_c: c,
            },
            &[ix, iw],
        ))
    }

    /// `[C·s², H, W] → [C, s·H, s·W]`.
    pub fn pixel_shuffle(&mut self, x: Var, s: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let (cs, h, w) = chw("pixel_shuffle", &self.nodes[ix].shape)?;
        if s == 0 || cs % (s * s) != 0 {
            return Err(Error::invalid(format!(
                "pixel_shuffle: {cs} channels not divisible by {s}²"
            )));
        }
        let c = cs / (s * s);
        let src = self.val(ix);
        let mut out = vec![0.0; src.len()];
        let (oh, ow) = (h * s, w * s);
        for ch in 0..c {
            for i in 0..s {
                for j in 0..s {
                    let plane = &src[((ch * s + i) * s + j) * h * w..][..h * w];
                    for y in 0..h {
                        let row = &mut out[(ch * oh + y * s + i) * ow..][..ow];
                        for x in 0..w {
                            row[x * s + j] = plane[y * w + x];
                        }
                    }
                }
            }
        }
        Ok(self.push(vec![c, oh, ow], out, Op::PixelShuffle { x: ix, s }, &[ix]))
    }

    fn channel_args(&self, op: &'static str, x: Var, v: Var) -> Result<(usize, usize, usize)> {
        let (ix, iv) = (self.idx(x)?, self.idx(v)?);
        let (c, h, w) = chw(op, &self.nodes[ix].shape)?;
        if self.val(iv).len() != c {
            return Err(Error::Shape {
                op,
                lhs: self.nodes[ix].shape.clone(),
                rhs: self.nodes[iv].shape.clone(),
            });
        }
        Ok((ix, iv, h * w))
    }

    /// Scales channel `c` of `x: [C, H, W]` by `v[c]`.
    pub fn mul_channels(&mut self, x: Var, v: Var) -> Result<Var> {
        let (ix, iv, n) = self.channel_args("mul_channels", x, v)?;
        let scale = self.val(iv);
        let out: Vec<f64> = self
            .val(ix)
            .iter()
            .enumerate()
            .map(|(p, &a)| a * scale[p / n])
            .collect();
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::MulChannels { x: ix, v: iv }, &[ix, iv]))
    }

    /// Adds `v[c]` to every position of channel `c`.
    pub fn add_channels(&mut self, x: Var, v: Var) -> Result<Var> {
        let (ix, iv, n) = self.channel_args("add_channels", x, v)?;
        let shift = self.val(iv);
        let out: Vec<f64> = self
            .val(ix)
            .iter()
            .enumerate()
            .map(|(p, &a)| a + shift[p / n])
            .collect();
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::AddChannels { x: ix, v: iv }, &[ix, iv]))
    }

    /// Adds a bias vector along the last axis.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (ix, ib) = (self.idx(x)?, self.idx(b)?);
        let last = *self.nodes[ix].shape.last().unwrap_or(&0);
        if self.val(ib).len() != last {
            return Err(Error::Shape {
                op: "add_bias",
                lhs: self.nodes[ix].shape.clone(),
                rhs: self.nodes[ib].shape.clone(),
            });
        }
        let bias = self.val(ib);
        let out: Vec<f64> = self
            .val(ix)
            .iter()
            .enumerate()
            .map(|(p, &a)| a + bias[p % last])
            .collect();
        let shape = self.nodes[ix].shape.clone();
        Ok(self.push(shape, out, Op::AddBias { x: ix, b: ib }, &[ix, ib]))
    }

    /// Valid (unpadded) per-channel correlation with a fixed `kh×kw` kernel.
    pub fn filter(&mut self, x: Var, kernel: &[f64], kh: usize, kw: usize) -> Result<Var> {
        let ix = self.idx(x)?;
        let (c, h, w) = chw("filter", &self.nodes[ix].shape)?;
        if kernel.len() != kh * kw || kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(Error::invalid(format!(
                "filter: kernel {kh}x{kw} does not fit {h}x{w}"
            )));
        }
        let (ho, wo) = (h - kh + 1, w - kw + 1);
        let src = self.val(ix);
        let mut out = vec![0.0; c * ho * wo];
        for ch in 0..c {
            let plane = &src[ch * h * w..][..h * w];
            let dst = &mut out[ch * ho * wo..][..ho * wo];
            for i in 0..kh {
                for j in 0..kw {
                    let k = kernel[i * kw + j];
                    for y in 0..ho {
                        let row = &plane[(y + i) * w + j..][..wo];
                        for (d, s) in dst[y * wo..(y + 1) * wo].iter_mut().zip(row) {
                            *d += k * s;
                        }
                    }
                }
            }
        }
        Ok(self.push(
            vec![c, ho, wo],
            out,
            Op::Filter {
                x: ix,
                kernel: kernel.to_vec(),
                kh,
                kw,
            },
            &[ix],
        ))
    }

    // ---- reverse pass -------------------------------------------------------

    /// Propagates `d loss` to every differentiable leaf, accumulating into
    /// leaf gradients. Leaves that do not influence the loss get zeros.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let il = self.idx(loss)?;
        if self.val(il).len() != 1 {
            return Err(Error::NonScalarLoss(self.nodes[il].shape.clone()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=il).map(|_| None).collect();
        if self.nodes[il].requires_grad {
            grads[il] = Some(vec![1.0]);
        }
        for i in (0..=il).rev() {
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        for (i, node) in self.nodes.iter_mut().enumerate() {
            if !(node.requires_grad && matches!(node.op, Op::Leaf)) {
                continue;
            }
            let n = node.value.as_slice().len();
            let acc = node.grad.get_or_insert_with(|| vec![0.0; n]);
            if let Some(Some(g)) = grads.get(i) {
                add_into(acc, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |j: usize| nodes[j].value.as_slice();
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                if let Some(ga) = slot(nodes, grads, a) {
                    gemm(m, n, k, Mat::n(g), Mat::t(val(b)), 1.0, ga);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    gemm(k, m, n, Mat::t(val(a)), Mat::n(g), 1.0, gb);
                }
            }
            &Op::Hadamard(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(val(b)) {
                        *d += gv * bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((d, gv), av) in gb.iter_mut().zip(g).zip(val(a)) {
                        *d += gv * av;
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    add_into(gb, g);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    add_into(ga, g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(d, gv)| *d -= gv);
                }
            }
            &Op::Div(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((d, gv), bv) in ga.iter_mut().zip(g).zip(val(b)) {
                        *d += gv / bv;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for (((d, gv), av), bv) in gb.iter_mut().zip(g).zip(val(a)).zip(val(b)) {
                        *d -= gv * av / (bv * bv);
                    }
                }
            }
            &Op::Unary(kind, x) => {
                let y = val(i);
                if let Some(gx) = slot(nodes, grads, x) {
                    for (((d, gv), xv), yv) in gx.iter_mut().zip(g).zip(val(x)).zip(y) {
                        *d += gv * kind.derivative(*xv, *yv);
                    }
                }
            }
            &Op::Sum(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    gx.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    let s = g[0] / gx.len() as f64;
                    gx.iter_mut().for_each(|d| *d += s);
                }
            }
            &Op::Reshape(x) => {
                if let Some(gx) = slot(nodes, grads, x) {
                    add_into(gx, g);
                }
            }
            &Op::Transpose { x, rows, cols } => {
                if let Some(gx) = slot(nodes, grads, x) {
                    for r in 0..rows {
                        for c in 0..cols {
                            gx[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = val(p).len();
                    if let Some(gp) = slot(nodes, grads, p) {
                        add_into(gp, &g[off..off + n]);
                    }
                    off += n;
                }
            }
            &Op::Softmax {
                x,
                outer,
                len,
                inner,
            } => {
                let y = val(i);
                if let Some(gx) = slot(nodes, grads, x) {
                    for o in 0..outer {
                        for q in 0..inner {
                            let at = |a: usize| (o * len + a) * inner + q;
                            let dot: f64 = (0..len).map(|a| g[at(a)] * y[at(a)]).sum();
                            for a in 0..len {
                                gx[at(a)] += y[at(a)] * (g[at(a)] - dot);
                            }
                        }
                    }
                }
            }
            Op::InstanceNorm { x, inv_std } => {
                let y = val(i);
                let c = inv_std.len();
                if let Some(gx) = slot(nodes, grads, *x) {
                    let n = y.len() / c;
                    let nf = n as f64;
                    for ch in 0..c {
                        let gs = &g[ch * n..(ch + 1) * n];
                        let ys = &y[ch * n..(ch + 1) * n];
                        let sum_g: f64 = gs.iter().sum();
                        let sum_gy: f64 = gs.iter().zip(ys).map(|(a, b)| a * b).sum();
                        let k = inv_std[ch] / nf;
                        for p in 0..n {
                            gx[ch * n + p] += k * (nf * gs[p] - sum_g - ys[p] * sum_gy);
                        }
                    }
                }
            }
            Op::Conv2d {
                x,
                w,
                win,
                out_c,
                cols,
            } => {
                let (ho, wo) = win.out_dims().expect("validated geometry");
                let spatial = ho * wo;
                if let Some(gw) = slot(nodes, grads, *w) {
                    gemm(*out_c, spatial, win.rows(), Mat::n(g), Mat::t(cols), 1.0, gw);
                }
                if nodes[*x].requires_grad {
                    let mut dcols = vec![0.0; win.rows() * spatial];
                    gemm(win.rows(), *out_c, spatial, Mat::t(val(*w)), Mat::n(g), 0.0, &mut dcols);
                    if let Some(gx) = slot(nodes, grads, *x) {
                        win.col2im(&dcols, gx);
                    }
                }
            }
            Op::ConvTranspose2d { x, w, win, in_c } => {
                let (h, wd) = win.out_dims().expect("validated geometry");
                let dcols = win.im2col(g);
                if let Some(gx) = slot(nodes, grads, *x) {
                    gemm(*in_c, win.rows(), h * wd, Mat::n(val(*w)), Mat::n(&dcols), 1.0, gx);
                }
                if let Some(gw) = slot(nodes, grads, *w) {
                    gemm(*in_c, h * wd, win.rows(), Mat::n(val(*x)), Mat::t(&dcols), 1.0, gw);
                }
            }
            &Op::PixelShuffle { x, s } => {
                let shape = &nodes[x].shape;
                let (cs, h, w) = (shape[0], shape[1], shape[2]);
                let c = cs / (s * s);
                let (oh, ow) = (h * s, w * s);
                if let Some(gx) = slot(nodes, grads, x) {
                    for ch in 0..c {
                        for i in 0..s {
                            for j in 0..s {
                                let plane = &mut gx[((ch * s + i) * s + j) * h * w..][..h * w];
                                for y in 0..h {
                                    let row = &g[(ch * oh + y * s + i) * ow..][..ow];
                                    for xx in 0..w {
                                        plane[y * w + xx] += row[xx * s + j];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            &Op::MulChannels { x, v } => {
                let c = val(v).len();
                let n = g.len() / c;
                if let Some(gx) = slot(nodes, grads, x) {
                    let scale = val(v);
                    for (p, (d, gv)) in gx.iter_mut().zip(g).enumerate() {
                        *d += gv * scale[p / n];
                    }
                }
                if let Some(gv) = slot(nodes, grads, v) {
                    let xs = val(x);
                    for ch in 0..c {
                        gv[ch] += g[ch * n..(ch + 1) * n]
                            .iter()
                            .zip(&xs[ch * n..(ch + 1) * n])
                            .map(|(a, b)| a * b)
                            .sum::<f64>();
                    }
                }
            }
            &Op::AddChannels { x, v } => {
                let c = val(v).len();
                let n = g.len() / c;
                if let Some(gx) = slot(nodes, grads, x) {
                    add_into(gx, g);
                }
                if let Some(gv) = slot(nodes, grads, v) {
                    for ch in 0..c {
                        gv[ch] += g[ch * n..(ch + 1) * n].iter().sum::<f64>();
                    }
                }
            }
            &Op::AddBias { x, b } => {
                let n = val(b).len();
                if let Some(gx) = slot(nodes, grads, x) {
                    add_into(gx, g);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for (p, gv) in g.iter().enumerate() {
                        gb[p % n] += gv;
                    }
                }
            }
            Op::Filter { x, kernel, kh, kw } => {
                let shape = &nodes[*x].shape;
                let (c, h, w) = (shape[0], shape[1], shape[2]);
                let (ho, wo) = (h - kh + 1, w - kw + 1);
                if let Some(gx) = slot(nodes, grads, *x) {
                    for ch in 0..c {
                        let src = &g[ch * ho * wo..][..ho * wo];
                        let plane = &mut gx[ch * h * w..][..h * w];
                        for i in 0..*kh {
                            for j in 0..*kw {
                                let k = kernel[i * kw + j];
                                for y in 0..ho {
                                    let row = &mut plane[(y + i) * w + j..][..wo];
                                    for (d, s) in row.iter_mut().zip(&src[y * wo..(y + 1) * wo]) {
                                        *d += k * s;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
