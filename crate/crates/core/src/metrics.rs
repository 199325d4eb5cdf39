//! Image quality metrics on unit-range images.
//!
//! Images are `[C, H, W]` or `[H, W, C]` tensors; all functions only need the
//! two spatial extents and the channel count, passed through [`Layout`].

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// PSNR reported for identical inputs.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    /// `[C, H, W]`
    Chw,
    /// `[H, W, C]`
    Hwc,
}

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "metric",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    same_shape(a, b)?;
    let s: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(s / a.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

/// `10·log10(1 / MSE)`, capped at [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean of per-frame PSNRs.
pub fn video_psnr(a: &[Tensor], b: &[Tensor]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::invalid(format!(
            "cannot compare videos of {} and {} frames",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        total += psnr(x, y)?;
    }
    Ok(total / a.len() as f64)
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let g: Vec<f64> = (0..size)
        .map(|i| {
            let x = i as f64 - c;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Normalized 2-D Gaussian window, row-major `size × size`.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let g = gaussian_taps(size, sigma);
    let mut w = Vec::with_capacity(size * size);
    for a in &g {
        for b in &g {
            w.push(a * b);
        }
    }
    w
}

/// Window size used for an `h × w` image: 11, shrunk to fit small images.
pub fn ssim_window_size(h: usize, w: usize) -> usize {
    SSIM_WINDOW.min(h).min(w)
}

/// Planes of an image as `(channels, h, w, planar data)`.
fn planes(x: &Tensor, layout: Layout) -> Result<(usize, usize, usize, Vec<f64>)> {
    let &[a, b, c] = x.shape() else {
        return Err(Error::invalid(format!("expected a 3-D image, got {:?}", x.shape())));
    };
    Ok(match layout {
        Layout::Chw => (a, b, c, x.data().to_vec()),
        Layout::Hwc => {
            let mut out = vec![0.0; x.len()];
            for y in 0..a {
                for xx in 0..b {
                    for ch in 0..c {
                        out[(ch * a + y) * b + xx] = x.data()[(y * b + xx) * c + ch];
                    }
                }
            }
            (c, a, b, out)
        }
    })
}

fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64], k: usize) -> Vec<f64> {
    let (ho, wo) = (h - k + 1, w - k + 1);
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        for x in 0..wo {
            let mut s = 0.0;
            for i in 0..k {
                for j in 0..k {
                    s += win[i * k + j] * plane[(y + i) * w + x + j];
                }
            }
            out[y * wo + x] = s;
        }
    }
    out
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let k = ssim_window_size(h, w);
    let win = gaussian_window(k, SSIM_SIGMA);
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &win, k);
    let mu_b = filter_valid(b, h, w, &win, k);
    let aa = filter_valid(&prod(a, a), h, w, &win, k);
    let bb = filter_valid(&prod(b, b), h, w, &win, k);
    let ab = filter_valid(&prod(a, b), h, w, &win, k);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let c = (2.0 * cov + SSIM_C2) / (va + vb + SSIM_C2);
        let l = (2.0 * ma * mb + SSIM_C1) / (ma * ma + mb * mb + SSIM_C1);
        ssim += l * c;
        cs += c;
    }
    (ssim / n, cs / n)
}

fn ssim_parts(a: &Tensor, b: &Tensor, layout: Layout) -> Result<(f64, f64)> {
    same_shape(a, b)?;
    let (c, h, w, pa) = planes(a, layout)?;
    let (_, _, _, pb) = planes(b, layout)?;
    let (mut s, mut cs) = (0.0, 0.0);
    for ch in 0..c {
        let r = ch * h * w..(ch + 1) * h * w;
        let (x, y) = ssim_plane(&pa[r.clone()], &pb[r], h, w);
        s += x;
        cs += y;
    }
    Ok((s / c as f64, cs / c as f64))
}

/// Single-scale SSIM averaged over channels.
pub fn ssim(a: &Tensor, b: &Tensor, layout: Layout) -> Result<f64> {
    Ok(ssim_parts(a, b, layout)?.0)
}

/// 2×2 average pooling of a `[C, H, W]` image (odd trailing rows/cols dropped).
fn downsample(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else { unreachable!() };
    let (ho, wo) = (h / 2, w / 2);
    let mut out = Vec::with_capacity(c * ho * wo);
    let d = x.data();
    for ch in 0..c {
        for y in 0..ho {
            for xx in 0..wo {
                let at = |i: usize, j: usize| d[(ch * h + 2 * y + i) * w + 2 * xx + j];
                out.push(0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1)));
            }
        }
    }
    Tensor::new([c, ho, wo], out)
}

/// Number of MS-SSIM scales usable for an `h × w` image, at most `levels`:
/// the coarsest scale keeps at least a full 11×11 window.
pub fn ms_ssim_levels(h: usize, w: usize, levels: usize) -> usize {
    let mut l = levels.clamp(1, MS_SSIM_WEIGHTS.len());
    while l > 1 && (h.min(w) >> (l - 1)) < SSIM_WINDOW {
        l -= 1;
    }
    l
}

/// Multi-scale SSIM. Scales that do not fit are dropped and the remaining
/// weights renormalized; with a single scale this is [`ssim`].
pub fn ms_ssim(a: &Tensor, b: &Tensor, layout: Layout, levels: usize) -> Result<f64> {
    same_shape(a, b)?;
    let (c, h, w, pa) = planes(a, layout)?;
    let (_, _, _, pb) = planes(b, layout)?;
    let levels = ms_ssim_levels(h, w, levels);
    let mut x = Tensor::new([c, h, w], pa)?;
    let mut y = Tensor::new([c, h, w], pb)?;
    if levels == 1 {
        return ssim(&x, &y, Layout::Chw);
    }
    let weights = &MS_SSIM_WEIGHTS[..levels];
    let total: f64 = weights.iter().sum();
    let mut out = 1.0;
    for (i, wt) in weights.iter().enumerate() {
        let (s, cs) = ssim_parts(&x, &y, Layout::Chw)?;
        let term = if i + 1 == levels { s } else { cs };
        out *= term.max(0.0).powf(wt / total);
        if i + 1 < levels {
            x = downsample(&x)?;
            y = downsample(&y)?;
        }
    }
    Ok(out)
}
