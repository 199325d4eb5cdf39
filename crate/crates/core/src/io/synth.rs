//! Procedural test videos.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;

use super::video::VideoBuffer;
use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    /// A flat square sliding diagonally between opposite corners over a
    /// smooth background.
    MovingSquare,
    /// A travelling plane wave per channel.
    GradientWave,
    /// A checkerboard translating by about a pixel per frame.
    CheckerboardDrift,
}

impl SynthKind {
    pub const ALL: [SynthKind; 3] = [
        SynthKind::MovingSquare,
        SynthKind::GradientWave,
        SynthKind::CheckerboardDrift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::MovingSquare => "moving_square",
            SynthKind::GradientWave => "gradient_wave",
            SynthKind::CheckerboardDrift => "checkerboard_drift",
        }
    }
}

impl fmt::Display for SynthKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SynthKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown video kind `{s}`")))
    }
}

/// Corner where the moving square starts: 0 top-left, 1 top-right,
/// 2 bottom-left, 3 bottom-right.
pub fn square_corner(seed: u64) -> usize {
    rng::stream(seed, Stream::Synth).random_range(0..4)
}

/// Side length of the moving square.
pub fn square_side(height: usize, width: usize) -> usize {
    (height.min(width) / 4).max(2)
}

/// Fraction of pixel `[p, p + 1)` covered by the interval `[lo, lo + len)`.
fn coverage(p: usize, lo: f64, len: f64) -> f64 {
    let p = p as f64;
    ((p + 1.0).min(lo + len) - p.max(lo)).clamp(0.0, 1.0)
}

fn render(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f64) -> Tensor {
    let mut data = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        for x in 0..width {
            for c in 0..3 {
                data.push(f(y, x, c).clamp(0.0, 1.0));
            }
        }
    }
    Tensor::new([height, width, 3], data).unwrap()
}

pub fn synth_video(kind: SynthKind, frames: usize, height: usize, width: usize, seed: u64) -> Result<VideoBuffer> {
    if height < 8 || width < 8 || frames == 0 {
        return Err(Error::invalid("synthetic videos need H, D >= 8 and at least one frame"));
    }
    let mut rng = rng::stream(seed, Stream::Synth);
    let (h, w) = (height as f64, width as f64);
    let progress = |t: usize| if frames > 1 { t as f64 / (frames - 1) as f64 } else { 0.0 };
    let out: Vec<Tensor> = match kind {
        SynthKind::MovingSquare => {
            let corner: usize = rng.random_range(0..4);
            let color: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.65..0.95));
            let side = square_side(height, width) as f64;
            let (y0, x0) = ((corner / 2) as f64 * (h - side), (corner % 2) as f64 * (w - side));
            let (y1, x1) = (h - side - y0, w - side - x0);
            (0..frames)
                .map(|t| {
                    let a = progress(t);
                    let (sy, sx) = (y0 + (y1 - y0) * a, x0 + (x1 - x0) * a);
                    render(height, width, |y, x, c| {
                        let bg = match c {
                            0 => 0.15 + 0.25 * x as f64 / w,
                            1 => 0.2 + 0.25 * y as f64 / h,
                            _ => 0.35,
                        };
                        let cov = coverage(y, sy, side) * coverage(x, sx, side);
                        bg * (1.0 - cov) + color[c] * cov
                    })
                })
                .collect()
        }
        SynthKind::GradientWave => {
            let fy: f64 = rng.random_range(0.5..1.5);
            let fx: f64 = rng.random_range(0.5..1.5);
            let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
            (0..frames)
                .map(|t| {
                    let shift = PI * progress(t);
                    render(height, width, |y, x, c| {
                        let arg = 2.0 * PI * (fy * y as f64 / h + fx * x as f64 / w) + phase[c] - shift;
                        0.5 + 0.45 * arg.sin()
                    })
                })
                .collect()
        }
        SynthKind::CheckerboardDrift => {
            let dark: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.05..0.3));
            let light: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.7..0.95));
            let cell = (height.min(width) / 8).max(2);
            (0..frames)
                .map(|t| {
                    let (dy, dx) = (t / 2, t);
                    render(height, width, |y, x, c| {
                        let parity = ((y + dy) / cell + (x + dx) / cell) % 2;
                        if parity == 0 { dark[c] } else { light[c] }
                    })
                })
                .collect()
        }
    };
    VideoBuffer::new(out, kind.name())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_starts_at_seeded_corner() {
        for seed in 0..8 {
            let v = synth_video(SynthKind::MovingSquare, 4, 32, 40, seed).unwrap();
            let side = square_side(32, 40);
            let corner = square_corner(seed);
            let (y, x) = ((corner / 2) * (32 - side), (corner % 2) * (40 - side));
            let f = &v.frames[0];
            let px = |y: usize, x: usize| f.data()[(y * 40 + x) * 3];
            // the square's colour is flat, the background is a ramp
            assert_eq!(px(y, x), px(y + side - 1, x + side - 1));
            let (oy, ox) = (31 - (corner / 2) * 31, 39 - (corner % 2) * 39);
            assert_ne!(px(y, x), px(oy, ox));
        }
        let corners: std::collections::HashSet<usize> = (0..32).map(square_corner).collect();
        assert_eq!(corners.len(), 4);
    }

    #[test]
    fn square_moves() {
        let v = synth_video(SynthKind::MovingSquare, 8, 64, 64, 0).unwrap();
        assert_ne!(v.frames[0], v.frames[1]);
        assert_ne!(v.frames[0], v.frames[7]);
    }

    #[test]
    fn same_seed_same_video() {
        for kind in SynthKind::ALL {
            let a = synth_video(kind, 3, 16, 24, 7).unwrap();
            assert_eq!(a, synth_video(kind, 3, 16, 24, 7).unwrap());
            assert_eq!(a.dims(), (3, 16, 24));
            assert_eq!(kind.name().parse::<SynthKind>().unwrap(), kind);
        }
        assert!(synth_video(SynthKind::GradientWave, 1, 4, 16, 0).is_err());
        assert!("spiral".parse::<SynthKind>().is_err());
    }

    #[test]
    fn gradient_wave_spans_most_of_the_range() {
        let v = synth_video(SynthKind::GradientWave, 4, 32, 32, 3).unwrap();
        for f in &v.frames {
            let lo = f.data().iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = f.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(hi - lo >= 0.8, "{lo} {hi}");
        }
    }

    #[test]
    fn checkerboard_drifts() {
        let v = synth_video(SynthKind::CheckerboardDrift, 3, 16, 16, 1).unwrap();
        let px = |t: usize, y: usize, x: usize| v.frames[t].data()[(y * 16 + x) * 3];
        assert_eq!(px(1, 0, 0), px(0, 0, 1));
        assert_ne!(v.frames[0], v.frames[1]);
    }
}
