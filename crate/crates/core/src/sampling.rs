//! Hierarchical patch-wise spatial sampling.
//!
//! A frame of `H×D` pixels is split into `M×N` coarse patches, each of which is
//! split again into `K×L` sub-patches. Patch coordinates are the normalized
//! grid values at the floor-midpoint pixel of each (sub-)patch, so every
//! coordinate handed to the network is an exact value of the global grid.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sampling geometry: `frames × height × width` video, `m × n` coarse patches,
/// `k × l` fine sub-patches per coarse patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub l: usize,
}

impl PatchSpec {
    pub fn new(
        frames: usize,
        height: usize,
        width: usize,
        (m, n): (usize, usize),
        (k, l): (usize, usize),
    ) -> Result<Self> {
        let spec = PatchSpec {
            frames,
            height,
            width,
            m,
            n,
            k,
            l,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("m", self.m),
            ("n", self.n),
            ("k", self.k),
            ("l", self.l),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("patch spec field `{name}` must be >= 1")));
        }
        let check = |what: &str, whole: usize, parts: usize| {
            if !whole.is_multiple_of(parts) {
                Err(Error::invalid(format!("{what}: {parts} does not divide {whole}")))
            } else {
                Ok(())
            }
        };
        check("m", self.height, self.m)?;
        check("n", self.width, self.n)?;
        check("k", self.patch_height(), self.k)?;
        check("l", self.patch_width(), self.l)?;
        Ok(())
    }

    pub fn patch_height(&self) -> usize {
        self.height / self.m
    }

    pub fn patch_width(&self) -> usize {
        self.width / self.n
    }

    pub fn patches_per_frame(&self) -> usize {
        self.m * self.n
    }

    /// Normalized time of frame `index`; a single-frame video sits at 0.
    pub fn frame_time(&self, index: usize) -> f64 {
        if self.frames <= 1 {
            0.0
        } else {
            index as f64 / (self.frames - 1) as f64
        }
    }
}

/// Normalized `H×D` coordinate grid; `(i, j) ↦ (i/(H−1), j/(D−1))`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    rows: Vec<f64>,
    cols: Vec<f64>,
}

impl Grid {
    pub fn height(&self) -> usize {
        self.rows.len()
    }

    pub fn width(&self) -> usize {
        self.cols.len()
    }

    pub fn at(&self, i: usize, j: usize) -> [f64; 2] {
        [self.rows[i], self.cols[j]]
    }
}

pub fn build_grid(height: usize, width: usize) -> Result<Grid> {
    if height < 2 || width < 2 {
        return Err(Error::invalid(format!(
            "grid needs at least 2x2 pixels, got {height}x{width}"
        )));
    }
    let axis = |n: usize| (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    Ok(Grid {
        rows: axis(height),
        cols: axis(width),
    })
}

/// Centroid of a coarse patch, `(row, col)` in `[0, 1]²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoarseCoord(pub [f64; 2]);

/// `K×L` sub-patch centroids of one coarse patch, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FineCoords {
    pub k: usize,
    pub l: usize,
    pub coords: Vec<[f64; 2]>,
}

impl FineCoords {
    pub fn get(&self, k: usize, l: usize) -> [f64; 2] {
        self.coords[k * self.l + l]
    }
}

/// A strided run of pixel indices `start, start + step, …` (`len` entries).
#[derive(Clone, Copy, Debug)]
struct Span {
    start: usize,
    len: usize,
    step: usize,
}

impl Span {
    /// Floor-midpoint of the inclusive index range.
    fn mid(&self) -> usize {
        let last = self.start + (self.len - 1) * self.step;
        (self.start + last) / 2
    }

    fn sub(&self, parts: usize, index: usize) -> Span {
        let len = self.len / parts;
        Span {
            start: self.start + index * len * self.step,
            len,
            step: self.step,
        }
    }
}

/// Pixel spans of coarse patch `(i, j)` on a grid `factor` times denser than
/// the frame, sampled at sub-pixel phase `phase`. `factor = 1`, `phase = (0, 0)`
/// is the ordinary patch layout.
fn patch_spans(
    spec: &PatchSpec,
    factor: usize,
    phase: (usize, usize),
    i: usize,
    j: usize,
) -> (Span, Span) {
    let (ph, pw) = (spec.patch_height(), spec.patch_width());
    (
        Span {
            start: i * ph * factor + phase.0,
            len: ph,
            step: factor,
        },
        Span {
            start: j * pw * factor + phase.1,
            len: pw,
            step: factor,
        },
    )
}

fn check_grid(spec: &PatchSpec, grid: &Grid, factor: usize) -> Result<()> {
    if grid.height() != spec.height * factor || grid.width() != spec.width * factor {
        return Err(Error::invalid(format!(
            "grid {}x{} does not match {}x{} at factor {factor}",
            grid.height(),
            grid.width(),
            spec.height,
            spec.width
        )));
    }
    Ok(())
}

fn check_patch(spec: &PatchSpec, i: usize, j: usize) -> Result<()> {
    if i >= spec.m || j >= spec.n {
        return Err(Error::invalid(format!(
            "patch ({i}, {j}) outside the {}x{} patch grid",
            spec.m, spec.n
        )));
    }
    Ok(())
}

/// Coarse centroids `λ` of all `M×N` patches, row-major.
pub fn coarse_coords(spec: &PatchSpec, grid: &Grid) -> Result<Vec<CoarseCoord>> {
    check_grid(spec, grid, 1)?;
    let mut out = Vec::with_capacity(spec.m * spec.n);
    for i in 0..spec.m {
        for j in 0..spec.n {
            let (rows, cols) = patch_spans(spec, 1, (0, 0), i, j);
            out.push(CoarseCoord(grid.at(rows.mid(), cols.mid())));
        }
    }
    Ok(out)
}

/// Fine centroids `Λ` of coarse patch `(i, j)`.
pub fn fine_coords(spec: &PatchSpec, grid: &Grid, i: usize, j: usize) -> Result<FineCoords> {
    check_grid(spec, grid, 1)?;
    check_patch(spec, i, j)?;
    Ok(fine_from_spans(spec, grid, patch_spans(spec, 1, (0, 0), i, j)))
}

fn fine_from_spans(spec: &PatchSpec, grid: &Grid, (rows, cols): (Span, Span)) -> FineCoords {
    let mut coords = Vec::with_capacity(spec.k * spec.l);
    for k in 0..spec.k {
        for l in 0..spec.l {
            coords.push(grid.at(rows.sub(spec.k, k).mid(), cols.sub(spec.l, l).mid()));
        }
    }
    FineCoords {
        k: spec.k,
        l: spec.l,
        coords,
    }
}

/// Both coordinates of patch `(i, j)` when the frame is resampled on a grid
/// `factor` times denser, taking every `factor`-th virtual pixel starting at
/// `phase`. Used to query the representation between the training pixels.
pub fn phase_coords(
    spec: &PatchSpec,
    grid: &Grid,
    factor: usize,
    phase: (usize, usize),
    i: usize,
    j: usize,
) -> Result<(CoarseCoord, FineCoords)> {
    if factor == 0 || phase.0 >= factor || phase.1 >= factor {
        return Err(Error::invalid(format!(
            "phase {phase:?} invalid for factor {factor}"
        )));
    }
    check_grid(spec, grid, factor)?;
    check_patch(spec, i, j)?;
    let spans = patch_spans(spec, factor, phase, i, j);
    let coarse = CoarseCoord(grid.at(spans.0.mid(), spans.1.mid()));
    Ok((coarse, fine_from_spans(spec, grid, spans)))
}

/// Crops patch `(i, j)` out of an `[H, D, C]` frame.
pub fn extract_patch(frame: &Tensor, spec: &PatchSpec, i: usize, j: usize) -> Result<Tensor> {
    let &[h, w, c] = frame.shape() else {
        return Err(Error::invalid(format!(
            "frame must be [H, D, C], got {:?}",
            frame.shape()
        )));
    };
    if h != spec.height || w != spec.width {
        return Err(Error::invalid(format!(
            "frame {h}x{w} does not match spec {}x{}",
            spec.height, spec.width
        )));
    }
    check_patch(spec, i, j)?;
    let (ph, pw) = (spec.patch_height(), spec.patch_width());
    let mut out = Vec::with_capacity(ph * pw * c);
    for y in i * ph..(i + 1) * ph {
        let row = &frame.data()[(y * w + j * pw) * c..(y * w + (j + 1) * pw) * c];
        out.extend_from_slice(row);
    }
    Tensor::new([ph, pw, c], out)
}

/// `[H, W, C]` → `[C, H, W]`.
pub fn hwc_to_chw(x: &Tensor) -> Result<Tensor> {
    let &[h, w, c] = x.shape() else {
        return Err(Error::invalid("expected [H, W, C]"));
    };
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for y in 0..h {
        for xx in 0..w {
            for ch in 0..c {
                out[(ch * h + y) * w + xx] = src[(y * w + xx) * c + ch];
            }
        }
    }
    Tensor::new([c, h, w], out)
}

/// `[C, H, W]` → `[H, W, C]`.
pub fn chw_to_hwc(x: &Tensor) -> Result<Tensor> {
    let &[c, h, w] = x.shape() else {
        return Err(Error::invalid("expected [C, H, W]"));
    };
    let src = x.data();
    let mut out = vec![0.0; src.len()];
    for ch in 0..c {
        for y in 0..h {
            for xx in 0..w {
                out[(y * w + xx) * c + ch] = src[(ch * h + y) * w + xx];
            }
        }
    }
    Tensor::new([h, w, c], out)
}

/// Writes `[C, h, w]` patches into an `[H, D, C]` frame in row-major patch
/// order, inverting [`extract_patch`].
pub fn tile_patches(spec: &PatchSpec, patches: &[Tensor]) -> Result<Tensor> {
    if patches.len() != spec.m * spec.n {
        return Err(Error::invalid(format!(
            "expected {} patches, got {}",
            spec.m * spec.n,
            patches.len()
        )));
    }
    let (ph, pw) = (spec.patch_height(), spec.patch_width());
    let c = patches[0].shape()[0];
    let mut frame = vec![0.0; spec.height * spec.width * c];
    for (p, patch) in patches.iter().enumerate() {
        if patch.shape() != [c, ph, pw] {
            return Err(Error::Shape {
                op: "tile_patches",
                lhs: vec![c, ph, pw],
                rhs: patch.shape().to_vec(),
            });
        }
        let (i, j) = (p / spec.n, p % spec.n);
        let src = patch.data();
        for ch in 0..c {
            for y in 0..ph {
                for x in 0..pw {
                    let fy = i * ph + y;
                    let fx = j * pw + x;
                    frame[(fy * spec.width + fx) * c + ch] = src[(ch * ph + y) * pw + x];
                }
            }
        }
    }
    Tensor::new([spec.height, spec.width, c], frame)
}
