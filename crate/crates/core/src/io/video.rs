//! Frame directories: `frame_%05d.ppm` plus `manifest.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ppm, write_atomic};
use crate::error::{Error, Result};
use crate::tasks::NoiseSpec;
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    /// Where the frames came from (a generator name or an input path).
    pub source: String,
    /// Noise that was applied, if any.
    pub noise: Option<NoiseSpec>,
    /// `false` marks frames held out of training.
    pub seen_mask: Vec<bool>,
    /// Informational only.
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoBuffer {
    /// `[H, D, 3]` frames with values in `[0, 1]`.
    pub frames: Vec<Tensor>,
    pub manifest: Manifest,
}

impl VideoBuffer {
    pub fn new(frames: Vec<Tensor>, source: impl Into<String>) -> Result<Self> {
        let buf = VideoBuffer {
            manifest: Manifest {
                source: source.into(),
                noise: None,
                seen_mask: vec![true; frames.len()],
                fps: 25.0,
            },
            frames,
        };
        buf.validate()?;
        Ok(buf)
    }

    pub fn validate(&self) -> Result<()> {
        let Some(first) = self.frames.first() else {
            return Err(Error::invalid("video has no frames"));
        };
        let &[_, _, 3] = first.shape() else {
            return Err(Error::invalid(format!("frames must be [H, D, 3], got {:?}", first.shape())));
        };
        if self.frames.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::invalid("frames have inconsistent dimensions"));
        }
        if self.frames.iter().flat_map(|f| f.data()).any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("pixel values must lie in [0, 1]"));
        }
        if self.manifest.seen_mask.len() != self.frames.len() {
            return Err(Error::invalid("manifest seen_mask length differs from frame count"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// `(frames, height, width)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.frames[0].shape();
        (self.frames.len(), s[0], s[1])
    }
}

pub fn frame_name(i: usize) -> String {
    format!("frame_{i:05}.ppm")
}

pub fn load_video(dir: &Path) -> Result<VideoBuffer> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .filter(|n| n.starts_with("frame_") && n.ends_with(".ppm"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::invalid(format!("no frame_*.ppm files in {}", dir.display())));
    }
    for (i, name) in names.iter().enumerate() {
        if *name != frame_name(i) {
            return Err(Error::invalid(format!(
                "missing frame {} in {} (found {name})",
                frame_name(i),
                dir.display()
            )));
        }
    }
    let frames = names
        .iter()
        .map(|n| {
            let path: PathBuf = dir.join(n);
            ppm::decode(&fs::read(&path)?, &path)
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let buf = VideoBuffer { frames, manifest };
    buf.validate()?;
    Ok(buf)
}

pub fn save_video(buf: &VideoBuffer, dir: &Path) -> Result<()> {
    buf.validate()?;
    fs::create_dir_all(dir)?;
    for (i, f) in buf.frames.iter().enumerate() {
        write_atomic(&dir.join(frame_name(i)), &ppm::encode(f)?)?;
    }
    write_atomic(&dir.join(MANIFEST), serde_json::to_string_pretty(&buf.manifest)?.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::NoiseKind;

    fn quantized(h: usize, w: usize, shift: usize) -> Tensor {
        let data = (0..h * w * 3).map(|i| ((i * 37 + shift) % 256) as f64 / 255.0).collect();
        Tensor::new([h, w, 3], data).unwrap()
    }

    #[test]
    fn round_trip_is_exact_for_8bit_data() {
        let dir = tempfile::tempdir().unwrap();
        let mut buf = VideoBuffer::new(vec![quantized(3, 5, 0), quantized(3, 5, 9)], "test").unwrap();
        buf.manifest.seen_mask[1] = false;
        buf.manifest.noise = Some(NoiseSpec::salt_pepper(0.05, 3));
        save_video(&buf, dir.path()).unwrap();
        assert_eq!(load_video(dir.path()).unwrap(), buf);
        assert!(dir.path().join("frame_00001.ppm").exists());
        assert_eq!(buf.manifest.noise.unwrap().kind, NoiseKind::SaltPepper);
    }

    #[test]
    fn black_frame_loads_as_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let buf = VideoBuffer::new(vec![Tensor::zeros([2, 2, 3])], "black").unwrap();
        save_video(&buf, dir.path()).unwrap();
        let back = load_video(dir.path()).unwrap();
        assert!(back.frames[0].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn detects_gaps_and_mismatches() {
        let dir = tempfile::tempdir().unwrap();
        let buf = VideoBuffer::new(vec![quantized(2, 2, 0); 3], "x").unwrap();
        save_video(&buf, dir.path()).unwrap();
        fs::remove_file(dir.path().join(frame_name(1))).unwrap();
        assert!(load_video(dir.path()).is_err());

        fs::write(dir.path().join(frame_name(1)), ppm::encode(&quantized(3, 2, 0)).unwrap()).unwrap();
        assert!(load_video(dir.path()).is_err());

        assert!(VideoBuffer::new(vec![Tensor::full([1, 1, 3], 1.5)], "x").is_err());
        assert!(VideoBuffer::new(vec![], "x").is_err());
    }
}
