//! Files: frames, checkpoints, configuration and synthetic inputs.

pub mod checkpoint;
pub mod config;
pub mod ppm;
pub mod synth;
pub mod video;

use std::io::Write;
use std::path::Path;

use crate::error::Result;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{PatchLayout, RunConfig};
pub use synth::{synth_video, SynthKind};
pub use video::{load_video, save_video, Manifest, VideoBuffer};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}
