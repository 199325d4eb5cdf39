//! Writes each procedural test video as a PPM frame directory.
//!
//! cargo run --release --example synth -- [out_dir]

use std::path::PathBuf;

use polyvid::io::{save_video, synth_video, SynthKind};

fn main() -> polyvid::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/synth".into()));
    for kind in SynthKind::ALL {
        let video = synth_video(kind, 8, 64, 64, 0)?;
        let dir = out.join(kind.name());
        save_video(&video, &dir)?;
        let mean: f64 = video.frames.iter().flat_map(|f| f.data()).sum::<f64>()
            / video.frames.iter().map(|f| f.len()).sum::<usize>() as f64;
        println!("{:<20} {} frames, mean intensity {mean:.3} -> {}", kind.name(), video.len(), dir.display());
    }
    Ok(())
}
