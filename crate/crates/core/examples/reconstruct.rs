//! Trains briefly, then decodes every frame with and without the
//! post-processing blur and writes both as PPM directories.
//!
//! cargo run --release --example reconstruct -- [out_dir]

use std::path::PathBuf;

use polyvid::io::{save_video, synth_video, RunConfig, SynthKind, VideoBuffer};
use polyvid::metrics;
use polyvid::model::Model;
use polyvid::training::{self, BlurConfig};

fn main() -> polyvid::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/examples/reconstruct".into()));
    let video = synth_video(SynthKind::CheckerboardDrift, 4, 32, 32, 0)?;
    let mut run = RunConfig::desk();
    run.patch.m = 2;
    run.patch.n = 2;
    run.train.epochs = 60;
    run.train.batch_size = 4;
    run.train.lr0 = 2e-3;
    run.train.log_every = 60;
    let mut model = Model::new(run.model_config(run.patch.resolve(4, 32, 32)?), 0)?;
    training::train(&mut model, &video.frames, None, &run.train)?;

    let times = training::frame_times(model.spec());
    let raw_cfg = BlurConfig {
        enabled: false,
        ..run.train.blur.clone()
    };
    for (name, blur) in [("raw", &raw_cfg), ("blurred", &run.train.blur)] {
        let frames = training::reconstruct(&model, &times, blur)?;
        println!("{name:<8} PSNR {:.2} dB", metrics::video_psnr(&frames, &video.frames)?);
        save_video(&VideoBuffer::new(frames, name)?, &out.join(name))?;
    }
    Ok(())
}
