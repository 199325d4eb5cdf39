//! Fits a model to a noisy video and scores the fit against the clean one.
//!
//! cargo run --release --example denoise -- [salt_pepper|white]

use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::metrics;
use polyvid::model::Model;
use polyvid::tasks::{self, NoiseKind, NoiseSpec};
use polyvid::training;

fn main() -> polyvid::Result<()> {
    let kind: NoiseKind = std::env::args().nth(1).as_deref().unwrap_or("salt_pepper").parse()?;
    let noise = match kind {
        NoiseKind::White => NoiseSpec::white(0.1, 0),
        NoiseKind::SaltPepper => NoiseSpec::salt_pepper(0.05, 0),
    };
    let clean = synth_video(SynthKind::MovingSquare, 8, 64, 64, 0)?.frames;
    let noisy = tasks::add_noise(&clean, &noise)?;

    let mut run = RunConfig::desk();
    run.train.epochs = 60;
    run.train.lr0 = 2e-3;
    run.train.log_every = 60;
    let mut model = Model::new(run.model_config(run.patch.resolve(8, 64, 64)?), 0)?;
    training::train(&mut model, &noisy, None, &run.train)?;

    let recon = training::reconstruct(&model, &training::frame_times(model.spec()), &run.train.blur)?;
    println!("{kind} noise");
    println!("noisy vs clean          {:.2} dB", metrics::video_psnr(&noisy, &clean)?);
    println!("reconstruction vs clean {:.2} dB", metrics::video_psnr(&recon, &clean)?);
    Ok(())
}
