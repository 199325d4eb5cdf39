//! Holds out every fourth frame, trains on the rest and scores the held-out
//! frames against copying the nearest seen frame.
//!
//! cargo run --release --example interpolate

use polyvid::embedding::EmbedConfig;
use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::model::Model;
use polyvid::tasks;
use polyvid::training::{self, BlurConfig};

fn main() -> polyvid::Result<()> {
    let frames = 33;
    let video = synth_video(SynthKind::GradientWave, frames, 32, 32, 0)?.frames;
    let seen = tasks::split_seen(frames);

    let mut run = RunConfig::desk();
    run.patch.m = 2;
    run.patch.n = 2;
    run.embed = EmbedConfig::with_width(6);
    run.train.epochs = 100;
    run.train.lr0 = 2e-3;
    run.train.log_every = 100;
    let mut model = Model::new(run.model_config(run.patch.resolve(frames, 32, 32)?), 0)?;
    training::train(&mut model, &video, Some(&seen), &run.train)?;

    let raw = BlurConfig {
        enabled: false,
        ..BlurConfig::default()
    };
    let pred = tasks::interpolate(&model, &training::frame_times(model.spec()), &raw)?;
    let (s, u) = tasks::split_psnr(&pred, &video, &seen)?;
    let copy = tasks::copy_nearest_seen(&video, &seen)?;
    let (_, c) = tasks::split_psnr(&copy, &video, &seen)?;
    println!("seen frames     {s:.2} dB");
    println!("held-out frames {u:.2} dB");
    println!("copy baseline   {c:.2} dB");

    // frames between the training times
    let mid = tasks::interpolate(&model, &[0.5 / (frames - 1) as f64, 0.5], &raw)?;
    println!("decoded {} in-between frames of shape {:?}", mid.len(), mid[0].shape());
    Ok(())
}
