//! Decodes a trained model at twice its training resolution and compares
//! against bicubic upsampling of the ordinary reconstruction.
//!
//! cargo run --release --example superres

use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::metrics;
use polyvid::model::Model;
use polyvid::tasks;
use polyvid::training::{self, BlurConfig};

fn main() -> polyvid::Result<()> {
    // train at 32×32 on a box-downsampled copy of a 64×64 video
    let hi = synth_video(SynthKind::GradientWave, 4, 64, 64, 0)?.frames;
    let lo: Vec<_> = hi.iter().map(|f| tasks::box_downsample(f, 2)).collect::<polyvid::Result<_>>()?;
    let mut run = RunConfig::desk();
    run.patch.m = 2;
    run.patch.n = 2;
    run.train.epochs = 150;
    run.train.batch_size = 4;
    run.train.lr0 = 2e-3;
    run.train.log_every = 150;
    let mut model = Model::new(run.model_config(run.patch.resolve(4, 32, 32)?), 0)?;
    training::train(&mut model, &lo, None, &run.train)?;

    let raw = BlurConfig {
        enabled: false,
        ..BlurConfig::default()
    };
    let times = training::frame_times(model.spec());
    let sr = tasks::super_resolve(&model, 2, &times, &raw)?;
    let recon = training::reconstruct(&model, &times, &raw)?;
    let bicubic: Vec<_> = recon.iter().map(|f| tasks::bicubic_upsample(f, 2)).collect::<polyvid::Result<_>>()?;
    println!("output shape {:?}", sr[0].shape());
    println!("model x2   vs 64×64 truth: {:.2} dB", metrics::video_psnr(&sr, &hi)?);
    println!("bicubic x2 vs 64×64 truth: {:.2} dB", metrics::video_psnr(&bicubic, &hi)?);
    Ok(())
}
