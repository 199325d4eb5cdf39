//! Prunes a trained model at several sparsities and fine-tunes each one.
//!
//! cargo run --release --example compress

use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::model::Model;
use polyvid::tasks;
use polyvid::training::{self, TrainConfig};

fn main() -> polyvid::Result<()> {
    let video = synth_video(SynthKind::MovingSquare, 4, 32, 32, 0)?;
    let mut run = RunConfig::desk();
    run.patch.m = 2;
    run.patch.n = 2;
    run.train.epochs = 150;
    run.train.batch_size = 4;
    run.train.lr0 = 2e-3;
    run.train.log_every = 150;
    let mut model = Model::new(run.model_config(run.patch.resolve(4, 32, 32)?), 0)?;
    training::train(&mut model, &video.frames, None, &run.train)?;

    let ft = TrainConfig {
        epochs: 20,
        batch_size: 4,
        lr0: 5e-4,
        log_every: 20,
        ..TrainConfig::default()
    };
    println!("{:>5} {:>9} {:>10} {:>9} {:>10}", "rho", "zeroed", "dense", "pruned", "finetuned");
    for rho in [0.1, 0.2, 0.4, 0.6, 0.8] {
        let (_, r) = tasks::compress(&model, &video.frames, rho, &ft)?;
        println!(
            "{rho:>5.1} {:>9} {:>10.2} {:>9.2} {:>10.2}",
            r.zeroed,
            r.psnr_dense.unwrap_or(f64::NAN),
            r.psnr_pruned.unwrap_or(f64::NAN),
            r.psnr_finetuned.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
