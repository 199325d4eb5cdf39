//! Fits the desk-scale model to a moving square and saves a checkpoint.
//!
//! cargo run --release --example train -- [epochs] [out_dir]

use std::path::PathBuf;

use polyvid::io::{save_checkpoint, synth_video, Checkpoint, RunConfig, SynthKind};
use polyvid::model::Model;
use polyvid::training;

fn main() -> polyvid::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs: usize = args.next().map_or(40, |a| a.parse().expect("epochs"));
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/examples/train".into()));

    let video = synth_video(SynthKind::MovingSquare, 8, 64, 64, 0)?;
    let mut run = RunConfig::desk();
    run.train.epochs = epochs;
    run.train.lr0 = 2e-3;
    run.train.log_every = (epochs / 8).max(1);
    let spec = run.patch.resolve(8, 64, 64)?;
    let mut model = Model::new(run.model_config(spec), run.train.seed)?;
    println!("{} parameters, {} patches per frame", model.parameter_count(), spec.patches_per_frame());

    let log = training::train(&mut model, &video.frames, None, &run.train)?;
    print!("{log}");

    std::fs::create_dir_all(&out)?;
    let path = out.join("model.pnrv");
    save_checkpoint(&Checkpoint { model, train: run.train }, &path)?;
    println!("checkpoint -> {}", path.display());
    Ok(())
}
