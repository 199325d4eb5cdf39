//! Finite-difference check of the training-loss gradient for randomly chosen
//! parameters of the desk-scale model.
//!
//! cargo run --release --example gradcheck -- [count]

use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::model::Model;
use polyvid::training;

fn main() -> polyvid::Result<()> {
    let count: usize = std::env::args().nth(1).map_or(20, |a| a.parse().expect("count"));
    let video = synth_video(SynthKind::MovingSquare, 2, 64, 64, 0)?.frames;
    let run = RunConfig::desk();
    let model = Model::new(run.model_config(run.patch.resolve(2, 64, 64)?), 0)?;
    let rep = training::loss_gradcheck(&model, &video, run.train.gamma, count, 0)?;
    println!("checked {} parameters, max relative error {:.3e}", rep.checked, rep.max_rel_err);
    Ok(())
}
