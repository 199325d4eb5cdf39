//! Trains one model per fusion strategy with identical seeds and budgets.
//!
//! cargo run --release --example fusion_ablation -- [epochs]

use polyvid::io::{synth_video, RunConfig, SynthKind};
use polyvid::tasks;

fn main() -> polyvid::Result<()> {
    let epochs: usize = std::env::args().nth(1).map_or(40, |a| a.parse().expect("epochs"));
    let video = synth_video(SynthKind::MovingSquare, 8, 64, 64, 0)?.frames;
    let mut run = RunConfig::desk();
    run.train.epochs = epochs;
    run.train.lr0 = 2e-3;
    run.train.log_every = epochs;
    let base = run.model_config(run.patch.resolve(8, 64, 64)?);

    for arms in [tasks::fusion_arms(&base), tasks::activation_arms(&base)] {
        for arm in tasks::run_ablation(&arms, &video, 0, &run.train)? {
            println!("{:<16} {:>7} params {:>7.2} dB", arm.label, arm.params, arm.psnr);
        }
    }
    Ok(())
}
