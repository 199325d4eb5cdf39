//! PSNR, SSIM and MS-SSIM between a video and progressively blurred or
//! noised copies of it.
//!
//! cargo run --release --example metrics

use polyvid::io::{synth_video, SynthKind};
use polyvid::tasks::{self, NoiseSpec};
use polyvid::training;

fn main() -> polyvid::Result<()> {
    let video = synth_video(SynthKind::CheckerboardDrift, 2, 64, 64, 0)?.frames;
    for sigma in [0.5, 1.0, 2.0] {
        let blurred: Vec<_> = video
            .iter()
            .map(|f| training::gaussian_blur(f, 5, sigma))
            .collect::<polyvid::Result<_>>()?;
        for r in tasks::metric_suite("blur", &format!("sigma={sigma}"), &blurred, &video)? {
            println!("{r}");
        }
    }
    for sigma in [0.02, 0.1] {
        let noisy = tasks::add_noise(&video, &NoiseSpec::white(sigma, 0))?;
        for r in tasks::metric_suite("white_noise", &format!("sigma={sigma}"), &noisy, &video)? {
            println!("{r}");
        }
    }
    Ok(())
}
