//! Fixtures shared by unit tests.

use crate::decoder::DecoderConfig;
use crate::embedding::EmbedConfig;
use crate::model::ModelConfig;
use crate::sampling::PatchSpec;
use crate::tensor::Tensor;

/// One 16×16 patch per frame, 2×2 sub-patches, about 10k parameters.
pub fn tiny_model_config(frames: usize) -> ModelConfig {
    ModelConfig {
        patch: PatchSpec::new(frames, 16, 16, (1, 1), (2, 2)).unwrap(),
        embed: EmbedConfig::with_width(4),
        decoder: DecoderConfig {
            seed: (2, 2),
            upscales: [2, 2, 2],
            u_channels: 16,
            f11_mid: 8,
            channels: [16, 8, 8, 8, 8, 8],
            activation: true,
        },
    }
}

pub fn constant_video(frames: usize, rgb: [f64; 3]) -> Vec<Tensor> {
    (0..frames)
        .map(|_| {
            let data = (0..16 * 16).flat_map(|_| rgb).collect();
            Tensor::new([16, 16, 3], data).unwrap()
        })
        .collect()
}
