#![allow(dead_code)]

pub mod gradcheck;

use cwcc::dataset::{synthesize, Sample, SynthConfig};

/// Scenes whose mean reflectance is deliberately non-grey, with per-scene
/// exposure under fixed sensor noise.
pub fn biased_config(size: usize, seed: u64) -> SynthConfig {
    SynthConfig {
        height: size,
        width: size,
        reflectance_bias: [1.0, 0.9, 0.75],
        exposure: (0.05, 1.0),
        noise_std: 0.01,
        seed,
        ..SynthConfig::default()
    }
}

pub fn samples(config: &SynthConfig, n: usize) -> Vec<Sample> {
    synthesize(config, n).unwrap().into_iter().map(|s| s.sample).collect()
}
