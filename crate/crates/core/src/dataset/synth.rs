//! Synthetic scenes under the diagonal image-formation model `I = R ∘ e`.
//!
//! Reflectance is a Voronoi mosaic of flat patches. Each patch has a grey
//! level drawn from `luminance` and a per-channel chroma factor drawn from
//! `[1 - s, 1 + s]`, multiplied by `reflectance_bias`. The spread `s` is drawn
//! once per scene from `chroma_spread`, so scenes differ in how colourful
//! (and how hard) they are.
//! The illuminant is `(r/g, 1, b/g)` with both ratios uniform in the
//! chromaticity box, scaled so its largest component is 1 before it is
//! applied. A per-scene exposure, log-uniform in `exposure`, scales the
//! observation before noise, so dark scenes have a lower signal-to-noise
//! ratio.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LinearImage, Sample};
use crate::error::{Error, Result};
use crate::metrics::Illuminant;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of Voronoi patch counts per scene.
    pub patches: (usize, usize),
    /// Range of patch grey levels.
    pub luminance: (f32, f32),
    /// Range of the per-scene chroma spread.
    pub chroma_spread: (f32, f32),
    /// Per-channel multiplier on every reflectance; non-grey values make the
    /// scene mean deliberately chromatic.
    pub reflectance_bias: [f32; 3],
    /// Rescale channels so the reflectance mean is achromatic.
    pub grey_mean: bool,
    pub rg_range: (f64, f64),
    pub bg_range: (f64, f64),
    /// Range of the per-scene exposure multiplier.
    pub exposure: (f32, f32),
    pub noise_std: f32,
    /// Clip observed values to `[0,1]`. Negative values are always clamped.
    pub clip: bool,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            patches: (8, 64),
            luminance: (0.2, 0.9),
            chroma_spread: (0.25, 0.25),
            reflectance_bias: [1.0; 3],
            grey_mean: false,
            rg_range: (0.6, 1.4),
            bg_range: (0.6, 1.4),
            exposure: (1.0, 1.0),
            noise_std: 0.0,
            clip: true,
            folds: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(m));
        if self.height == 0 || self.width == 0 {
            return bad(format!("image size must be positive, got {}x{}", self.height, self.width));
        }
        if self.patches.0 == 0 || self.patches.0 > self.patches.1 {
            return bad(format!("patch range {:?} is empty", self.patches));
        }
        let (lo, hi) = self.luminance;
        if !(lo >= 0.0 && lo <= hi && hi <= 1.0) {
            return bad(format!("luminance range {:?} must lie in [0,1]", self.luminance));
        }
        let (lo, hi) = self.chroma_spread;
        if !(lo >= 0.0 && lo <= hi && hi < 1.0) {
            return bad(format!("chroma spread range {:?} must lie in [0,1)", self.chroma_spread));
        }
        if self.reflectance_bias.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
            return bad(format!("reflectance bias must be positive, got {:?}", self.reflectance_bias));
        }
        for (name, (lo, hi)) in [("r/g", self.rg_range), ("b/g", self.bg_range)] {
            if !(lo > 0.0 && lo < hi && hi.is_finite()) {
                return bad(format!("degenerate {name} chromaticity range ({lo}, {hi})"));
            }
        }
        let (lo, hi) = self.exposure;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad(format!("exposure range {:?} must be positive and ordered", self.exposure));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise std must be >= 0, got {}", self.noise_std));
        }
        if self.folds == 0 {
            return bad("folds must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthSample {
    pub sample: Sample,
    /// Latent reflectance `R`.
    pub reflectance: LinearImage,
    /// Illuminant as actually multiplied into the image (max component 1).
    pub applied: [f64; 3],
    /// Exposure multiplier applied on top of the illuminant.
    pub exposure: f32,
}

const GREY_MEAN_PEAK: f64 = 0.9;

fn mosaic(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<LinearImage> {
    let k = rng.random_range(cfg.patches.0..=cfg.patches.1);
    let seeds: Vec<(f32, f32)> = (0..k)
        .map(|_| (rng.random::<f32>() * cfg.height as f32, rng.random::<f32>() * cfg.width as f32))
        .collect();
    let spread = rng.random_range(cfg.chroma_spread.0..=cfg.chroma_spread.1);
    let colors: Vec<[f32; 3]> = (0..k)
        .map(|_| {
            let lum = rng.random_range(cfg.luminance.0..=cfg.luminance.1);
            [0, 1, 2].map(|c| {
                let chroma = 1.0 + spread * (2.0 * rng.random::<f32>() - 1.0);
                (lum * chroma * cfg.reflectance_bias[c]).min(1.0)
            })
        })
        .collect();
    let mut data = Vec::with_capacity(cfg.height * cfg.width * 3);
    for y in 0..cfg.height {
        for x in 0..cfg.width {
            let (py, px) = (y as f32 + 0.5, x as f32 + 0.5);
            let nearest = seeds
                .iter()
                .enumerate()
                .map(|(i, (sy, sx))| (i, (sy - py).powi(2) + (sx - px).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("at least one patch");
            data.extend_from_slice(&colors[nearest]);
        }
    }
    if cfg.grey_mean {
        let n = (cfg.height * cfg.width) as f64;
        let means: Vec<f64> = (0..3)
            .map(|c| data.iter().skip(c).step_by(3).map(|&v| v as f64).sum::<f64>() / n)
            .collect();
        let target = means.iter().sum::<f64>() / 3.0;
        let gains: Vec<f64> = means.iter().map(|m| if *m > 0.0 { target / m } else { 1.0 }).collect();
        let peak = data
            .iter()
            .enumerate()
            .map(|(i, &v)| v as f64 * gains[i % 3])
            .fold(0.0, f64::max);
        // Keep the brightest patch below 1.0 so a saturation mask never drops it.
        let norm = if peak > GREY_MEAN_PEAK { peak / GREY_MEAN_PEAK } else { 1.0 };
        for (i, v) in data.iter_mut().enumerate() {
            *v = (*v as f64 * gains[i % 3] / norm) as f32;
        }
    }
    LinearImage::new(cfg.height, cfg.width, data)
}

/// Draws `n` scenes deterministically from `config.seed`. Sample `i` lands
/// in fold `i % config.folds`.
pub fn synthesize(config: &SynthConfig, n: usize) -> Result<Vec<SynthSample>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::invalid("synthesize needs n >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0f32, config.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    (0..n)
        .map(|i| {
            let reflectance = mosaic(config, &mut rng)?;
            let rg = rng.random_range(config.rg_range.0..config.rg_range.1);
            let bg = rng.random_range(config.bg_range.0..config.bg_range.1);
            let peak = rg.max(bg).max(1.0);
            let applied = [rg / peak, 1.0 / peak, bg / peak];
            let (lo, hi) = config.exposure;
            let exposure = if lo == hi {
                lo
            } else {
                rng.random_range(lo.ln()..=hi.ln()).exp()
            };
            let gain = applied.map(|v| v as f32 * exposure);
            let image = reflectance.map_pixels(|p| {
                [0, 1, 2].map(|c| {
                    let mut v = p[c] * gain[c];
                    if config.noise_std > 0.0 {
                        v += noise.sample(&mut rng);
                    }
                    if config.clip {
                        v.clamp(0.0, 1.0)
                    } else {
                        v.max(0.0)
                    }
                })
            })?;
            let gt = Illuminant::from_array(applied)?.normalized();
            Ok(SynthSample {
                sample: Sample {
                    image,
                    gt,
                    fold: i % config.folds,
                },
                reflectance,
                applied,
                exposure,
            })
        })
        .collect()
}
