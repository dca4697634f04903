//! Linear images, the synthetic scene generator, on-disk formats and
//! cross-validation splits.

mod image_io;
mod manifest;
mod synth;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::Illuminant;

pub use image_io::{decode_rif, encode_png16, encode_rif, read_image, write_image, RIF_MAGIC, RIF_VERSION};
pub use manifest::{load_dataset, load_manifest, read_manifest, write_manifest, ManifestEntry, MANIFEST_HEADER};
pub use synth::{synthesize, SynthConfig, SynthSample};

/// `H×W×3` linear-RGB image stored row-major with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearImage {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl LinearImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid(format!("image extents must be positive, got {height}x{width}")));
        }
        let expected = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(3))
            .ok_or_else(|| Error::invalid("image dimensions overflow"))?;
        if data.len() != expected {
            return Err(Error::invalid(format!(
                "{height}x{width}x3 image needs {expected} values, got {}",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::NonFinite(format!("image pixels must be finite and >= 0, found {bad}")));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::new(height, width, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    /// Interleaved `r,g,b` values, row-major.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// One channel as a row-major `H×W` plane.
    pub fn plane(&self, channel: usize) -> Vec<f32> {
        self.data.iter().skip(channel).step_by(3).copied().collect()
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Applies `f` to every pixel. The result must stay finite and non-negative.
    pub fn map_pixels(&self, mut f: impl FnMut([f32; 3]) -> [f32; 3]) -> Result<Self> {
        let data = self.pixels().flat_map(&mut f).collect();
        Self::new(self.height, self.width, data)
    }

    /// Returns a copy with channels reordered: output channel `c` is input
    /// channel `order[c]`.
    pub fn permute_channels(&self, order: [usize; 3]) -> Self {
        let data = self.pixels().flat_map(|p| order.map(|c| p[c])).collect();
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Bilinear resampling with half-pixel centres. Linear in pixel values.
    pub fn resize(&self, height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("resize target must be positive"));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let coord = |dst: usize, scale: f64, len: usize| {
            let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(len - 1);
            (lo, hi, (src - lo as f64) as f32)
        };
        let mut data = Vec::with_capacity(height * width * 3);
        for y in 0..height {
            let (y0, y1, fy) = coord(y, sy, self.height);
            for x in 0..width {
                let (x0, x1, fx) = coord(x, sx, self.width);
                let (a, b, c, d) = (self.pixel(y0, x0), self.pixel(y0, x1), self.pixel(y1, x0), self.pixel(y1, x1));
                for ch in 0..3 {
                    let top = a[ch] + (b[ch] - a[ch]) * fx;
                    let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                    data.push(top + (bottom - top) * fy);
                }
            }
        }
        Self::new(height, width, data)
    }
}

/// Labelled image with its cross-validation fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: LinearImage,
    pub gt: Illuminant,
    pub fold: usize,
}

/// Train/test index sets for one fold.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Fold `k` tests on the items whose fold id is `k` and trains on the rest.
pub fn cross_validation_splits(fold_ids: &[usize], folds: usize) -> Result<Vec<Split>> {
    if folds == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    if let Some((i, f)) = fold_ids.iter().enumerate().find(|(_, f)| **f >= folds) {
        return Err(Error::invalid(format!("item {i} has fold {f}, expected < {folds}")));
    }
    (0..folds)
        .map(|fold| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..fold_ids.len()).partition(|&i| fold_ids[i] == fold);
            if test.is_empty() {
                return Err(Error::invalid(format!("fold {fold} has no samples")));
            }
            Ok(Split { fold, train, test })
        })
        .collect()
}

pub fn sample_splits(samples: &[Sample], folds: usize) -> Result<Vec<Split>> {
    let ids: Vec<usize> = samples.iter().map(|s| s.fold).collect();
    cross_validation_splits(&ids, folds)
}
