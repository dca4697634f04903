//! Statistics-based illuminant estimators: Grey-World, White-Patch,
//! Shades-of-Grey and Grey-Edge.

use serde::{Deserialize, Serialize};

use crate::dataset::LinearImage;
use crate::error::{Error, Result};
use crate::metrics::Illuminant;

/// Pixels with any channel at or above `saturation` are dropped from the
/// Minkowski statistics when `exclude_saturated` is set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationMask {
    pub exclude_saturated: bool,
    pub saturation: f32,
}

impl Default for SaturationMask {
    fn default() -> Self {
        Self {
            exclude_saturated: true,
            saturation: 1.0,
        }
    }
}

impl SaturationMask {
    pub const OFF: SaturationMask = SaturationMask {
        exclude_saturated: false,
        saturation: 1.0,
    };

    fn keeps(&self, p: [f32; 3]) -> bool {
        !self.exclude_saturated || p.iter().all(|&v| v < self.saturation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum Baseline {
    GreyWorld,
    WhitePatch,
    ShadesOfGrey { p: f64 },
    GreyEdge { order: u8, p: f64, sigma: f64 },
}

impl Baseline {
    pub fn grey_edge() -> Self {
        Baseline::GreyEdge {
            order: 1,
            p: 6.0,
            sigma: 2.0,
        }
    }

    pub fn grey_edge2() -> Self {
        Baseline::GreyEdge {
            order: 2,
            p: 6.0,
            sigma: 2.0,
        }
    }

    pub fn estimate(&self, image: &LinearImage, mask: SaturationMask) -> Result<Illuminant> {
        match *self {
            Baseline::GreyWorld => grey_world_masked(image, mask),
            Baseline::WhitePatch => white_patch_masked(image, mask),
            Baseline::ShadesOfGrey { p } => shades_of_grey_masked(image, p, mask),
            Baseline::GreyEdge { order, p, sigma } => grey_edge(image, order, p, sigma),
        }
    }
}

fn to_illuminant(v: [f64; 3], what: &str) -> Result<Illuminant> {
    if v.iter().all(|&c| c == 0.0) {
        return Err(Error::invalid(format!("{what}: statistic is the zero vector")));
    }
    Illuminant::from_array(v)
        .map(|e| e.normalized())
        .map_err(|_| Error::invalid(format!("{what}: statistic {v:?} has a non-positive channel")))
}

/// Minkowski mean `(mean x^p)^(1/p)` per channel, with max-normalisation so
/// large `p` does not overflow.
fn minkowski(values: &[[f64; 3]], p: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| {
        let peak = values.iter().map(|v| v[c].abs()).fold(0.0, f64::max);
        if peak == 0.0 {
            return 0.0;
        }
        let mean = values.iter().map(|v| (v[c].abs() / peak).powf(p)).sum::<f64>() / values.len() as f64;
        peak * mean.powf(1.0 / p)
    })
}

fn masked_pixels(image: &LinearImage, mask: SaturationMask) -> Result<Vec<[f64; 3]>> {
    let px: Vec<[f64; 3]> = image.pixels().filter(|p| mask.keeps(*p)).map(|p| p.map(f64::from)).collect();
    if px.is_empty() {
        return Err(Error::invalid("no unsaturated pixels to estimate from"));
    }
    Ok(px)
}

pub fn shades_of_grey_masked(image: &LinearImage, p: f64, mask: SaturationMask) -> Result<Illuminant> {
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("Minkowski order must be >= 1, got {p}")));
    }
    to_illuminant(minkowski(&masked_pixels(image, mask)?, p), "shades of grey")
}

pub fn grey_world_masked(image: &LinearImage, mask: SaturationMask) -> Result<Illuminant> {
    let px = masked_pixels(image, mask)?;
    let n = px.len() as f64;
    let mean = [0, 1, 2].map(|c| px.iter().map(|v| v[c]).sum::<f64>() / n);
    to_illuminant(mean, "grey world")
}

pub fn white_patch_masked(image: &LinearImage, mask: SaturationMask) -> Result<Illuminant> {
    let px = masked_pixels(image, mask)?;
    let max = [0, 1, 2].map(|c| px.iter().map(|v| v[c]).fold(0.0, f64::max));
    to_illuminant(max, "white patch")
}

/// Estimate proportional to the per-channel mean.
pub fn grey_world(image: &LinearImage) -> Result<Illuminant> {
    grey_world_masked(image, SaturationMask::default())
}

/// Estimate proportional to the per-channel maximum.
pub fn white_patch(image: &LinearImage) -> Result<Illuminant> {
    white_patch_masked(image, SaturationMask::default())
}

/// Estimate proportional to the per-channel Minkowski `p`-mean.
pub fn shades_of_grey(image: &LinearImage, p: f64) -> Result<Illuminant> {
    shades_of_grey_masked(image, p, SaturationMask::default())
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with replicate borders.
fn blur(plane: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * plane[y * w + clampi(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clampi(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Derivative magnitude per pixel: gradient norm (order 1) or absolute
/// Laplacian (order 2), central differences, replicate borders.
fn derivative_magnitude(plane: &[f64], h: usize, w: usize, order: u8) -> Vec<f64> {
    let at = |y: isize, x: isize| plane[y.clamp(0, h as isize - 1) as usize * w + x.clamp(0, w as isize - 1) as usize];
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let c = at(y, x);
            let v = if order == 1 {
                let dx = (at(y, x + 1) - at(y, x - 1)) / 2.0;
                let dy = (at(y + 1, x) - at(y - 1, x)) / 2.0;
                (dx * dx + dy * dy).sqrt()
            } else {
                let dxx = at(y, x + 1) - 2.0 * c + at(y, x - 1);
                let dyy = at(y + 1, x) - 2.0 * c + at(y - 1, x);
                (dxx + dyy).abs()
            };
            out.push(v);
        }
    }
    out
}

/// Grey-Edge: Minkowski `p`-mean of the `order`-th derivative magnitude of
/// each Gaussian-smoothed channel. `sigma = 0` skips smoothing.
pub fn grey_edge(image: &LinearImage, order: u8, p: f64, sigma: f64) -> Result<Illuminant> {
    if order != 1 && order != 2 {
        return Err(Error::invalid(format!("grey edge order must be 1 or 2, got {order}")));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("Minkowski order must be >= 1, got {p}")));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be >= 0, got {sigma}")));
    }
    let (h, w) = (image.height(), image.width());
    if h < 3 || w < 3 {
        return Err(Error::invalid(format!("grey edge needs at least 3x3 pixels, got {h}x{w}")));
    }
    let mags: Vec<Vec<f64>> = (0..3)
        .map(|c| {
            let plane: Vec<f64> = image.plane(c).into_iter().map(f64::from).collect();
            let smoothed = if sigma > 0.0 { blur(&plane, h, w, sigma) } else { plane };
            derivative_magnitude(&smoothed, h, w, order)
        })
        .collect();
    let values: Vec<[f64; 3]> = (0..h * w).map(|i| [mags[0][i], mags[1][i], mags[2][i]]).collect();
    to_illuminant(minkowski(&values, p), "grey edge")
}
