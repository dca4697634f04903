//! The channel-wise network: a fully convolutional disjoint block applied to
//! each colour plane, and a merging block that maps the pooled, concatenated
//! plane features to an illuminant.
//!
//! With [`Variant::Shared`] a single disjoint block serves all three planes.
//! [`Variant::PerChannel`] keeps an independent block per plane.

mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::LinearImage;
use crate::error::{Error, Result};
use crate::metrics::Illuminant;
use crate::tensor::{no_grad, Conv2dLayer, DenseLayer, FireLayer, FireSpec, LayerSpec, Padding, Tensor};

pub use train::{train, EpochLog, TrainConfig, TrainReport};

/// Lower bound added after the softplus output guard.
pub const OUTPUT_FLOOR: f32 = 1e-6;

pub const CHANNEL_NAMES: [&str; 3] = ["r", "g", "b"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// One disjoint block shared by all planes.
    Shared,
    /// Independent disjoint block per plane.
    PerChannel,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Shared => "shared",
            Variant::PerChannel => "per_channel",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shared" => Ok(Variant::Shared),
            "per_channel" => Ok(Variant::PerChannel),
            other => Err(Error::invalid(format!("unknown variant {other:?} (shared|per_channel)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CwccConfig {
    pub input_size: usize,
    pub variant: Variant,
    pub dropout_rate: f64,
    pub conv_channels: usize,
    pub fire_sizes: [usize; 4],
    pub hidden_units: usize,
}

impl Default for CwccConfig {
    fn default() -> Self {
        Self {
            input_size: 128,
            variant: Variant::Shared,
            dropout_rate: 0.10,
            conv_channels: 64,
            fire_sizes: [64, 64, 128, 128],
            hidden_units: 40,
        }
    }
}

impl CwccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_size < 32 || !self.input_size.is_multiple_of(8) {
            return Err(Error::invalid(format!(
                "input size must be >= 32 and divisible by 8, got {}",
                self.input_size
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {}", self.dropout_rate)));
        }
        if self.conv_channels == 0 || self.hidden_units == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        for spec in self.disjoint_layers()? {
            spec.validate()?;
        }
        Ok(())
    }

    /// Channels of each plane's output feature map.
    pub fn feature_channels(&self) -> usize {
        self.fire_sizes[3]
    }

    /// Layer sequence of the disjoint block (applied to a 1-channel plane).
    pub fn disjoint_layers(&self) -> Result<Vec<LayerSpec>> {
        let pool = LayerSpec::Maxpool2d { window: 3, stride: 2 };
        let [f1, f2, f3, f4] = self.fire_sizes;
        Ok(vec![
            LayerSpec::Conv2d {
                in_channels: 1,
                out_channels: self.conv_channels,
                kernel: 3,
                stride: 1,
                same_padding: true,
            },
            LayerSpec::Relu,
            pool.clone(),
            LayerSpec::Fire(FireSpec::with_size(self.conv_channels, f1)?),
            LayerSpec::Fire(FireSpec::with_size(f1, f2)?),
            pool.clone(),
            LayerSpec::Fire(FireSpec::with_size(f2, f3)?),
            LayerSpec::Fire(FireSpec::with_size(f3, f4)?),
            pool,
        ])
    }

    /// Layer sequence of the merging block, starting from the three plane
    /// feature maps.
    pub fn merging_layers(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::Concat { axis: 1 },
            LayerSpec::Gap,
            LayerSpec::Dense {
                inputs: 3 * self.feature_channels(),
                units: self.hidden_units,
            },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: self.dropout_rate },
            LayerSpec::Dense {
                inputs: self.hidden_units,
                units: 3,
            },
        ]
    }
}

/// Per-plane extractor: conv + ReLU + pool, two fires + pool, two fires + pool.
#[derive(Debug, Clone)]
pub struct DisjointBlock {
    pub conv: Conv2dLayer,
    pub fires: [FireLayer; 4],
}

impl DisjointBlock {
    fn init(config: &CwccConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        let conv = Conv2dLayer::init(1, config.conv_channels, 3, 1, Padding::Same, rng);
        let [f1, f2, f3, f4] = config.fire_sizes;
        let fires = [
            FireLayer::init(FireSpec::with_size(config.conv_channels, f1)?, rng)?,
            FireLayer::init(FireSpec::with_size(f1, f2)?, rng)?,
            FireLayer::init(FireSpec::with_size(f2, f3)?, rng)?,
            FireLayer::init(FireSpec::with_size(f3, f4)?, rng)?,
        ];
        Ok(Self { conv, fires })
    }

    /// `[N,1,H,W]` plane batch to `[N,C,h,w]` features.
    pub fn forward(&self, plane: &Tensor) -> Result<Tensor> {
        let x = self.conv.forward(plane)?.relu().maxpool2d(3, 2)?;
        let x = self.fires[1].forward(&self.fires[0].forward(&x)?)?.maxpool2d(3, 2)?;
        self.fires[3].forward(&self.fires[2].forward(&x)?)?.maxpool2d(3, 2)
    }

    fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            (format!("{prefix}/conv1/weight"), &self.conv.weight),
            (format!("{prefix}/conv1/bias"), &self.conv.bias),
        ];
        const PARTS: [&str; 6] = [
            "squeeze/weight",
            "squeeze/bias",
            "expand1x1/weight",
            "expand1x1/bias",
            "expand3x3/weight",
            "expand3x3/bias",
        ];
        for (i, fire) in self.fires.iter().enumerate() {
            for (part, t) in PARTS.iter().zip(fire.params()) {
                out.push((format!("{prefix}/fire{}/{part}", i + 1), t));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.conv.weight, &mut self.conv.bias];
        for fire in &mut self.fires {
            out.extend(fire.params_mut());
        }
        out
    }
}

/// Merging head: dense → ReLU → dropout → dense → positive output guard.
#[derive(Debug, Clone)]
pub struct MergingBlock {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Per-plane feature maps before concatenation, in r,g,b order.
    pub features: [Tensor; 3],
    /// `[N, 3C]` pooled representation.
    pub pooled: Tensor,
    /// `[N, hidden]` activation after ReLU and before dropout.
    pub hidden: Tensor,
    /// `[N,3]` strictly positive, unnormalised estimate.
    pub estimate: Tensor,
}

#[derive(Debug, Default)]
struct CallCounters {
    disjoint: AtomicUsize,
    merging: AtomicUsize,
}

#[derive(Debug)]
pub struct CwccModel {
    config: CwccConfig,
    disjoint: Vec<DisjointBlock>,
    merging: MergingBlock,
    counters: CallCounters,
}

impl Clone for CwccModel {
    fn clone(&self) -> Self {
        Self {
            config: self.config.clone(),
            disjoint: self.disjoint.clone(),
            merging: self.merging.clone(),
            counters: CallCounters::default(),
        }
    }
}

/// Stacks images into an `[N,3,H,W]` batch of channel planes.
pub fn images_to_batch(images: &[&LinearImage]) -> Result<Tensor> {
    let first = images.first().ok_or_else(|| Error::invalid("empty image batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        if (img.height(), img.width()) != (h, w) {
            return Err(Error::invalid(format!(
                "batch mixes {h}x{w} and {}x{} images",
                img.height(),
                img.width()
            )));
        }
        for c in 0..3 {
            data.extend(img.data().iter().skip(c).step_by(3));
        }
    }
    Tensor::new(data, &[images.len(), 3, h, w])
}

impl CwccModel {
    /// He-initialised model; deterministic in `seed`.
    pub fn new(config: CwccConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let copies = match config.variant {
            Variant::Shared => 1,
            Variant::PerChannel => 3,
        };
        let disjoint = (0..copies)
            .map(|_| DisjointBlock::init(&config, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let merging = MergingBlock {
            hidden: DenseLayer::init(3 * config.feature_channels(), config.hidden_units, &mut rng),
            output: DenseLayer::init(config.hidden_units, 3, &mut rng),
        };
        Ok(Self {
            config,
            disjoint,
            merging,
            counters: CallCounters::default(),
        })
    }

    /// Per-channel copy whose three disjoint blocks all start from this
    /// model's shared block.
    pub fn untied(&self) -> Result<Self> {
        if self.config.variant != Variant::Shared {
            return Err(Error::invalid("untied() needs a shared-variant model"));
        }
        let block = &self.disjoint[0];
        let fresh = |t: &Tensor| Tensor::parameter(t.to_vec(), t.shape()).expect("same shape");
        let copy = || DisjointBlock {
            conv: Conv2dLayer {
                weight: fresh(&block.conv.weight),
                bias: fresh(&block.conv.bias),
                ..block.conv.clone()
            },
            fires: block.fires.clone().map(|f| FireLayer {
                spec: f.spec,
                squeeze: Conv2dLayer {
                    weight: fresh(&f.squeeze.weight),
                    bias: fresh(&f.squeeze.bias),
                    ..f.squeeze.clone()
                },
                expand1x1: Conv2dLayer {
                    weight: fresh(&f.expand1x1.weight),
                    bias: fresh(&f.expand1x1.bias),
                    ..f.expand1x1.clone()
                },
                expand3x3: Conv2dLayer {
                    weight: fresh(&f.expand3x3.weight),
                    bias: fresh(&f.expand3x3.bias),
                    ..f.expand3x3.clone()
                },
            }),
        };
        Ok(Self {
            config: CwccConfig {
                variant: Variant::PerChannel,
                ..self.config.clone()
            },
            disjoint: vec![copy(), copy(), copy()],
            merging: self.merging.clone(),
            counters: CallCounters::default(),
        })
    }

    pub fn config(&self) -> &CwccConfig {
        &self.config
    }

    pub fn variant(&self) -> Variant {
        self.config.variant
    }

    /// Disjoint block used for `channel` (0 = r, 1 = g, 2 = b).
    pub fn disjoint_block(&self, channel: usize) -> &DisjointBlock {
        match self.config.variant {
            Variant::Shared => &self.disjoint[0],
            Variant::PerChannel => &self.disjoint[channel],
        }
    }

    /// Number of distinct disjoint-block parameter sets held.
    pub fn disjoint_copies(&self) -> usize {
        self.disjoint.len()
    }

    pub fn merging_block(&self) -> &MergingBlock {
        &self.merging
    }

    /// Applies the disjoint block of `channel` to an `[N,1,H,W]` plane batch.
    pub fn disjoint_features(&self, channel: usize, plane: &Tensor) -> Result<Tensor> {
        self.counters.disjoint.fetch_add(1, Ordering::Relaxed);
        self.disjoint_block(channel).forward(plane)
    }

    /// Merging block from the three plane feature maps. Returns
    /// `(pooled, hidden, estimate)`.
    pub fn merge(
        &self,
        features: &[Tensor; 3],
        dropout_rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Tensor, Tensor, Tensor)> {
        self.counters.merging.fetch_add(1, Ordering::Relaxed);
        let pooled = Tensor::concat(features, 1)?.gap()?;
        let hidden = self.merging.hidden.forward(&pooled)?.relu();
        let dropped = match dropout_rng {
            Some(rng) => hidden.dropout(self.config.dropout_rate, true, rng)?,
            None => hidden.clone(),
        };
        let raw = self.merging.output.forward(&dropped)?;
        let estimate = raw.softplus().add(&Tensor::full(raw.shape(), OUTPUT_FLOOR))?;
        Ok((pooled, hidden, estimate))
    }

    /// Full forward pass over an `[N,3,H,W]` batch. Dropout is active only
    /// when `dropout_rng` is given.
    pub fn forward_trace(&self, batch: &Tensor, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<ForwardTrace> {
        let s = self.config.input_size;
        match *batch.shape() {
            [_, 3, h, w] if h == s && w == s => {}
            _ => {
                return Err(Error::invalid(format!(
                    "model expects [N,3,{s},{s}] input, got {:?}; resize first",
                    batch.shape()
                )))
            }
        }
        if !batch.all_finite() {
            return Err(Error::NonFinite("input batch contains NaN or Inf".into()));
        }
        let mut features = Vec::with_capacity(3);
        for c in 0..3 {
            let plane = batch.narrow(1, c, 1)?;
            features.push(self.disjoint_features(c, &plane)?);
        }
        let features: [Tensor; 3] = features.try_into().expect("three planes");
        let (pooled, hidden, estimate) = self.merge(&features, dropout_rng)?;
        Ok(ForwardTrace {
            features,
            pooled,
            hidden,
            estimate,
        })
    }

    fn check_image(&self, image: &LinearImage) -> Result<()> {
        let s = self.config.input_size;
        if image.height() != s || image.width() != s {
            return Err(Error::invalid(format!(
                "model expects {s}x{s} input, got {}x{}; resize first",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Inference on one image already resized to `input_size`.
    pub fn forward(&self, image: &LinearImage) -> Result<Illuminant> {
        Ok(self.estimate_batch(&[image])?.remove(0))
    }

    /// Inference over many images, `input_size` each, in chunks of 16.
    pub fn estimate_batch(&self, images: &[&LinearImage]) -> Result<Vec<Illuminant>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            for img in chunk {
                self.check_image(img)?;
            }
            let trace = no_grad(|| self.forward_trace(&images_to_batch(chunk)?, None))?;
            out.extend(rows_to_illuminants(&trace.estimate)?);
        }
        Ok(out)
    }

    /// Inference that also returns the hidden representation per image.
    pub fn estimate_with_hidden(&self, images: &[&LinearImage]) -> Result<Vec<(Illuminant, Vec<f32>)>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(16) {
            for img in chunk {
                self.check_image(img)?;
            }
            let trace = no_grad(|| self.forward_trace(&images_to_batch(chunk)?, None))?;
            let h = self.config.hidden_units;
            let est = rows_to_illuminants(&trace.estimate)?;
            out.extend(est.into_iter().zip(trace.hidden.data().chunks_exact(h).map(<[f32]>::to_vec)));
        }
        Ok(out)
    }

    /// Named parameters in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        match self.config.variant {
            Variant::Shared => out.extend(self.disjoint[0].named("disjoint")),
            Variant::PerChannel => {
                for (block, ch) in self.disjoint.iter().zip(CHANNEL_NAMES) {
                    out.extend(block.named(&format!("disjoint_{ch}")));
                }
            }
        }
        out.push(("merge/hidden/weight".into(), &self.merging.hidden.weight));
        out.push(("merge/hidden/bias".into(), &self.merging.hidden.bias));
        out.push(("merge/output/weight".into(), &self.merging.output.weight));
        out.push(("merge/output/bias".into(), &self.merging.output.bias));
        out
    }

    /// Mutable parameters in the same order as [`Self::named_parameters`].
    pub fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for block in &mut self.disjoint {
            out.extend(block.params_mut());
        }
        out.push(&mut self.merging.hidden.weight);
        out.push(&mut self.merging.hidden.bias);
        out.push(&mut self.merging.output.weight);
        out.push(&mut self.merging.output.bias);
        out
    }

    /// Replaces every parameter value, checking names and shapes.
    pub fn set_parameters(&mut self, values: &[(String, Vec<usize>, Vec<f32>)]) -> Result<()> {
        let expected: Vec<(String, Vec<usize>)> = self
            .named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected.len() != values.len() {
            return Err(Error::invalid(format!(
                "model has {} parameters, got {}",
                expected.len(),
                values.len()
            )));
        }
        for ((name, shape), (vn, vs, vd)) in expected.iter().zip(values) {
            if name != vn || shape != vs {
                return Err(Error::ShapeMismatch {
                    op: "set_parameters",
                    lhs: shape.clone(),
                    rhs: vs.clone(),
                })
                .map_err(|e| Error::invalid(format!("parameter {name} vs {vn}: {e}")));
            }
            if vd.len() != shape.iter().product::<usize>() {
                return Err(Error::invalid(format!("parameter {name}: wrong value count")));
            }
        }
        for (param, (_, shape, data)) in self.parameters_mut().into_iter().zip(values) {
            *param = Tensor::parameter(data.clone(), shape)?;
        }
        Ok(())
    }

    pub fn parameter_snapshot(&self) -> Vec<(String, Vec<usize>, Vec<f32>)> {
        self.named_parameters()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec(), t.to_vec()))
            .collect()
    }

    pub fn count_parameters(&self) -> usize {
        self.named_parameters().iter().map(|(_, t)| t.numel()).sum()
    }

    pub fn disjoint_parameter_count(&self) -> usize {
        self.named_parameters()
            .iter()
            .filter(|(n, _)| n.starts_with("disjoint"))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn merging_parameter_count(&self) -> usize {
        self.count_parameters() - self.disjoint_parameter_count()
    }

    /// CRC32 over every parameter name, shape and bit pattern.
    pub fn parameter_digest(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for (name, t) in self.named_parameters() {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update(&(*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(&v.to_bits().to_le_bytes());
            }
        }
        h.finalize()
    }

    /// `(disjoint, merging)` invocation counts since construction or reset.
    pub fn call_counts(&self) -> (usize, usize) {
        (
            self.counters.disjoint.load(Ordering::Relaxed),
            self.counters.merging.load(Ordering::Relaxed),
        )
    }

    pub fn reset_call_counts(&self) {
        self.counters.disjoint.store(0, Ordering::Relaxed);
        self.counters.merging.store(0, Ordering::Relaxed);
    }
}

pub(crate) fn rows_to_illuminants(estimate: &Tensor) -> Result<Vec<Illuminant>> {
    estimate
        .data()
        .chunks_exact(3)
        .map(|r| Illuminant::new(r[0] as f64, r[1] as f64, r[2] as f64).map(|e| e.normalized()))
        .collect()
}

/// Divides each channel by the illuminant, anchored so green is unchanged.
/// No clipping.
pub fn correct_image_unclipped(image: &LinearImage, e: &Illuminant) -> Result<LinearImage> {
    let [r, g, b] = e.rgb();
    let gains = [(g / r) as f32, 1.0, (g / b) as f32];
    image.map_pixels(|p| [p[0] * gains[0], p[1] * gains[1], p[2] * gains[2]])
}

/// White-balances `image` under illuminant `e`: per-channel division by the
/// green-anchored illuminant, then clipping to `[0,1]`. Invariant to the
/// scale of `e`.
pub fn correct_image(image: &LinearImage, e: &Illuminant) -> Result<LinearImage> {
    correct_image_unclipped(image, e)?.map_pixels(|p| p.map(|v| v.clamp(0.0, 1.0)))
}
