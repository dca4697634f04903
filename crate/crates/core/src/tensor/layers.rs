use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Element, Padding, Tensor};
use crate::error::{Error, Result};

/// Squeeze/expand split of a SqueezeNet fire module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FireSpec {
    pub in_channels: usize,
    pub squeeze: usize,
    pub expand1x1: usize,
    pub expand3x3: usize,
}

impl FireSpec {
    /// Fire module whose output has `size` channels: squeeze `size/2`,
    /// expand 1×1 `3·size/8`, expand 3×3 `5·size/8`.
    pub fn with_size(in_channels: usize, size: usize) -> Result<Self> {
        if size < 8 || !size.is_multiple_of(8) {
            return Err(Error::invalid(format!("fire size must be a positive multiple of 8, got {size}")));
        }
        let spec = Self {
            in_channels,
            squeeze: size / 2,
            expand1x1: 3 * size / 8,
            expand3x3: 5 * size / 8,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn out_channels(&self) -> usize {
        self.expand1x1 + self.expand3x3
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.squeeze == 0 || self.expand1x1 == 0 || self.expand3x3 == 0 {
            return Err(Error::invalid(format!("fire module channels must all be positive: {self:?}")));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        let s = self.squeeze;
        (self.in_channels * s + s) + (s * self.expand1x1 + self.expand1x1) + (9 * s * self.expand3x3 + self.expand3x3)
    }
}

/// Declarative description of one network layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        same_padding: bool,
    },
    Maxpool2d {
        window: usize,
        stride: usize,
    },
    Fire(FireSpec),
    Dense {
        inputs: usize,
        units: usize,
    },
    Relu,
    Dropout {
        rate: f64,
    },
    Gap,
    Concat {
        axis: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } if in_channels == 0 || out_channels == 0 || kernel == 0 || stride == 0 => {
                Err(Error::invalid(format!("degenerate conv2d spec {self:?}")))
            }
            LayerSpec::Maxpool2d { window, stride } if window == 0 || stride == 0 => {
                Err(Error::invalid(format!("degenerate maxpool2d spec {self:?}")))
            }
            LayerSpec::Fire(f) => f.validate(),
            LayerSpec::Dense { inputs, units } if inputs == 0 || units == 0 => {
                Err(Error::invalid(format!("degenerate dense spec {self:?}")))
            }
            LayerSpec::Dropout { rate } if !(0.0..1.0).contains(&rate) => {
                Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")))
            }
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel + out_channels,
            LayerSpec::Fire(f) => f.param_count(),
            LayerSpec::Dense { inputs, units } => inputs * units + units,
            _ => 0,
        }
    }
}

fn he_normal<T: Element, R: Rng + ?Sized>(fan_in: usize, len: usize, rng: &mut R) -> Vec<T> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
    (0..len).map(|_| T::from_f64_lossy(normal.sample(rng))).collect()
}

#[derive(Debug, Clone)]
pub struct Conv2dLayer<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub stride: usize,
    pub padding: Padding,
}

impl<T: Element> Conv2dLayer<T> {
    /// He-normal weights, zero bias.
    pub fn init<R: Rng + ?Sized>(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let weight = he_normal(fan_in, out_channels * fan_in, rng);
        Self {
            weight: Tensor::parameter(weight, &[out_channels, in_channels, kernel, kernel]).expect("consistent shape"),
            bias: Tensor::parameter(vec![T::zero(); out_channels], &[out_channels]).expect("consistent shape"),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.padding)
    }
}

#[derive(Debug, Clone)]
pub struct DenseLayer<T: Element = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Element> DenseLayer<T> {
    pub fn init<R: Rng + ?Sized>(inputs: usize, units: usize, rng: &mut R) -> Self {
        Self {
            weight: Tensor::parameter(he_normal(inputs, inputs * units, rng), &[inputs, units]).expect("consistent shape"),
            bias: Tensor::parameter(vec![T::zero(); units], &[units]).expect("consistent shape"),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.dense(&self.weight, &self.bias)
    }
}

/// Fire module parameters: squeeze 1×1 + ReLU, then 1×1 and same-padded 3×3
/// expands, each + ReLU, concatenated along channels.
#[derive(Debug, Clone)]
pub struct FireLayer<T: Element = f32> {
    pub spec: FireSpec,
    pub squeeze: Conv2dLayer<T>,
    pub expand1x1: Conv2dLayer<T>,
    pub expand3x3: Conv2dLayer<T>,
}

impl<T: Element> FireLayer<T> {
    pub fn init<R: Rng + ?Sized>(spec: FireSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            squeeze: Conv2dLayer::init(spec.in_channels, spec.squeeze, 1, 1, Padding::Valid, rng),
            expand1x1: Conv2dLayer::init(spec.squeeze, spec.expand1x1, 1, 1, Padding::Valid, rng),
            expand3x3: Conv2dLayer::init(spec.squeeze, spec.expand3x3, 3, 1, Padding::Same, rng),
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.shape().len() != 4 || x.shape()[1] != self.spec.in_channels {
            return Err(Error::ShapeMismatch {
                op: "fire",
                lhs: x.shape().to_vec(),
                rhs: self.squeeze.weight.shape().to_vec(),
            });
        }
        let s = self.squeeze.forward(x)?.relu();
        let e1 = self.expand1x1.forward(&s)?.relu();
        let e3 = self.expand3x3.forward(&s)?.relu();
        Tensor::concat(&[e1, e3], 1)
    }

    pub fn params(&self) -> [&Tensor<T>; 6] {
        [
            &self.squeeze.weight,
            &self.squeeze.bias,
            &self.expand1x1.weight,
            &self.expand1x1.bias,
            &self.expand3x3.weight,
            &self.expand3x3.bias,
        ]
    }

    pub fn params_mut(&mut self) -> [&mut Tensor<T>; 6] {
        [
            &mut self.squeeze.weight,
            &mut self.squeeze.bias,
            &mut self.expand1x1.weight,
            &mut self.expand1x1.bias,
            &mut self.expand3x3.weight,
            &mut self.expand3x3.bias,
        ]
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn fire_size_split() {
        let f = FireSpec::with_size(64, 64).unwrap();
        assert_eq!((f.squeeze, f.expand1x1, f.expand3x3), (32, 24, 40));
        assert_eq!(f.out_channels(), 64);
        assert!(FireSpec::with_size(64, 12).is_err());
        assert!(FireSpec::with_size(0, 64).is_err());
    }

    #[test]
    fn fire_of_size_64_keeps_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let fire = FireLayer::<f32>::init(FireSpec::with_size(64, 64).unwrap(), &mut rng).unwrap();
        let x = Tensor::<f32>::full(&[1, 64, 8, 8], 0.1);
        assert_eq!(fire.forward(&x).unwrap().shape(), &[1, 64, 8, 8]);
    }

    #[test]
    fn fire_of_zero_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let fire = FireLayer::<f32>::init(FireSpec::with_size(16, 32).unwrap(), &mut rng).unwrap();
        let y = fire.forward(&Tensor::zeros(&[2, 16, 5, 5])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fire_rejects_channel_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let fire = FireLayer::<f32>::init(FireSpec::with_size(16, 32).unwrap(), &mut rng).unwrap();
        assert!(fire.forward(&Tensor::zeros(&[1, 8, 5, 5])).is_err());
    }

    #[test]
    fn layer_param_counts() {
        let d = LayerSpec::Dense { inputs: 384, units: 40 };
        let o = LayerSpec::Dense { inputs: 40, units: 3 };
        assert_eq!(d.param_count() + o.param_count(), 15523);
        assert!(LayerSpec::Dropout { rate: 1.0 }.validate().is_err());
        let f = FireSpec::with_size(64, 64).unwrap();
        // squeeze 64·32+32, expand1x1 32·24+24, expand3x3 9·32·40+40
        assert_eq!(LayerSpec::Fire(f).param_count(), 2080 + 792 + 11560);
    }
}
