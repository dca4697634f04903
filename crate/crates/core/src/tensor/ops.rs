use rand::Rng;

use super::{Backward, Element, Tensor};
use crate::error::{Error, Result};

fn same_shape<T: Element>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn want<T: Element>(t: &Tensor<T>, f: impl FnOnce() -> Vec<T>) -> Option<Vec<T>> {
    t.requires_grad().then(f)
}

struct AddOp;
impl<T: Element> Backward<T> for AddOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![want(&p[0], || g.to_vec()), want(&p[1], || g.to_vec())]
    }
}

struct SubOp;
impl<T: Element> Backward<T> for SubOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![
            want(&p[0], || g.to_vec()),
            want(&p[1], || g.iter().map(|&v| -v).collect()),
        ]
    }
}

struct MulOp;
impl<T: Element> Backward<T> for MulOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (p[0].data(), p[1].data());
        vec![
            want(&p[0], || g.iter().zip(b).map(|(&g, &b)| g * b).collect()),
            want(&p[1], || g.iter().zip(a).map(|(&g, &a)| g * a).collect()),
        ]
    }
}

struct ScaleOp<T>(T);
impl<T: Element> Backward<T> for ScaleOp<T> {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().map(|&v| v * self.0).collect())]
    }
}

struct SumOp {
    scale_by_count: bool,
}
impl<T: Element> Backward<T> for SumOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let n = p[0].numel();
        let v = if self.scale_by_count {
            g[0] / T::from_usize(n).unwrap()
        } else {
            g[0]
        };
        vec![Some(vec![v; n])]
    }
}

struct ReluOp;
impl<T: Element> Backward<T> for ReluOp {
    fn backward(&self, _: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let z = T::zero();
        vec![Some(
            out.iter()
                .zip(g)
                .map(|(&o, &g)| if o > z { g } else { z })
                .collect(),
        )]
    }
}

struct SoftplusOp;
impl<T: Element> Backward<T> for SoftplusOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let one = T::one();
        vec![Some(
            p[0].data()
                .iter()
                .zip(g)
                .map(|(&x, &g)| g / (one + (-x).exp()))
                .collect(),
        )]
    }
}

struct AbsOp;
impl<T: Element> Backward<T> for AbsOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let z = T::zero();
        vec![Some(
            p[0].data()
                .iter()
                .zip(g)
                .map(|(&x, &g)| {
                    if x > z {
                        g
                    } else if x < z {
                        -g
                    } else {
                        z
                    }
                })
                .collect(),
        )]
    }
}

struct ReshapeOp;
impl<T: Element> Backward<T> for ReshapeOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.to_vec())]
    }
}

struct MaskOp<T>(Vec<T>);
impl<T: Element> Backward<T> for MaskOp<T> {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        vec![Some(g.iter().zip(&self.0).map(|(&g, &m)| g * m).collect())]
    }
}

struct DenseOp {
    rows: usize,
    inputs: usize,
    units: usize,
}
impl<T: Element> Backward<T> for DenseOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (n, d, u) = (self.rows, self.inputs, self.units);
        let (x, w) = (p[0].data(), p[1].data());
        let dx = want(&p[0], || {
            let mut dx = vec![T::zero(); n * d];
            T::matmul(n, u, d, g, false, w, true, T::zero(), &mut dx);
            dx
        });
        let dw = want(&p[1], || {
            let mut dw = vec![T::zero(); d * u];
            T::matmul(d, n, u, x, true, g, false, T::zero(), &mut dw);
            dw
        });
        let db = want(&p[2], || {
            let mut db = vec![T::zero(); u];
            for row in g.chunks_exact(u) {
                db.iter_mut().zip(row).for_each(|(b, &v)| *b += v);
            }
            db
        });
        vec![dx, dw, db]
    }
}

/// (outer, axis extent, inner) decomposition of a shape around `axis`.
fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

struct ConcatOp {
    axis: usize,
}
impl<T: Element> Backward<T> for ConcatOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, _, inner) = split_axis(p[0].shape(), self.axis);
        let chunks: Vec<usize> = p.iter().map(|t| t.shape()[self.axis] * inner).collect();
        let total: usize = chunks.iter().sum();
        let mut grads: Vec<Option<Vec<T>>> = p
            .iter()
            .map(|t| t.requires_grad().then(|| Vec::with_capacity(t.numel())))
            .collect();
        for o in 0..outer {
            let mut offset = o * total;
            for (grad, &len) in grads.iter_mut().zip(&chunks) {
                if let Some(grad) = grad {
                    grad.extend_from_slice(&g[offset..offset + len]);
                }
                offset += len;
            }
        }
        grads
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}
impl<T: Element> Backward<T> for NarrowOp {
    fn backward(&self, p: &[Tensor<T>], out: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (outer, extent, inner) = split_axis(p[0].shape(), self.axis);
        let len = out.len() / (outer * inner);
        let mut dx = vec![T::zero(); p[0].numel()];
        for o in 0..outer {
            let src = &g[o * len * inner..(o + 1) * len * inner];
            let dst = o * extent * inner + self.start * inner;
            dx[dst..dst + len * inner].copy_from_slice(src);
        }
        vec![Some(dx)]
    }
}

/// Cosine below which the arccos gradient is treated as saturated.
pub const COS_CLAMP: f64 = 1.0 - 1e-7;

struct AngleOp;
impl<T: Element> Backward<T> for AngleOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let (a, b) = (p[0].data(), p[1].data());
        let mut da = p[0].requires_grad().then(|| vec![T::zero(); a.len()]);
        let mut db = p[1].requires_grad().then(|| vec![T::zero(); b.len()]);
        for (row, &go) in g.iter().enumerate() {
            let av: Vec<f64> = a[row * 3..row * 3 + 3].iter().map(|v| v.to_f64().unwrap()).collect();
            let bv: Vec<f64> = b[row * 3..row * 3 + 3].iter().map(|v| v.to_f64().unwrap()).collect();
            let (dot, na, nb) = dot_norms(&av, &bv);
            let cos = dot / (na * nb);
            if !(-COS_CLAMP..=COS_CLAMP).contains(&cos) {
                continue;
            }
            // d(angle)/d(cos) in degrees
            let dangle = -go.to_f64().unwrap() * (180.0 / std::f64::consts::PI) / (1.0 - cos * cos).sqrt();
            for (grad, (x, y, nx)) in [(&mut da, (&av, &bv, na)), (&mut db, (&bv, &av, nb))] {
                if let Some(grad) = grad.as_mut() {
                    for c in 0..3 {
                        let dcos = y[c] / (na * nb) - cos * x[c] / (nx * nx);
                        grad[row * 3 + c] = T::from_f64_lossy(dangle * dcos);
                    }
                }
            }
        }
        vec![da, db]
    }
}

fn dot_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let dot = a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    (dot, na, nb)
}

impl<T: Element> Tensor<T> {
    fn map(&self, f: impl Fn(T) -> T) -> Vec<T> {
        self.data().iter().map(|&v| f(v)).collect()
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a + b).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], AddOp))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a - b).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], SubOp))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(&a, &b)| a * b).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], MulOp))
    }

    pub fn scale(&self, s: T) -> Tensor<T> {
        Tensor::from_op(self.map(|v| v * s), self.shape().to_vec(), vec![self.clone()], ScaleOp(s))
    }

    /// Sum of all elements, accumulated sequentially in row-major order.
    pub fn sum(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data() {
            acc += v;
        }
        Tensor::from_op(vec![acc], Vec::new(), vec![self.clone()], SumOp { scale_by_count: false })
    }

    pub fn mean(&self) -> Tensor<T> {
        let mut acc = T::zero();
        for &v in self.data() {
            acc += v;
        }
        let mean = acc / T::from_usize(self.numel()).unwrap();
        Tensor::from_op(vec![mean], Vec::new(), vec![self.clone()], SumOp { scale_by_count: true })
    }

    pub fn relu(&self) -> Tensor<T> {
        let z = T::zero();
        Tensor::from_op(self.map(|v| v.max(z)), self.shape().to_vec(), vec![self.clone()], ReluOp)
    }

    /// `ln(1 + e^x)`, evaluated stably for large `|x|`.
    pub fn softplus(&self) -> Tensor<T> {
        let z = T::zero();
        let data = self.map(|x| x.max(z) + (-x.abs()).exp().ln_1p());
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], SoftplusOp)
    }

    pub fn abs(&self) -> Tensor<T> {
        Tensor::from_op(self.map(|v| v.abs()), self.shape().to_vec(), vec![self.clone()], AbsOp)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op(self.to_vec(), shape.to_vec(), vec![self.clone()], ReshapeOp))
    }

    /// Fully connected layer: `[N,D]·[D,U] + [U]`.
    pub fn dense(&self, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let (xs, ws) = (self.shape(), weights.shape());
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] {
            return Err(Error::ShapeMismatch {
                op: "dense",
                lhs: xs.to_vec(),
                rhs: ws.to_vec(),
            });
        }
        let (n, d, u) = (xs[0], xs[1], ws[1]);
        if bias.shape() != [u] {
            return Err(Error::ShapeMismatch {
                op: "dense bias",
                lhs: ws.to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut out = Vec::with_capacity(n * u);
        for _ in 0..n {
            out.extend_from_slice(bias.data());
        }
        T::matmul(n, d, u, self.data(), false, weights.data(), false, T::one(), &mut out);
        Ok(Tensor::from_op(
            out,
            vec![n, u],
            vec![self.clone(), weights.clone(), bias.clone()],
            DenseOp { rows: n, inputs: d, units: u },
        ))
    }

    /// Concatenates along `axis`; all other extents must agree.
    pub fn concat(tensors: &[Tensor<T>], axis: usize) -> Result<Tensor<T>> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::invalid("concat of zero tensors"))?;
        let rank = first.shape().len();
        if axis >= rank {
            return Err(Error::invalid(format!("concat axis {axis} out of range for rank {rank}")));
        }
        for t in &tensors[1..] {
            let ok = t.shape().len() == rank
                && t.shape().iter().enumerate().all(|(i, &d)| i == axis || d == first.shape()[i]);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let (outer, _, inner) = split_axis(first.shape(), axis);
        let extent: usize = tensors.iter().map(|t| t.shape()[axis]).sum();
        let mut data = Vec::with_capacity(outer * extent * inner);
        for o in 0..outer {
            for t in tensors {
                let len = t.shape()[axis] * inner;
                data.extend_from_slice(&t.data()[o * len..(o + 1) * len]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = extent;
        Ok(Tensor::from_op(data, shape, tensors.to_vec(), ConcatOp { axis }))
    }

    /// Slice `[start, start+len)` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor<T>> {
        let shape = self.shape();
        if axis >= shape.len() || len == 0 || start + len > shape[axis] {
            return Err(Error::invalid(format!(
                "narrow({axis}, {start}, {len}) out of range for shape {shape:?}"
            )));
        }
        let (outer, extent, inner) = split_axis(shape, axis);
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let begin = o * extent * inner + start * inner;
            data.extend_from_slice(&self.data()[begin..begin + len * inner]);
        }
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        Ok(Tensor::from_op(data, out_shape, vec![self.clone()], NarrowOp { axis, start }))
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `rate` and survivors are scaled by `1/(1-rate)`. Identity
    /// when `training` is false.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, training: bool, rng: &mut R) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(self.clone());
        }
        let keep = T::from_f64_lossy(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let data = self.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], MaskOp(mask)))
    }

    /// Row-wise angle in degrees between `[N,3]` vectors, with the cosine
    /// clamped to `[-COS_CLAMP, COS_CLAMP]`.
    pub fn angular_error_deg(&self, target: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("angular_error", self, target)?;
        if self.shape().len() != 2 || self.shape()[1] != 3 {
            return Err(Error::invalid(format!(
                "angular error expects [N,3] rows, got {:?}",
                self.shape()
            )));
        }
        let n = self.shape()[0];
        let mut out = Vec::with_capacity(n);
        for row in 0..n {
            let a: Vec<f64> = self.data()[row * 3..row * 3 + 3].iter().map(|v| v.to_f64().unwrap()).collect();
            let b: Vec<f64> = target.data()[row * 3..row * 3 + 3].iter().map(|v| v.to_f64().unwrap()).collect();
            let (dot, na, nb) = dot_norms(&a, &b);
            if na == 0.0 || nb == 0.0 {
                return Err(Error::invalid(format!("zero vector in angular error row {row}")));
            }
            let cos = (dot / (na * nb)).clamp(-COS_CLAMP, COS_CLAMP);
            out.push(T::from_f64_lossy(cos.acos().to_degrees()));
        }
        Ok(Tensor::from_op(out, vec![n], vec![self.clone(), target.clone()], AngleOp))
    }
}
