use super::{Backward, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// No padding.
    Valid,
    /// Zero padding of `kernel/2` on every side, preserving extents at stride 1.
    Same,
    Explicit(usize),
}

impl Padding {
    fn amount(self, kernel: usize) -> usize {
        match self {
            Padding::Valid => 0,
            Padding::Same => kernel / 2,
            Padding::Explicit(p) => p,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
        let padded = input + 2 * pad;
        (kernel <= padded).then(|| (padded - kernel) / stride + 1)
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.ho * self.wo
    }

    /// 1×1, stride 1, unpadded: the input plane block already is the patch matrix.
    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Patch matrix `[C·kh·kw, Ho·Wo]` for one image.
    fn im2col<T: Element>(&self, x: &[T], col: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c {
            let xc = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &mut col[((c * self.kh + i) * self.kw + j) * plane..][..plane];
                    for oy in 0..self.ho {
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(T::zero());
                            continue;
                        }
                        let src = &xc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds a patch-matrix gradient back onto one image.
    fn col2im<T: Element>(&self, col: &[T], dx: &mut [T]) {
        let plane = self.out_plane();
        for c in 0..self.c {
            let dxc = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let row = &col[((c * self.kh + i) * self.kw + j) * plane..][..plane];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + i) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut dxc[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + j) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

struct Conv2dOp {
    geo: Geometry,
}

impl<T: Element> Backward<T> for Conv2dOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let geo = self.geo;
        let (x, w) = (p[0].data(), p[1].data());
        let (patch, plane) = (geo.patch_len(), geo.out_plane());
        let in_len = geo.c * geo.h * geo.w;
        let out_len = geo.k * plane;

        let mut dx = p[0].requires_grad().then(|| vec![T::zero(); x.len()]);
        let mut dw = p[1].requires_grad().then(|| vec![T::zero(); w.len()]);
        let mut db = p[2].requires_grad().then(|| vec![T::zero(); geo.k]);
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); patch * plane] };
        let mut dcol = if geo.is_pointwise() || dx.is_none() {
            Vec::new()
        } else {
            vec![T::zero(); patch * plane]
        };

        for n in 0..geo.n {
            let xn = &x[n * in_len..(n + 1) * in_len];
            let gn = &g[n * out_len..(n + 1) * out_len];
            if let Some(db) = db.as_mut() {
                for (k, b) in db.iter_mut().enumerate() {
                    for &v in &gn[k * plane..(k + 1) * plane] {
                        *b += v;
                    }
                }
            }
            if let Some(dw) = dw.as_mut() {
                let cols: &[T] = if geo.is_pointwise() {
                    xn
                } else {
                    geo.im2col(xn, &mut col);
                    &col
                };
                T::matmul(geo.k, plane, patch, gn, false, cols, true, T::one(), dw);
            }
            if let Some(dx) = dx.as_mut() {
                let dxn = &mut dx[n * in_len..(n + 1) * in_len];
                if geo.is_pointwise() {
                    T::matmul(patch, geo.k, plane, w, true, gn, false, T::zero(), dxn);
                } else {
                    T::matmul(patch, geo.k, plane, w, true, gn, false, T::zero(), &mut dcol);
                    geo.col2im(&dcol, dxn);
                }
            }
        }
        vec![dx, dw, db]
    }
}

struct MaxPoolOp {
    argmax: Vec<usize>,
}

impl<T: Element> Backward<T> for MaxPoolOp {
    fn backward(&self, p: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let mut dx = vec![T::zero(); p[0].numel()];
        for (&src, &gv) in self.argmax.iter().zip(g) {
            dx[src] += gv;
        }
        vec![Some(dx)]
    }
}

struct GapOp {
    plane: usize,
}

impl<T: Element> Backward<T> for GapOp {
    fn backward(&self, _: &[Tensor<T>], _: &[T], g: &[T]) -> Vec<Option<Vec<T>>> {
        let inv = T::one() / T::from_usize(self.plane).unwrap();
        let mut dx = Vec::with_capacity(g.len() * self.plane);
        for &gv in g {
            dx.extend(std::iter::repeat_n(gv * inv, self.plane));
        }
        vec![Some(dx)]
    }
}

fn expect_rank4<T: Element>(op: &'static str, t: &Tensor<T>) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::invalid(format!("{op} expects a rank-4 [N,C,H,W] tensor, got {:?}", t.shape()))),
    }
}

impl<T: Element> Tensor<T> {
    /// 2-D cross-correlation of `[N,C,H,W]` input with `[K,C,kh,kw]` weights.
    pub fn conv2d(&self, weights: &Tensor<T>, bias: &Tensor<T>, stride: usize, padding: Padding) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("conv2d", self)?;
        let [k, wc, kh, kw] = expect_rank4("conv2d weights", weights)?;
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        }
        if bias.shape() != [k] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: weights.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be at least 1"));
        }
        let pad = padding.amount(kh.max(kw));
        let (Some(ho), Some(wo)) = (
            Geometry::out_extent(h, pad, kh, stride),
            Geometry::out_extent(w, pad, kw, stride),
        ) else {
            return Err(Error::ShapeMismatch {
                op: "conv2d (kernel larger than padded input)",
                lhs: self.shape().to_vec(),
                rhs: weights.shape().to_vec(),
            });
        };
        let geo = Geometry { n, c, h, w, k, kh, kw, stride, pad, ho, wo };
        let (patch, plane) = (geo.patch_len(), geo.out_plane());
        let in_len = c * h * w;

        let mut out = vec![T::zero(); n * k * plane];
        let mut col = if geo.is_pointwise() { Vec::new() } else { vec![T::zero(); patch * plane] };
        for (i, out_n) in out.chunks_exact_mut(k * plane).enumerate() {
            for (kk, row) in out_n.chunks_exact_mut(plane).enumerate() {
                row.fill(bias.data()[kk]);
            }
            let xn = &self.data()[i * in_len..(i + 1) * in_len];
            let cols: &[T] = if geo.is_pointwise() {
                xn
            } else {
                geo.im2col(xn, &mut col);
                &col
            };
            T::matmul(k, patch, plane, weights.data(), false, cols, false, T::one(), out_n);
        }
        Ok(Tensor::from_op(
            out,
            vec![n, k, ho, wo],
            vec![self.clone(), weights.clone(), bias.clone()],
            Conv2dOp { geo },
        ))
    }

    /// Unpadded max pooling with a square `window`. Ties route the gradient
    /// to the first maximum in row-major window order.
    pub fn maxpool2d(&self, window: usize, stride: usize) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("maxpool2d", self)?;
        if stride == 0 || window == 0 {
            return Err(Error::invalid("maxpool2d window and stride must be at least 1"));
        }
        if window > h || window > w {
            return Err(Error::invalid(format!(
                "maxpool2d window {window} larger than input {h}x{w}"
            )));
        }
        let ho = (h - window) / stride + 1;
        let wo = (w - window) / stride + 1;
        let x = self.data();
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = base + oy * stride * w + ox * stride;
                    for i in 0..window {
                        let row = base + (oy * stride + i) * w + ox * stride;
                        for idx in row..row + window {
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        Ok(Tensor::from_op(out, vec![n, c, ho, wo], vec![self.clone()], MaxPoolOp { argmax }))
    }

    /// Global average pooling `[N,C,H,W] -> [N,C]`.
    pub fn gap(&self) -> Result<Tensor<T>> {
        let [n, c, h, w] = expect_rank4("gap", self)?;
        let plane = h * w;
        let denom = T::from_usize(plane).unwrap();
        let out = self
            .data()
            .chunks_exact(plane)
            .map(|p| {
                let mut acc = T::zero();
                for &v in p {
                    acc += v;
                }
                acc / denom
            })
            .collect();
        Ok(Tensor::from_op(out, vec![n, c], vec![self.clone()], GapOp { plane }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_ones_kernel_sums_window() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = x.conv2d(&w, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn identity_pointwise_kernel() {
        let x = Tensor::<f32>::new((0..16).map(|v| v as f32 * 0.3).collect(), &[1, 1, 4, 4]).unwrap();
        let w = Tensor::<f32>::full(&[1, 1, 1, 1], 1.0);
        let y = x.conv2d(&w, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn same_padding_preserves_extent() {
        let x = Tensor::<f32>::zeros(&[2, 3, 7, 5]);
        let w = Tensor::<f32>::zeros(&[4, 3, 3, 3]);
        let y = x.conv2d(&w, &Tensor::zeros(&[4]), 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[2, 4, 7, 5]);
    }

    #[test]
    fn conv_rejects_channel_mismatch_naming_shapes() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        let err = x.conv2d(&w, &Tensor::zeros(&[1]), 1, Padding::Valid).unwrap_err().to_string();
        assert!(err.contains("[1, 2, 4, 4]") && err.contains("[1, 3, 3, 3]"), "{err}");
        let big = Tensor::<f32>::zeros(&[1, 2, 5, 5]);
        assert!(x.conv2d(&big.reshape(&[1, 2, 5, 5]).unwrap(), &Tensor::zeros(&[1]), 1, Padding::Valid).is_err());
    }

    #[test]
    fn maxpool_global_max_and_constant() {
        let x = Tensor::<f32>::new((1..=9).map(|v| v as f32).collect(), &[1, 1, 3, 3]).unwrap();
        assert_eq!(x.maxpool2d(3, 1).unwrap().item(), 9.0);
        let c = Tensor::<f32>::full(&[1, 2, 7, 7], 0.25);
        let y = c.maxpool2d(3, 2).unwrap();
        assert_eq!(y.shape(), &[1, 2, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 0.25));
        assert!(Tensor::<f32>::zeros(&[1, 1, 2, 2]).maxpool2d(3, 1).is_err());
    }

    #[test]
    fn maxpool_tie_routes_to_first() {
        let x = Tensor::<f64>::parameter(vec![1.0; 9], &[1, 1, 3, 3]).unwrap();
        x.maxpool2d(3, 1).unwrap().sum().backward().unwrap();
        let g = x.grad().unwrap();
        assert_eq!(g[0], 1.0);
        assert!(g[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gap_means() {
        let x = Tensor::<f64>::new(vec![1.0, 2.0, 3.0, 4.0], &[1, 1, 2, 2]).unwrap();
        assert_eq!(x.gap().unwrap().item(), 2.5);
        let c = Tensor::<f64>::full(&[2, 3, 4, 5], 1.75);
        assert!(c.gap().unwrap().data().iter().all(|&v| v == 1.75));
    }
}
