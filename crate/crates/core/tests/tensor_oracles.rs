//! Layer primitives against naive nested-loop references in f64.

use cwcc::tensor::{FireLayer, FireSpec, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new((0..n).map(|_| rng.random_range(-1.0..1.0)).collect(), shape).unwrap()
}

/// Direct 7-loop convolution with explicit zero padding.
fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, wd] = x.shape().try_into().unwrap();
    let [o, _, kh, kw] = w.shape().try_into().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let (xd, wdat, bd) = (x.data(), w.data(), b.data());
    let mut out = vec![0.0; n * o * oh * ow];
    for ni in 0..n {
        for oi in 0..o {
            for y in 0..oh {
                for xo in 0..ow {
                    let mut acc = bd[oi];
                    for ci in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (y * stride + ky) as isize - pad as isize;
                                let ix = (xo * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = xd[((ni * c + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = wdat[((oi * c + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * o + oi) * oh + y) * ow + xo] = acc;
                }
            }
        }
    }
    (vec![n, o, oh, ow], out)
}

fn naive_pool(x: &Tensor<f64>, window: usize, stride: usize) -> (Vec<usize>, Vec<f64>) {
    let [n, c, h, w] = x.shape().try_into().unwrap();
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in x.data().chunks(h * w) {
        for y in 0..oh {
            for xo in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for dy in 0..window {
                    for dx in 0..window {
                        m = m.max(plane[(y * stride + dy) * w + xo * stride + dx]);
                    }
                }
                out.push(m);
            }
        }
    }
    (vec![n, c, oh, ow], out)
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv2d_matches_nested_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Fixed case: 1x2x4x4 input, three 2x3x3 kernels, stride 1.
    let (x, w, b) = (random(&mut rng, &[1, 2, 4, 4]), random(&mut rng, &[3, 2, 3, 3]), random(&mut rng, &[3]));
    let got = x.conv2d(&w, &b, 1, Padding::Valid).unwrap();
    let (shape, want) = naive_conv(&x, &w, &b, 1, 0);
    assert_eq!(got.shape(), shape.as_slice());
    assert!(max_diff(got.data(), &want) < 1e-6);

    for case in 0..60 {
        let (n, c, o) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=4));
        let k = [1, 3, 5][case % 3];
        let (h, wd) = (rng.random_range(k..=9), rng.random_range(k..=9));
        let stride = rng.random_range(1..=3);
        let (padding, pad) = match case % 4 {
            0 => (Padding::Valid, 0),
            1 => (Padding::Same, k / 2),
            2 => (Padding::Explicit(1), 1),
            _ => (Padding::Explicit(2), 2),
        };
        let (x, w, b) = (random(&mut rng, &[n, c, h, wd]), random(&mut rng, &[o, c, k, k]), random(&mut rng, &[o]));
        let got = x.conv2d(&w, &b, stride, padding).unwrap();
        let (shape, want) = naive_conv(&x, &w, &b, stride, pad);
        assert_eq!(got.shape(), shape.as_slice(), "case {case}");
        let d = max_diff(got.data(), &want);
        assert!(d < 1e-6, "case {case}: {d}");
    }
}

#[test]
fn maxpool_matches_sliding_window() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[1, 4, 9, 9]);
    let (shape, want) = naive_pool(&x, 3, 2);
    let got = x.maxpool2d(3, 2).unwrap();
    assert_eq!(got.shape(), shape.as_slice());
    assert_eq!(got.data(), want.as_slice());
    for case in 0..60 {
        let window = rng.random_range(1..=4);
        let stride = rng.random_range(1..=3);
        let shape = [rng.random_range(1..=2), rng.random_range(1..=3), rng.random_range(window..=10), rng.random_range(window..=10)];
        let x = random(&mut rng, &shape);
        let got = x.maxpool2d(window, stride).unwrap();
        let (s, want) = naive_pool(&x, window, stride);
        assert_eq!(got.shape(), s.as_slice(), "case {case}");
        assert!(max_diff(got.data(), &want) < 1e-12, "case {case}");
    }
}

#[test]
fn gap_is_spatial_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..30 {
        let (n, c, h, w) = (rng.random_range(1..=3), rng.random_range(1..=4), rng.random_range(1..=7), rng.random_range(1..=7));
        let x = random(&mut rng, &[n, c, h, w]);
        let mut perm: Vec<usize> = (0..h * w).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let shuffled: Vec<f64> = x.data().chunks(h * w).flat_map(|p| perm.iter().map(|&i| p[i])).collect();
        let y = Tensor::new(shuffled, &[n, c, h, w]).unwrap();
        let (a, b) = (x.gap().unwrap(), y.gap().unwrap());
        assert_eq!(a.shape(), &[n, c]);
        assert!(max_diff(a.data(), b.data()) < 1e-12);
    }
}

#[test]
fn fire_equals_manual_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for size in [8, 16, 64] {
        let spec = FireSpec::with_size(12, size).unwrap();
        let fire: FireLayer<f64> = FireLayer::init(spec, &mut rng).unwrap();
        let x = random(&mut rng, &[2, 12, 5, 6]);
        let got = fire.forward(&x).unwrap();

        let (sq_shape, sq) = naive_conv(&x, &fire.squeeze.weight, &fire.squeeze.bias, 1, 0);
        let sq = Tensor::new(sq.into_iter().map(|v| v.max(0.0)).collect(), &sq_shape).unwrap();
        let (_, e1) = naive_conv(&sq, &fire.expand1x1.weight, &fire.expand1x1.bias, 1, 0);
        let (_, e3) = naive_conv(&sq, &fire.expand3x3.weight, &fire.expand3x3.bias, 1, 1);
        let (c1, c3, hw) = (spec.expand1x1, spec.expand3x3, 30);
        let mut want = Vec::new();
        for n in 0..2 {
            want.extend(e1[n * c1 * hw..(n + 1) * c1 * hw].iter().map(|v| v.max(0.0)));
            want.extend(e3[n * c3 * hw..(n + 1) * c3 * hw].iter().map(|v| v.max(0.0)));
        }
        assert_eq!(got.shape(), &[2, size, 5, 6]);
        assert!(max_diff(got.data(), &want) < 1e-9);
    }
}
