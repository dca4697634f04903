//! Central-difference gradient checks in f64 for every differentiable
//! primitive.

use cwcc::tensor::{no_grad, Padding, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;

type Op = dyn Fn(&[Tensor<f64>]) -> cwcc::Result<Tensor<f64>>;

pub struct CaseResult {
    pub primitive: &'static str,
    pub shapes: Vec<Vec<usize>>,
    pub rel_err: f64,
}

fn leaf(data: Vec<f64>, shape: &[usize]) -> Tensor<f64> {
    Tensor::parameter(data, shape).expect("valid test shape")
}

fn projected(op: &Op, inputs: &[Tensor<f64>], proj: &[f64]) -> f64 {
    let out = op(inputs).expect("primitive accepts its test inputs");
    out.data().iter().zip(proj).map(|(a, b)| a * b).sum()
}

/// Relative error `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` of the
/// gradient of `<op(inputs), proj>` with respect to every input.
pub fn check(primitive: &'static str, op: &Op, inputs: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng) -> CaseResult {
    let out = op(&inputs).expect("primitive accepts its test inputs");
    let proj: Vec<f64> = (0..out.numel()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let proj_t = Tensor::new(proj.clone(), out.shape()).unwrap();
    out.mul(&proj_t).unwrap().sum().backward().unwrap();
    let analytic: Vec<f64> = inputs
        .iter()
        .flat_map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.numel()]))
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    no_grad(|| {
        for (k, t) in inputs.iter().enumerate() {
            for i in 0..t.numel() {
                let eval = |delta: f64| {
                    let moved: Vec<Tensor<f64>> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, u)| {
                            let mut d = u.to_vec();
                            if j == k {
                                d[i] += delta;
                            }
                            Tensor::new(d, u.shape()).unwrap()
                        })
                        .collect();
                    projected(op, &moved, &proj)
                };
                numeric.push((eval(STEP) - eval(-STEP)) / (2.0 * STEP));
            }
        }
    });

    let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    CaseResult {
        primitive,
        shapes: inputs.iter().map(|t| t.shape().to_vec()).collect(),
        rel_err: if scale == 0.0 { 0.0 } else { diff / scale },
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Values bounded away from zero so kinks sit far outside the FD stencil.
fn off_kink(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let m = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect()
}

/// Distinct values at least 0.01 apart so every pooling window has a unique
/// maximum that the FD stencil cannot reorder.
fn distinct(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - 0.5).collect();
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        v.swap(i, j);
    }
    v
}

fn random_shape(rng: &mut ChaCha8Rng) -> Vec<usize> {
    let rank = rng.random_range(1..=4);
    (0..rank).map(|_| rng.random_range(1..=4)).collect()
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Runs `cases` random cases per primitive.
pub fn audit(cases: usize, seed: u64) -> Vec<CaseResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for case in 0..cases {
        let r = &mut rng;

        let s = random_shape(r);
        let (a, b) = (leaf(uniform(r, numel(&s)), &s), leaf(uniform(r, numel(&s)), &s));
        out.push(check("add", &|x| x[0].add(&x[1]), vec![a.clone(), b.clone()], r));
        out.push(check("sub", &|x| x[0].sub(&x[1]), vec![a.detach_param(), b.detach_param()], r));
        out.push(check("mul", &|x| x[0].mul(&x[1]), vec![a.detach_param(), b.detach_param()], r));
        let k = r.random_range(-2.0..2.0);
        out.push(check("scale", &move |x| Ok(x[0].scale(k)), vec![a.detach_param()], r));
        out.push(check("sum", &|x| Ok(x[0].sum()), vec![a.detach_param()], r));
        out.push(check("mean", &|x| Ok(x[0].mean()), vec![a.detach_param()], r));
        out.push(check("softplus", &|x| Ok(x[0].softplus()), vec![leaf(uniform(r, numel(&s)).iter().map(|v| v * 4.0).collect(), &s)], r));
        out.push(check("relu", &|x| Ok(x[0].relu()), vec![leaf(off_kink(r, numel(&s)), &s)], r));
        out.push(check("abs", &|x| Ok(x[0].abs()), vec![leaf(off_kink(r, numel(&s)), &s)], r));
        let flat = [numel(&s)];
        out.push(check("reshape", &move |x| x[0].reshape(&flat), vec![a.detach_param()], r));

        let (n, d, u) = (r.random_range(1..=4), r.random_range(1..=5), r.random_range(1..=4));
        out.push(check(
            "dense",
            &|x| x[0].dense(&x[1], &x[2]),
            vec![leaf(uniform(r, n * d), &[n, d]), leaf(uniform(r, d * u), &[d, u]), leaf(uniform(r, u), &[u])],
            r,
        ));

        let rank = r.random_range(1..=4);
        let base: Vec<usize> = (0..rank).map(|_| r.random_range(1..=3)).collect();
        let axis = r.random_range(0..rank);
        let parts: Vec<Tensor<f64>> = (0..r.random_range(2..=3))
            .map(|_| {
                let mut sh = base.clone();
                sh[axis] = r.random_range(1..=3);
                leaf(uniform(r, numel(&sh)), &sh)
            })
            .collect();
        out.push(check("concat", &move |x| Tensor::concat(x, axis), parts, r));

        let s = random_shape(r);
        let axis = r.random_range(0..s.len());
        let start = r.random_range(0..s[axis]);
        let len = r.random_range(1..=s[axis] - start);
        out.push(check("narrow", &move |x| x[0].narrow(axis, start, len), vec![leaf(uniform(r, numel(&s)), &s)], r));

        let mask_seed = r.random::<u64>();
        out.push(check(
            "dropout",
            &move |x| x[0].dropout(0.3, true, &mut ChaCha8Rng::seed_from_u64(mask_seed)),
            vec![leaf(uniform(r, numel(&s)), &s)],
            r,
        ));

        let rows = r.random_range(1..=4);
        let pos = |r: &mut ChaCha8Rng| leaf((0..rows * 3).map(|_| r.random_range(0.1..1.0)).collect(), &[rows, 3]);
        let (p, q) = (pos(r), pos(r));
        out.push(check("angular_error", &|x| x[0].angular_error_deg(&x[1]), vec![p, q], r));

        let (n, c, o) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3));
        let (h, w) = (r.random_range(3..=6), r.random_range(3..=6));
        let kernel = if case % 2 == 0 { 3 } else { 1 };
        let stride = r.random_range(1..=2);
        let padding = match case % 3 {
            0 => Padding::Valid,
            1 => Padding::Same,
            _ => Padding::Explicit(1),
        };
        out.push(check(
            "conv2d",
            &move |x| x[0].conv2d(&x[1], &x[2], stride, padding),
            vec![
                leaf(uniform(r, n * c * h * w), &[n, c, h, w]),
                leaf(uniform(r, o * c * kernel * kernel), &[o, c, kernel, kernel]),
                leaf(uniform(r, o), &[o]),
            ],
            r,
        ));

        let window = r.random_range(2..=3);
        let stride = r.random_range(1..=2);
        let (h, w) = (r.random_range(window..=6), r.random_range(window..=6));
        out.push(check(
            "maxpool2d",
            &move |x| x[0].maxpool2d(window, stride),
            vec![leaf(distinct(r, n * c * h * w), &[n, c, h, w])],
            r,
        ));
        out.push(check("gap", &|x| x[0].gap(), vec![leaf(uniform(r, n * c * h * w), &[n, c, h, w])], r));

        // Composite: recovery loss through a two-layer network.
        let (n, d, hdim) = (r.random_range(1..=3), r.random_range(2..=5), r.random_range(2..=6));
        let target = leaf((0..n * 3).map(|_| r.random_range(0.1..1.0)).collect(), &[n, 3]);
        out.push(check(
            "two_layer_recovery",
            &move |x| {
                let hdn = x[0].dense(&x[1], &x[2])?.softplus();
                let est = hdn.dense(&x[3], &x[4])?.softplus();
                Ok(est.angular_error_deg(&target.detach())?.mean())
            },
            vec![
                leaf(uniform(r, n * d), &[n, d]),
                leaf(uniform(r, d * hdim), &[d, hdim]),
                leaf(uniform(r, hdim), &[hdim]),
                leaf(uniform(r, hdim * 3), &[hdim, 3]),
                leaf(uniform(r, 3), &[3]),
            ],
            r,
        ));
    }
    out
}

trait FreshParam {
    fn detach_param(&self) -> Self;
}

impl FreshParam for Tensor<f64> {
    /// Same values as a new leaf, so gradients from earlier checks do not
    /// accumulate into it.
    fn detach_param(&self) -> Self {
        leaf(self.to_vec(), self.shape())
    }
}
