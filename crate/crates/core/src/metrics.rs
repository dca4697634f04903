//! Angular error metrics and the five-statistic error summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Global light-source color. Only the direction is meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Illuminant {
    rgb: [f64; 3],
}

impl Illuminant {
    /// Fails unless every component is finite and strictly positive.
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        Self::from_array([r, g, b])
    }

    pub fn from_array(rgb: [f64; 3]) -> Result<Self> {
        if rgb.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::invalid(format!(
                "illuminant components must be finite and > 0, got {rgb:?}"
            )));
        }
        Ok(Self { rgb })
    }

    pub fn neutral() -> Self {
        Self { rgb: [1.0; 3] }.normalized()
    }

    pub fn rgb(&self) -> [f64; 3] {
        self.rgb
    }

    pub fn norm(&self) -> f64 {
        norm(&self.rgb)
    }

    /// Unit-L2 copy.
    pub fn normalized(&self) -> Self {
        let n = self.norm();
        Self {
            rgb: self.rgb.map(|v| v / n),
        }
    }

    pub fn scaled(&self, s: f64) -> Result<Self> {
        Self::from_array(self.rgb.map(|v| v * s))
    }
}

fn norm(v: &[f64; 3]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Angle in degrees between two vectors, cosine clamped to `[-1, 1]`.
pub fn angle_deg(a: [f64; 3], b: [f64; 3]) -> Result<f64> {
    let (na, nb) = (norm(&a), norm(&b));
    if na == 0.0 || nb == 0.0 || !na.is_finite() || !nb.is_finite() {
        return Err(Error::invalid("angle between zero or non-finite vectors"));
    }
    let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Recovery angular error in degrees.
pub fn recovery_error(gt: &Illuminant, est: &Illuminant) -> f64 {
    angle_deg(gt.rgb, est.rgb).expect("illuminants are positive")
}

/// Reproduction angular error in degrees: the angle between `gt ⊘ est` and
/// the grey axis.
pub fn reproduction_error(gt: &Illuminant, est: &Illuminant) -> f64 {
    let ratio = [0, 1, 2].map(|c| gt.rgb[c] / est.rgb[c]);
    let o = 1.0 / 3f64.sqrt();
    angle_deg(ratio, [o, o, o]).expect("illuminants are positive")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    Recovery,
    Reproduction,
}

impl Metric {
    pub fn eval(self, gt: &Illuminant, est: &Illuminant) -> f64 {
        match self {
            Metric::Recovery => recovery_error(gt, est),
            Metric::Reproduction => reproduction_error(gt, est),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Recovery => "recovery",
            Metric::Reproduction => "reproduction",
        }
    }
}

/// Best 25 %, mean, median, trimean and worst 25 % of a set of errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub best25: f64,
    pub mean: f64,
    pub median: f64,
    pub trimean: f64,
    pub worst25: f64,
}

impl ErrorSummary {
    pub fn as_array(&self) -> [f64; 5] {
        [self.best25, self.mean, self.median, self.trimean, self.worst25]
    }

    /// Field-wise mean of several summaries (cross-validation averaging).
    pub fn average(summaries: &[ErrorSummary]) -> Result<ErrorSummary> {
        if summaries.is_empty() {
            return Err(Error::invalid("cannot average zero summaries"));
        }
        let n = summaries.len() as f64;
        let mut acc = [0.0; 5];
        for s in summaries {
            for (a, v) in acc.iter_mut().zip(s.as_array()) {
                *a += v;
            }
        }
        Ok(ErrorSummary {
            best25: acc[0] / n,
            mean: acc[1] / n,
            median: acc[2] / n,
            trimean: acc[3] / n,
            worst25: acc[4] / n,
        })
    }
}

/// Linear-interpolation quantile of an ascending slice, position `(n-1)·q`.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Summarizes a nonempty list of non-negative errors. The 25 % tails hold
/// `ceil(n/4)` elements; quartiles use linear interpolation.
pub fn summarize(errors: &[f64]) -> Result<ErrorSummary> {
    if errors.is_empty() {
        return Err(Error::invalid("cannot summarize an empty error list"));
    }
    if let Some(bad) = errors.iter().find(|e| !e.is_finite() || **e < 0.0) {
        return Err(Error::invalid(format!("errors must be finite and >= 0, got {bad}")));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let tail = n.div_ceil(4);
    let mean_of = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let q1 = quantile_sorted(&sorted, 0.25);
    let median = quantile_sorted(&sorted, 0.5);
    let q3 = quantile_sorted(&sorted, 0.75);
    Ok(ErrorSummary {
        best25: mean_of(&sorted[..tail]),
        mean: mean_of(&sorted),
        median,
        trimean: (q1 + 2.0 * median + q3) / 4.0,
        worst25: mean_of(&sorted[n - tail..]),
    })
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid(format!(
            "pearson needs two equal-length series of at least 2 values, got {} and {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::invalid("pearson correlation undefined: a series has zero variance"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ill(r: f64, g: f64, b: f64) -> Illuminant {
        Illuminant::new(r, g, b).unwrap()
    }

    #[test]
    fn illuminant_rejects_non_positive() {
        assert!(Illuminant::new(0.0, 0.5, 0.5).is_err());
        assert!(Illuminant::new(1.0, f64::NAN, 0.5).is_err());
        assert!(angle_deg([0.0; 3], [1.0; 3]).is_err());
    }

    #[test]
    fn recovery_analytic_cases() {
        assert_eq!(recovery_error(&ill(0.3, 0.5, 0.2), &ill(0.3, 0.5, 0.2)), 0.0);
        assert!(recovery_error(&ill(2.0, 2.0, 2.0), &ill(1.0, 1.0, 1.0)).abs() < 1e-6);
        // (1,1,0) is not a valid illuminant; the bare angle covers it.
        let a = angle_deg([1.0, 1.0, 1.0], [1.0, 1.0, 0.0]).unwrap();
        assert!((a - 35.264_389_682_754_654).abs() < 1e-9, "{a}");
    }

    #[test]
    fn reproduction_analytic_cases() {
        assert_eq!(reproduction_error(&ill(0.2, 0.7, 0.1), &ill(0.2, 0.7, 0.1)), 0.0);
        assert!(reproduction_error(&ill(1.0, 1.0, 1.0), &ill(2.0, 2.0, 2.0)).abs() < 1e-6);
        let e = reproduction_error(&ill(2.0, 1.0, 1.0), &ill(1.0, 1.0, 1.0));
        assert!((e - 19.471_220_634_490_69).abs() < 1e-9, "{e}");
    }

    #[test]
    fn reproduction_is_asymmetric() {
        let (a, b) = (ill(1.0, 2.0, 4.0), ill(1.0, 1.0, 3.0));
        let ab = reproduction_error(&a, &b);
        let ba = reproduction_error(&b, &a);
        assert!((ab - ba).abs() > 0.1, "{ab} vs {ba}");
    }

    #[test]
    fn continuity_near_identity() {
        let e = ill(0.4, 0.5, 0.3);
        let near = ill(0.4 + 1e-6, 0.5, 0.3);
        assert!(recovery_error(&e, &near) < 1e-3);
    }

    #[test]
    fn summarize_known_lists() {
        let s = summarize(&[2.0; 4]).unwrap();
        assert_eq!(s.as_array(), [2.0; 5]);
        let s = summarize(&[4.0, 1.0, 3.0, 2.0]).unwrap();
        assert_eq!(s.as_array(), [1.0, 2.5, 2.5, 2.5, 4.0]);
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[1.0, -0.5]).is_err());
    }

    #[test]
    fn summarize_tail_rounds_up() {
        // n = 5 → tails of 2
        let s = summarize(&[1.0, 2.0, 3.0, 4.0, 10.0]).unwrap();
        assert_eq!(s.best25, 1.5);
        assert_eq!(s.worst25, 7.0);
        assert_eq!(s.median, 3.0);
    }

    #[test]
    fn pearson_cases() {
        let xs: Vec<f64> = (0..10).map(|i| i as f64 * 0.7 - 1.0).collect();
        let lin: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &lin).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-12);
        assert!(pearson(&xs, &[1.0; 10]).is_err());
        assert!(pearson(&xs[..1], &lin[..1]).is_err());
    }

    #[test]
    fn pearson_hand_table() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 7.0, 8.0, 6.0, 9.0, 10.0, 12.0];
        // Σx=55, Σy=62, Σxy=435, Σx²=385, Σy²=504
        let n = 10.0;
        let num = n * 435.0 - 55.0 * 62.0;
        let den = ((n * 385.0 - 55.0f64 * 55.0) * (n * 504.0 - 62.0f64 * 62.0)).sqrt();
        assert!((pearson(&xs, &ys).unwrap() - num / den).abs() < 1e-9);
    }

    fn positive3() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(0.01f64..10.0)
    }

    proptest! {
        #[test]
        fn metrics_are_scale_invariant(a in positive3(), b in positive3(), s in 0.01f64..100.0, t in 0.01f64..100.0) {
            let (ga, eb) = (Illuminant::from_array(a).unwrap(), Illuminant::from_array(b).unwrap());
            let (gs, es) = (ga.scaled(s).unwrap(), eb.scaled(t).unwrap());
            prop_assert!((recovery_error(&ga, &eb) - recovery_error(&gs, &es)).abs() < 1e-9);
            prop_assert!((reproduction_error(&ga, &eb) - reproduction_error(&gs, &es)).abs() < 1e-9);
        }

        #[test]
        fn recovery_is_symmetric_and_bounded(a in positive3(), b in positive3()) {
            let (x, y) = (Illuminant::from_array(a).unwrap(), Illuminant::from_array(b).unwrap());
            let e = recovery_error(&x, &y);
            prop_assert!((0.0..=180.0).contains(&e));
            prop_assert!((e - recovery_error(&y, &x)).abs() < 1e-12);
            prop_assert!(reproduction_error(&x, &y) >= 0.0);
        }

        #[test]
        fn summary_ordering(errs in prop::collection::vec(0.0f64..40.0, 1..200)) {
            let s = summarize(&errs).unwrap();
            prop_assert!(s.best25 <= s.median + 1e-12);
            prop_assert!(s.median <= s.worst25 + 1e-12);
            prop_assert!(s.best25 <= s.mean + 1e-12 && s.mean <= s.worst25 + 1e-12);
            prop_assert!(s.best25 >= 0.0);
        }
    }
}
