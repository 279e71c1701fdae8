use super::{EvalError, RdCurve};

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson).
#[derive(Clone, Debug)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` strictly increasing, at least two knots.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert!(n >= 2 && n == y.len(), "pchip needs matching knots");
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut d = vec![0.0; n];
        if n == 2 {
            d = vec![delta[0]; 2];
        } else {
            for i in 1..n - 1 {
                if delta[i - 1] * delta[i] > 0.0 {
                    let w1 = 2.0 * h[i] + h[i - 1];
                    let w2 = h[i] + 2.0 * h[i - 1];
                    d[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
                }
            }
            d[0] = end_slope(h[0], h[1], delta[0], delta[1]);
            d[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        }
        Pchip { x, y, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = self.x.partition_point(|&v| v <= t).clamp(1, n - 1) - 1;
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

/// Three-point end derivative, kept shape-preserving.
fn end_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}

pub const SIMPSON_INTERVALS: usize = 1000;
pub const MIN_OVERLAP_DB: f64 = 0.5;
pub const MIN_POINTS: usize = 4;

/// Composite Simpson rule with `n` (even) subintervals.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let inner: f64 = (1..n).map(|i| f(a + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 }).sum();
    h / 3.0 * (f(a) + f(b) + inner)
}

fn fit(curve: &RdCurve, name: &str, reference: f64) -> Result<(Pchip, f64, f64), EvalError> {
    let mut pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.psnr, p.bpp)).collect();
    if pts.len() < MIN_POINTS {
        return Err(EvalError::TooFewPoints { curve: name.to_string(), points: pts.len() });
    }
    if let Some(p) = pts.iter().find(|p| !(p.1 > 0.0 && p.0.is_finite() && p.1.is_finite())) {
        return Err(EvalError::Domain(format!("{name} curve has invalid point bpp {} psnr {}", p.1, p.0)));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    if pts.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(EvalError::NonMonotone(format!("{name} curve repeats a PSNR value")));
    }
    let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().map(|(q, r)| (q, (r / reference).log10())).unzip();
    Ok((Pchip::new(x, y), lo, hi))
}

/// Average rate difference of `test` against `anchor` at equal PSNR, in
/// percent. Negative values mean `test` needs fewer bits.
pub fn bd_rate(anchor: &RdCurve, test: &RdCurve) -> Result<f64, EvalError> {
    // Rates are taken relative to a common reference so that scaling both
    // curves by the same factor cancels before the logarithm.
    let reference = anchor.points.iter().map(|p| p.bpp).fold(f64::INFINITY, f64::min);
    let (fa, alo, ahi) = fit(anchor, "anchor", reference)?;
    let (ft, tlo, thi) = fit(test, "test", reference)?;
    let (lo, hi) = (alo.max(tlo), ahi.min(thi));
    if hi - lo < MIN_OVERLAP_DB {
        return Err(EvalError::Overlap { anchor: (alo, ahi), test: (tlo, thi) });
    }
    let diff = simpson(|q| ft.eval(q) - fa.eval(q), lo, hi, SIMPSON_INTERVALS) / (hi - lo);
    Ok(100.0 * (10f64.powf(diff) - 1.0))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;
    use crate::evaluation::RdPoint;

    fn curve(points: &[(f64, f64)]) -> RdCurve {
        RdCurve::new(points.iter().enumerate().map(|(i, &(bpp, psnr))| RdPoint { lambda: 32.0 * 2f64.powi(i as i32), bpp, psnr }).collect())
    }

    fn anchor() -> RdCurve {
        curve(&[(0.2, 28.0), (0.35, 30.5), (0.6, 32.6), (1.0, 34.9), (1.6, 36.8)])
    }

    fn scaled(c: &RdCurve, f: f64) -> RdCurve {
        let mut c = c.clone();
        c.points.iter_mut().for_each(|p| p.bpp *= f);
        c
    }

    #[test]
    fn identical_curves() {
        assert!(bd_rate(&anchor(), &anchor()).unwrap().abs() < 1e-9);
    }

    #[test]
    fn constant_rate_factor() {
        let v = bd_rate(&anchor(), &scaled(&anchor(), 1.10)).unwrap();
        assert!((v - 10.0).abs() < 0.01, "{v}");
    }

    #[test]
    fn antisymmetry() {
        let t = curve(&[(0.18, 28.3), (0.33, 30.9), (0.55, 32.8), (0.95, 35.2), (1.5, 36.9)]);
        let ab = bd_rate(&anchor(), &t).unwrap();
        let ba = bd_rate(&t, &anchor()).unwrap();
        assert!((ab + ba / (1.0 + ba / 100.0)).abs() < 0.01, "{ab} {ba}");
    }

    #[test]
    fn power_of_two_scaling_is_bitwise() {
        let t = curve(&[(0.18, 28.3), (0.33, 30.9), (0.55, 32.8), (0.95, 35.2)]);
        let v = bd_rate(&anchor(), &t).unwrap();
        assert_eq!(bd_rate(&scaled(&anchor(), 4.0), &scaled(&t, 4.0)).unwrap().to_bits(), v.to_bits());
    }

    #[test]
    fn errors() {
        let short = curve(&[(0.2, 28.0), (0.4, 30.0), (0.8, 32.0)]);
        assert!(matches!(bd_rate(&anchor(), &short), Err(EvalError::TooFewPoints { .. })));
        let far = curve(&[(2.0, 40.0), (3.0, 41.0), (4.0, 42.0), (5.0, 43.0)]);
        assert!(matches!(bd_rate(&anchor(), &far), Err(EvalError::Overlap { .. })));
    }

    #[test]
    fn pchip_interpolates_and_preserves_monotonicity() {
        let p = Pchip::new(vec![0.0, 1.0, 2.0, 5.0], vec![0.0, 1.0, 1.1, 4.0]);
        assert_eq!(p.eval(1.0), 1.0);
        assert_eq!(p.eval(5.0), 4.0);
        let mut prev = p.eval(0.0);
        for i in 1..=500 {
            let v = p.eval(i as f64 * 0.01);
            assert!(v >= prev - 1e-12);
            prev = v;
        }
        assert!((simpson(|x| x * x, 0.0, 3.0, 1000) - 9.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn common_scaling_cancels(f in 0.01f64..100.0, shift in -0.3f64..0.3) {
            let t = curve(&[(0.2 * (1.0 + shift), 28.2), (0.36, 30.4), (0.62, 32.9), (1.1, 35.0), (1.5, 36.5)]);
            let v = bd_rate(&anchor(), &t).unwrap();
            let w = bd_rate(&scaled(&anchor(), f), &scaled(&t, f)).unwrap();
            prop_assert!((v - w).abs() < 1e-9);
        }
    }
}
