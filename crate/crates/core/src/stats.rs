//! Small numerical statistics toolkit: compensated sums, moments, least-squares
//! fits, batch standard errors and goodness-of-fit tests.

use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Neumaier-compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

pub fn sum(xs: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.total()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    sum(xs) / xs.len() as f64
}

/// Unbiased sample variance (two-pass).
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add((x - m) * (x - m));
    }
    acc.total() / (xs.len() - 1) as f64
}

pub fn std_err(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    (variance(xs) / xs.len() as f64).sqrt()
}

pub fn weighted_mean(xs: &[f64], ws: &[f64]) -> f64 {
    let mut num = KahanSum::new();
    let mut den = KahanSum::new();
    for (&x, &w) in xs.iter().zip(ws) {
        num.add(x * w);
        den.add(w);
    }
    num.total() / den.total()
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Standard error of a statistic from its values on `B` disjoint batches.
pub fn batch_std_err(batch_values: &[f64]) -> f64 {
    std_err(batch_values)
}

/// Ordinary least squares fit `y = intercept + slope * x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = mean(&xs[..n]);
    let my = mean(&ys[..n]);
    let mut sxx = KahanSum::new();
    let mut sxy = KahanSum::new();
    let mut syy = KahanSum::new();
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxx.add(dx * dx);
        sxy.add(dx * dy);
        syy.add(dy * dy);
    }
    let (sxx, sxy, syy) = (sxx.total(), sxy.total(), syy.total());
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy) / (sxx * syy)
    };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        n_points: n,
    })
}

/// Fit `value ≈ C · rate^k` by regressing `ln value` on `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpFit {
    pub rate: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub n_points: usize,
}

pub fn exp_fit(ks: &[f64], values: &[f64]) -> Option<ExpFit> {
    let (xs, ys): (Vec<f64>, Vec<f64>) = ks
        .iter()
        .zip(values)
        .filter(|(_, &v)| v > 0.0 && v.is_finite())
        .map(|(&k, &v)| (k, v.ln()))
        .unzip();
    let fit = linear_fit(&xs, &ys)?;
    Some(ExpFit {
        rate: fit.slope.exp(),
        constant: fit.intercept.exp(),
        r_squared: fit.r_squared,
        n_points: fit.n_points,
    })
}

pub fn normal_cdf(x: f64, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).map(|d| d.cdf(x)).unwrap_or(f64::NAN)
}

/// Asymptotic Kolmogorov distribution tail `P(K > t)`.
pub fn kolmogorov_tail(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 0.27 {
        return 1.0;
    }
    if t < 1.0 {
        // small-t series converges faster in this form
        let v = (-std::f64::consts::PI.powi(2) / (8.0 * t * t)).exp();
        let s = (2.0 * std::f64::consts::PI).sqrt() / t * (v + v.powi(9) + v.powi(25) + v.powi(49));
        return (1.0 - s).clamp(0.0, 1.0);
    }
    let mut p = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        if k % 2 == 1 {
            p += term;
        } else {
            p -= term;
        }
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * p).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sample Kolmogorov–Smirnov test against a continuous CDF.
pub fn ks_test<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> KsResult {
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    let nf = n as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / nf).max((i + 1) as f64 / nf - f);
    }
    let sn = nf.sqrt();
    // Stephens' finite-sample correction
    let p_value = kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d);
    KsResult {
        statistic: d,
        p_value,
        n,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson chi-squared goodness-of-fit test of counts against probabilities.
pub fn chi_squared_test(counts: &[u64], probs: &[f64]) -> ChiSquaredResult {
    let total: u64 = counts.iter().sum();
    let mut stat = 0.0;
    for (&c, &p) in counts.iter().zip(probs) {
        let expected = p * total as f64;
        if expected > 0.0 {
            stat += (c as f64 - expected).powi(2) / expected;
        }
    }
    let dof = counts.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(dof as f64)
        .map(|d| 1.0 - d.cdf(stat))
        .unwrap_or(f64::NAN);
    ChiSquaredResult {
        statistic: stat,
        dof,
        p_value,
    }
}

/// Slope of `ln values` against `n`; used as a no-growth test for bounds that
/// should be uniform in `n`.
pub fn log_growth_slope(ns: &[f64], values: &[f64]) -> f64 {
    let ys: Vec<f64> = values
        .iter()
        .map(|v| v.max(f64::MIN_POSITIVE).ln())
        .collect();
    linear_fit(ns, &ys).map(|f| f.slope).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kahan_recovers_small_terms() {
        let mut acc = KahanSum::new();
        acc.add(1e16);
        for _ in 0..1000 {
            acc.add(1.0);
        }
        acc.add(-1e16);
        assert_eq!(acc.total(), 1000.0);
    }

    #[test]
    fn linear_fit_exact_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [1.0, 3.0, 5.0, 7.0];
        let f = linear_fit(&xs, &ys).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept - 1.0).abs() < 1e-14);
        assert!((f.r_squared - 1.0).abs() < 1e-14);
    }

    #[test]
    fn exp_fit_recovers_rate() {
        let ks: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let vs: Vec<f64> = ks.iter().map(|k| 3.0 * 0.4f64.powf(*k)).collect();
        let f = exp_fit(&ks, &vs).unwrap();
        assert!((f.rate - 0.4).abs() < 1e-12);
        assert!((f.constant - 3.0).abs() < 1e-10);
    }

    #[test]
    fn kolmogorov_tail_known_values() {
        // P(K > 1.358) ≈ 0.05, P(K > 1.628) ≈ 0.01
        assert!((kolmogorov_tail(1.358) - 0.05).abs() < 1e-3);
        assert!((kolmogorov_tail(1.628) - 0.01).abs() < 5e-4);
        // continuity across the series switch
        assert!((kolmogorov_tail(0.999_999) - kolmogorov_tail(1.000_001)).abs() < 1e-5);
    }

    #[test]
    fn ks_uniform_grid_is_accepted() {
        let xs: Vec<f64> = (0..1000).map(|i| (i as f64 + 0.5) / 1000.0).collect();
        let r = ks_test(&xs, |x| x.clamp(0.0, 1.0));
        assert!(r.statistic <= 0.0005 + 1e-12);
        assert!(r.p_value > 0.99);
    }

    #[test]
    fn chi_squared_perfect_counts() {
        let r = chi_squared_test(&[200, 300, 500], &[0.2, 0.3, 0.5]);
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.dof, 2);
        assert!((r.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
