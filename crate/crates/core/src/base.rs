//! The invertible base: a bilateral Bernoulli shift realized as a stateless
//! symbol oracle, its metric, and base-level correlation and Hölder probes.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash2, mix64, stream_rng, unit_f64};
use crate::stats::{exp_fit, mean, ExpFit, KahanSum};
use rand::Rng;

/// Product (Bernoulli) measure on `{0, …, q−1}^ℤ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaseMeasureSpec {
    pub weights: Vec<f64>,
}

impl BaseMeasureSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        let spec = Self { weights };
        spec.validate()?;
        Ok(spec)
    }

    pub fn uniform(q: usize) -> Result<Self> {
        Self::new(vec![1.0 / q as f64; q])
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.len() < 2 {
            return Err(Error::InvalidMeasure(format!(
                "alphabet size must be at least 2, got {}",
                self.weights.len()
            )));
        }
        if let Some(w) = self.weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidMeasure(format!(
                "weight {w} is not strictly positive"
            )));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidMeasure(format!(
                "weights sum to {total}, not 1"
            )));
        }
        Ok(())
    }

    pub fn alphabet_size(&self) -> usize {
        self.weights.len()
    }

    fn cumulative(&self) -> Arc<[f64]> {
        let mut acc = 0.0;
        let mut cum: Vec<f64> = self
            .weights
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        *cum.last_mut().unwrap() = 1.0;
        cum.into()
    }

    /// Base point with an explicit PRF key.
    pub fn point(&self, seed: u64) -> BasePoint {
        BasePoint {
            seed,
            offset: 0,
            overrides: BTreeMap::new(),
            cumulative: self.cumulative(),
        }
    }
}

/// A point of the bilateral shift. Coordinate `i` is a keyed pseudorandom
/// function of `(seed, offset + i)` unless pinned in `overrides`, which is
/// keyed by absolute index so shifting never invalidates it.
#[derive(Clone)]
pub struct BasePoint {
    seed: u64,
    offset: i64,
    overrides: BTreeMap<i64, usize>,
    cumulative: Arc<[f64]>,
}

impl fmt::Debug for BasePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BasePoint")
            .field("seed", &self.seed)
            .field("offset", &self.offset)
            .field("overrides", &self.overrides)
            .finish()
    }
}

impl PartialEq for BasePoint {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.offset == other.offset
            && self.overrides == other.overrides
            && self.cumulative == other.cumulative
    }
}

impl BasePoint {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn offset(&self) -> i64 {
        self.offset
    }

    pub fn alphabet_size(&self) -> usize {
        self.cumulative.len()
    }

    /// Symbol at coordinate `i` relative to the current position.
    pub fn symbol(&self, i: i64) -> usize {
        let abs = self.offset + i;
        if let Some(&s) = self.overrides.get(&abs) {
            return s;
        }
        let u = unit_f64(hash2(self.seed, abs as u64));
        self.cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.cumulative.len() - 1)
    }

    /// Symbols at coordinates `lo..=hi`.
    pub fn window(&self, lo: i64, hi: i64) -> Vec<usize> {
        (lo..=hi).map(|i| self.symbol(i)).collect()
    }

    /// `τ^k(x)`: coordinate `i` of the result is coordinate `i + k` of `x`.
    pub fn shift(&self, k: i64) -> BasePoint {
        BasePoint {
            offset: self.offset + k,
            ..self.clone()
        }
    }

    /// Copy of the point with coordinate `i` pinned to `symbol`.
    pub fn with_symbol(&self, i: i64, symbol: usize) -> BasePoint {
        assert!(
            symbol < self.alphabet_size(),
            "symbol {symbol} outside alphabet"
        );
        let mut out = self.clone();
        out.overrides.insert(self.offset + i, symbol);
        out
    }

    /// Copy with every coordinate in `lo..=hi` pinned to the given symbols.
    pub fn with_window(&self, lo: i64, symbols: &[usize]) -> BasePoint {
        let mut out = self.clone();
        for (k, &s) in symbols.iter().enumerate() {
            assert!(s < self.alphabet_size(), "symbol {s} outside alphabet");
            out.overrides.insert(self.offset + lo + k as i64, s);
        }
        out
    }

    /// Hash identifying the fiber this point indexes.
    pub fn tag(&self) -> u64 {
        let mut h = hash2(self.seed, self.offset as u64);
        for (&k, &v) in &self.overrides {
            h = hash2(h ^ mix64(k as u64), v as u64);
        }
        h
    }
}

/// Draw `x ~ m`: stream `stream_id` under `master_seed`.
pub fn sample_base(spec: &BaseMeasureSpec, master_seed: u64, stream_id: u64) -> Result<BasePoint> {
    spec.validate()?;
    Ok(spec.point(derive_seed(master_seed, stream_id)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseMetricParams {
    /// Truncation window `W`; the neglected tail is at most `2^{−W+1}`.
    pub window: usize,
}

impl Default for BaseMetricParams {
    fn default() -> Self {
        Self { window: 48 }
    }
}

impl BaseMetricParams {
    pub fn truncation_error(&self) -> f64 {
        2f64.powi(-(self.window as i32) + 1)
    }
}

/// `Σ_{n=0}^{W} 2^{−n}·[x_{−n} ≠ x'_{−n}]`.
pub fn base_distance(x: &BasePoint, y: &BasePoint, params: &BaseMetricParams) -> f64 {
    let mut d = 0.0;
    let mut w = 1.0;
    for n in 0..=params.window as i64 {
        if x.symbol(-n) != y.symbol(-n) {
            d += w;
        }
        w *= 0.5;
    }
    d
}

type Evaluator = Arc<dyn Fn(&[usize]) -> f64 + Send + Sync>;

/// Real function of the symbols in a finite window `[lo, hi]`.
#[derive(Clone)]
pub struct BaseObservable {
    pub lo: i64,
    pub hi: i64,
    pub holder_exponent: f64,
    evaluator: Evaluator,
}

impl fmt::Debug for BaseObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BaseObservable")
            .field("lo", &self.lo)
            .field("hi", &self.hi)
            .field("holder_exponent", &self.holder_exponent)
            .finish()
    }
}

impl BaseObservable {
    pub fn new<F>(lo: i64, hi: i64, holder_exponent: f64, f: F) -> Self
    where
        F: Fn(&[usize]) -> f64 + Send + Sync + 'static,
    {
        assert!(lo <= hi, "empty window");
        Self {
            lo,
            hi,
            holder_exponent,
            evaluator: Arc::new(f),
        }
    }

    /// Indicator of `x_i = symbol`.
    pub fn indicator(i: i64, symbol: usize) -> Self {
        Self::new(i, i, 1.0, move |w| if w[0] == symbol { 1.0 } else { 0.0 })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(0, 0, 1.0, move |_| c)
    }

    pub fn eval(&self, x: &BasePoint) -> f64 {
        (self.evaluator)(&x.window(self.lo, self.hi))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayRow {
    pub n: i64,
    pub estimate: f64,
    pub std_err: f64,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    pub fit: Option<ExpFit>,
    pub noise_dominated: bool,
}

impl DecayTable {
    /// Fits `|estimate| ≈ C κ^n` on rows above twice their standard error.
    pub fn from_rows(rows: Vec<DecayRow>) -> Self {
        let signal: Vec<&DecayRow> = rows
            .iter()
            .filter(|r| r.estimate.abs() > 2.0 * r.std_err)
            .collect();
        let noise_dominated = signal.is_empty();
        let fit = if signal.len() >= 2 {
            let ks: Vec<f64> = signal.iter().map(|r| r.n as f64).collect();
            let vs: Vec<f64> = signal.iter().map(|r| r.estimate.abs()).collect();
            exp_fit(&ks, &vs)
        } else {
            None
        };
        Self {
            rows,
            fit,
            noise_dominated,
        }
    }
}

/// Monte Carlo estimate of `m(G∘τ^{−n}·F) − m(G)m(F)` for each `n`.
pub fn base_correlation_check(
    spec: &BaseMeasureSpec,
    f: &BaseObservable,
    g: &BaseObservable,
    n_list: &[i64],
    n_samples: usize,
    seed: u64,
) -> Result<DecayTable> {
    spec.validate()?;
    if n_samples < 2 {
        return Err(Error::InvalidArgument("need at least 2 samples".into()));
    }
    let points: Vec<BasePoint> = (0..n_samples as u64)
        .map(|i| spec.point(derive_seed(seed, i)))
        .collect();
    let fv: Vec<f64> = points.par_iter().map(|x| f.eval(x)).collect();
    let mut rows = Vec::with_capacity(n_list.len());
    for &n in n_list {
        let gv: Vec<f64> = points.par_iter().map(|x| g.eval(&x.shift(-n))).collect();
        let fm = mean(&fv);
        let gm = mean(&gv);
        let prods: Vec<f64> = fv
            .iter()
            .zip(&gv)
            .map(|(a, b)| (a - fm) * (b - gm))
            .collect();
        let nf = n_samples as f64;
        // unbiased covariance and the standard error of the product mean
        let cov = crate::stats::sum(&prods) / (nf - 1.0);
        let se = crate::stats::std_err(&prods);
        rows.push(DecayRow {
            n,
            estimate: cov,
            std_err: se,
            n_samples,
        });
    }
    Ok(DecayTable::from_rows(rows))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BaseHolderEstimate {
    pub sup_norm: f64,
    pub variation: f64,
    pub n_pairs: usize,
}

/// Partner of `x` that agrees with it on coordinates `> −depth`.
pub fn past_perturbed_partner(x: &BasePoint, depth: i64, fresh_seed: u64, reach: i64) -> BasePoint {
    let fresh = BasePoint {
        seed: fresh_seed,
        offset: 0,
        overrides: BTreeMap::new(),
        cumulative: x.cumulative.clone(),
    };
    let q = x.alphabet_size();
    let mut out = x.clone();
    for i in (-reach)..=(-depth) {
        let mut s = fresh.symbol(i);
        if i == -depth && s == x.symbol(i) {
            s = (s + 1) % q;
        }
        out.overrides.insert(x.offset + i, s);
    }
    out
}

/// Sampled sup norm and `β`-variation of a base observable over pairs that
/// differ only in the past beyond a random depth: alternately a single flipped
/// coordinate and a fully resampled tail.
pub fn holder_norm_base(
    spec: &BaseMeasureSpec,
    f: &BaseObservable,
    beta: f64,
    n_pairs: usize,
    seed: u64,
    metric: &BaseMetricParams,
) -> Result<BaseHolderEstimate> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta = {beta} outside (0, 1]"
        )));
    }
    spec.validate()?;
    let reach = metric.window as i64 + f.lo.abs() + 2;
    let per_pair: Vec<(f64, f64)> = (0..n_pairs as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i);
            let x = spec.point(rng.random());
            let depth = rng.random_range(0..=metric.window as i64);
            let y = if i % 2 == 0 {
                x.with_symbol(-depth, (x.symbol(-depth) + 1) % x.alphabet_size())
            } else {
                past_perturbed_partner(&x, depth, rng.random(), reach)
            };
            let fx = f.eval(&x);
            let fy = f.eval(&y);
            let d = base_distance(&x, &y, metric);
            let ratio = if d > 0.0 {
                (fx - fy).abs() / d.powf(beta)
            } else {
                0.0
            };
            (fx.abs().max(fy.abs()), ratio)
        })
        .collect();
    let mut sup = 0.0f64;
    let mut var = 0.0f64;
    for (s, r) in per_pair {
        sup = sup.max(s);
        var = var.max(r);
    }
    Ok(BaseHolderEstimate {
        sup_norm: sup,
        variation: var,
        n_pairs,
    })
}

/// Empirical frequencies of the symbol at coordinate `i` over sampled points.
pub fn symbol_counts(spec: &BaseMeasureSpec, seed: u64, n: usize, i: i64) -> Vec<u64> {
    let mut counts = vec![0u64; spec.alphabet_size()];
    for s in 0..n as u64 {
        counts[spec.point(derive_seed(seed, s)).symbol(i)] += 1;
    }
    counts
}

/// Compensated mean of a base observable over sampled points.
pub fn base_mean(spec: &BaseMeasureSpec, f: &BaseObservable, seed: u64, n: usize) -> f64 {
    let mut acc = KahanSum::new();
    for s in 0..n as u64 {
        acc.add(f.eval(&spec.point(derive_seed(seed, s))));
    }
    acc.total() / n as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::chi_squared_test;
    use proptest::prelude::*;

    fn fair() -> BaseMeasureSpec {
        BaseMeasureSpec::new(vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(BaseMeasureSpec::new(vec![0.5, 0.6]).is_err());
        assert!(BaseMeasureSpec::new(vec![1.0]).is_err());
        assert!(BaseMeasureSpec::new(vec![1.0, 0.0]).is_err());
        assert!(sample_base(
            &BaseMeasureSpec {
                weights: vec![0.3, 0.3]
            },
            1,
            1
        )
        .is_err());
    }

    #[test]
    fn shift_identity_and_definition() {
        let x = sample_base(&fair(), 42, 0).unwrap();
        assert_eq!(x.shift(0), x);
        assert_eq!(x.shift(5).shift(-5), x);
        for i in -20..20 {
            assert_eq!(x.shift(3).symbol(i), x.symbol(i + 3));
        }
    }

    #[test]
    fn overrides_survive_shifts() {
        let x = sample_base(&fair(), 1, 2).unwrap();
        let y = x.with_symbol(-3, 1 - x.symbol(-3));
        assert_ne!(y.symbol(-3), x.symbol(-3));
        assert_eq!(y.shift(-3).symbol(0), y.symbol(-3));
        assert_eq!(y.shift(7).shift(-7), y);
    }

    #[test]
    fn sampler_is_deterministic() {
        let a = sample_base(&fair(), 9, 3).unwrap();
        let b = sample_base(&fair(), 9, 3).unwrap();
        assert_eq!(a.window(0, 99), b.window(0, 99));
        let c = sample_base(&fair(), 9, 4).unwrap();
        assert_ne!(a.window(0, 99), c.window(0, 99));
    }

    #[test]
    fn fair_coin_frequency() {
        let n = 100_000;
        let counts = symbol_counts(&fair(), 42, n, 0);
        let freq = counts[1] as f64 / n as f64;
        let sigma = (0.25 / n as f64).sqrt();
        assert!((freq - 0.5).abs() < 3.0 * sigma, "freq = {freq}");
    }

    #[test]
    fn three_symbol_chi_squared() {
        let spec = BaseMeasureSpec::new(vec![0.2, 0.3, 0.5]).unwrap();
        let counts = symbol_counts(&spec, 42, 100_000, 0);
        let r = chi_squared_test(&counts, &spec.weights);
        assert!(r.p_value > 0.01, "{r:?}");
    }

    #[test]
    fn shift_invariance_of_window_law() {
        // histogram of the 3-symbol word at the origin before and after τ^k
        let spec = fair();
        let n = 20_000u64;
        let mut before = vec![0u64; 8];
        let mut after = vec![0u64; 8];
        for s in 0..n {
            let x = sample_base(&spec, 5, s).unwrap();
            let code = |p: &BasePoint| p.symbol(0) * 4 + p.symbol(1) * 2 + p.symbol(2);
            before[code(&x)] += 1;
            after[code(&x.shift(17))] += 1;
        }
        let probs = vec![0.125; 8];
        assert!(chi_squared_test(&before, &probs).p_value > 0.01);
        assert!(chi_squared_test(&after, &probs).p_value > 0.01);
    }

    #[test]
    fn distance_examples() {
        let metric = BaseMetricParams { window: 10 };
        let x = sample_base(&fair(), 3, 3).unwrap();
        assert_eq!(base_distance(&x, &x, &metric), 0.0);
        let y = x.with_symbol(-3, 1 - x.symbol(-3));
        assert_eq!(base_distance(&x, &y, &metric), 0.125);
        let flipped: Vec<usize> = x.window(-10, 0).iter().map(|s| 1 - s).collect();
        let z = x.with_window(-10, &flipped);
        assert_eq!(base_distance(&x, &z, &metric), 2047.0 / 1024.0);
        assert!((BaseMetricParams::default().truncation_error() - 2f64.powi(-47)).abs() < 1e-30);
    }

    proptest! {
        #[test]
        fn metric_axioms(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000) {
            let spec = fair();
            let metric = BaseMetricParams::default();
            let x = sample_base(&spec, 11, a).unwrap();
            let y = sample_base(&spec, 11, b).unwrap();
            let z = sample_base(&spec, 11, c).unwrap();
            let dxy = base_distance(&x, &y, &metric);
            prop_assert_eq!(dxy, base_distance(&y, &x, &metric));
            let dxz = base_distance(&x, &z, &metric);
            let dzy = base_distance(&z, &y, &metric);
            prop_assert!(dxy <= dxz + dzy + metric.truncation_error());
        }

        #[test]
        fn shift_roundtrip(seed in any::<u64>(), k in -1000i64..1000) {
            let x = fair().point(seed);
            prop_assert_eq!(x.shift(k).shift(-k), x.clone());
            prop_assert_eq!(x.shift(k).symbol(0), x.symbol(k));
        }
    }

    #[test]
    fn observable_reads_only_its_window() {
        let f = BaseObservable::new(0, 2, 1.0, |w| (w[0] + 2 * w[1] + 4 * w[2]) as f64);
        let x = sample_base(&fair(), 8, 8).unwrap();
        let y = x
            .with_symbol(3, 1 - x.symbol(3))
            .with_symbol(-1, 1 - x.symbol(-1));
        assert_eq!(f.eval(&x), f.eval(&y));
        let z = x.with_symbol(1, 1 - x.symbol(1));
        assert_ne!(f.eval(&x), f.eval(&z));
    }

    #[test]
    fn indicator_variance_and_independence() {
        let spec = fair();
        let f = BaseObservable::indicator(0, 0);
        let t = base_correlation_check(&spec, &f, &f, &[0, 1, 2, 5], 20_000, 42).unwrap();
        assert!((t.rows[0].estimate - 0.25).abs() < 4.0 * t.rows[0].std_err + 1e-3);
        for r in &t.rows[1..] {
            assert!(r.estimate.abs() <= 3.0 * r.std_err, "{r:?}");
        }
    }

    #[test]
    fn disjoint_windows_uncorrelated() {
        let spec = fair();
        let f = BaseObservable::new(0, 2, 1.0, |w| (w[0] + w[1] * w[2]) as f64);
        let g = BaseObservable::new(0, 3, 1.0, |w| {
            (w[0] * w[3] + w[1]) as f64 - 0.3 * w[2] as f64
        });
        let t = base_correlation_check(&spec, &f, &g, &[4, 6, 10], 20_000, 3).unwrap();
        for r in &t.rows {
            assert!(r.estimate.abs() <= 3.0 * r.std_err, "{r:?}");
        }
        assert!(t.noise_dominated);
    }

    #[test]
    fn holder_examples() {
        let spec = fair();
        let metric = BaseMetricParams::default();
        let c =
            holder_norm_base(&spec, &BaseObservable::constant(2.0), 1.0, 200, 1, &metric).unwrap();
        assert_eq!(c.variation, 0.0);
        assert_eq!(c.sup_norm, 2.0);

        let ind = BaseObservable::indicator(0, 0);
        let h = holder_norm_base(&spec, &ind, 1.0, 400, 1, &metric).unwrap();
        assert!(h.variation >= 1.0);

        let anchor = sample_base(&spec, 77, 0).unwrap();
        let win = metric.window as i64;
        let dist = BaseObservable::new(-win, 0, 1.0, move |w| {
            let y = anchor.with_window(-win, w);
            base_distance(
                &y,
                &anchor,
                &BaseMetricParams {
                    window: win as usize,
                },
            )
        });
        let d = holder_norm_base(&spec, &dist, 1.0, 300, 2, &metric).unwrap();
        assert!(d.variation <= 1.0 + 1e-12, "{d:?}");
    }

    #[test]
    fn holder_estimate_monotone_in_pairs() {
        let spec = fair();
        let metric = BaseMetricParams::default();
        let f = BaseObservable::new(-3, 0, 0.5, |w| (w[0] * 3 + w[3]) as f64);
        let mut prev = 0.0;
        for n in [10, 50, 200] {
            let e = holder_norm_base(&spec, &f, 0.5, n, 4, &metric).unwrap();
            assert!(e.variation >= prev);
            prev = e.variation;
        }
    }
}
