use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{base_point, master, streams};
use crate::error::{Error, Result};
use crate::fiber::Observable;
use crate::rng::stream_rng;
use crate::sampler::OrbitSampler;
use crate::stats::{batch_std_err, exp_fit, mean, std_err, sum};
use crate::thermo::ThermoEngine;

const N_BATCHES: usize = 20;

/// Operator-route covariances `s_0..s_M` with batch-means standard errors.
#[derive(Debug, Clone, Serialize)]
pub struct RouteA {
    pub s: Vec<f64>,
    pub std_err: Vec<f64>,
    /// Fiber part `E ∫ g_{τ^m x}·L_0^m(ĝ_x ρ_x) dν_{τ^m x}`.
    pub fiber_part: Vec<f64>,
    /// Base part `Cov(G, G∘τ^m)` with `G(x) = μ_x(g_x)`.
    pub base_part: Vec<f64>,
    /// `μ(g)` from symbol-stratified means of `G`.
    pub mu_hat: f64,
    pub sigma2: f64,
    pub sigma2_std_err: f64,
    pub n_base_samples: usize,
}

/// `s_m = Cov_μ(g, g∘T^m)` for `m ≤ m_max`, split into the fiber term along
/// operator chains and the covariance of fiber means over the base.
///
/// The base term is post-stratified on the current symbol: with
/// `f = E[G | x_0]` and `R = G − f`, `Cov(f, f∘τ^m) = 0` for `m ≥ 1` under a
/// product measure, and the remaining three terms are small.
pub fn route_a(
    engine: &ThermoEngine,
    g: &Observable,
    m_max: usize,
    n_base_samples: usize,
    seed: u64,
) -> Result<RouteA> {
    if n_base_samples < N_BATCHES {
        return Err(Error::InvalidArgument(format!(
            "route A needs at least {N_BATCHES} base samples"
        )));
    }
    let bank = engine.bank();
    let spec = bank.spec();
    spec.validate_observable(g)?;
    let nodes = bank.observable_nodes(g);
    let top = m_max as i64;
    // (fiber terms A_m, fiber means G_j, symbols x_j)
    type Sample = (Vec<f64>, Vec<f64>, Vec<usize>);
    let per: Vec<Sample> = (0..n_base_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Sample> {
            let x = base_point(&spec.base, seed, streams::BASE_ROUTE_A, i)?;
            let chain = engine.chain(&x, 0, top)?;
            let symbols: Vec<usize> = (0..=top).map(|j| x.symbol(j)).collect();
            let means: Vec<f64> = (0..=top)
                .map(|j| chain.mu_integrate(j, &nodes.values[symbols[j as usize]]))
                .collect();
            let mut v: Vec<f64> = nodes.values[symbols[0]]
                .iter()
                .zip(chain.rho_values(0))
                .map(|(gz, r)| (gz - means[0]) * r)
                .collect();
            let mut fiber = Vec::with_capacity(m_max + 1);
            for j in 0..=top {
                if j > 0 {
                    let inv = 1.0 / chain.lambda(j - 1);
                    v = bank.op(symbols[j as usize - 1]).apply(&v);
                    v.iter_mut().for_each(|t| *t *= inv);
                }
                let w: Vec<f64> = v
                    .iter()
                    .zip(&nodes.values[symbols[j as usize]])
                    .map(|(a, b)| a * b)
                    .collect();
                fiber.push(chain.integrate(j, &w));
            }
            Ok((fiber, means, symbols))
        })
        .collect::<Result<_>>()?;

    let weights = &spec.base.weights;
    let q = weights.len();
    let mut strata = vec![Vec::new(); q];
    for (_, means, symbols) in &per {
        for (gj, &e) in means.iter().zip(symbols) {
            strata[e].push(*gj);
        }
    }
    let stratum_mean: Vec<f64> = strata
        .iter()
        .map(|s| if s.is_empty() { 0.0 } else { mean(s) })
        .collect();
    let mu_hat = sum(&weights
        .iter()
        .zip(&stratum_mean)
        .map(|(p, m)| p * m)
        .collect::<Vec<_>>());
    let between = sum(&weights
        .iter()
        .zip(&stratum_mean)
        .map(|(p, m)| p * (m - mu_hat) * (m - mu_hat))
        .collect::<Vec<_>>());
    let resid: Vec<Vec<f64>> = per
        .iter()
        .map(|(_, means, symbols)| {
            means
                .iter()
                .zip(symbols)
                .map(|(gj, &e)| gj - stratum_mean[e])
                .collect()
        })
        .collect();
    let resid_mean = mean(&resid.iter().flatten().cloned().collect::<Vec<_>>());

    // per-sample contribution to each s_m
    let psi: Vec<Vec<f64>> = per
        .iter()
        .zip(&resid)
        .map(|((fiber, _, symbols), r)| {
            let f = |j: usize| stratum_mean[symbols[j]] - mu_hat;
            (0..=m_max)
                .map(|m| {
                    let pairs = m_max + 1 - m;
                    let mut acc = 0.0;
                    for j in 0..pairs {
                        let (a, b) = (r[j] - resid_mean, r[j + m] - resid_mean);
                        acc += if m == 0 {
                            a * a
                        } else {
                            a * b + f(j) * b + a * f(j + m)
                        };
                    }
                    fiber[m] + acc / pairs as f64
                })
                .collect()
        })
        .collect();
    let column = |m: usize| -> Vec<f64> { psi.iter().map(|p| p[m]).collect() };
    let batch = |vals: &[f64]| -> f64 {
        let size = vals.len() / N_BATCHES;
        let means: Vec<f64> = vals.chunks(size).take(N_BATCHES).map(mean).collect();
        batch_std_err(&means)
    };
    let mut s = Vec::with_capacity(m_max + 1);
    let mut se = Vec::with_capacity(m_max + 1);
    let mut fiber_part = Vec::with_capacity(m_max + 1);
    let mut base_part = Vec::with_capacity(m_max + 1);
    for m in 0..=m_max {
        let col = column(m);
        let fm = mean(&per.iter().map(|p| p.0[m]).collect::<Vec<_>>());
        let total = mean(&col) + if m == 0 { between } else { 0.0 };
        s.push(total);
        se.push(batch(&col));
        fiber_part.push(fm);
        base_part.push(total - fm);
    }
    let series: Vec<f64> = psi.iter().map(|p| p[0] + 2.0 * sum(&p[1..])).collect();
    Ok(RouteA {
        sigma2: s[0] + 2.0 * sum(&s[1..]),
        sigma2_std_err: batch(&series),
        s,
        std_err: se,
        fiber_part,
        base_part,
        mu_hat,
        n_base_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceRow {
    pub m: usize,
    pub route_a: f64,
    pub route_a_std_err: f64,
    /// Orbit Monte Carlo `Cov(g, g∘T^m)`.
    pub route_b: f64,
    pub route_b_std_err: f64,
    pub agree: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct CovarianceReport {
    pub rows: Vec<CovarianceRow>,
    pub mu_hat: f64,
    /// Fitted `κ` in `|s_m| ≈ C κ^m` over route A entries above two standard errors.
    pub decay_rate: Option<f64>,
    pub all_agree: bool,
}

/// Orbit Monte Carlo `Cov(g_a, g_b)` with the standard error of its
/// linearization, for several lag pairs on shared orbits.
fn orbit_covariances(samples: &[Vec<f64>], pairs: &[(usize, usize)]) -> Vec<(f64, f64)> {
    pairs
        .iter()
        .map(|&(a, b)| {
            let xa: Vec<f64> = samples.iter().map(|s| s[a]).collect();
            let xb: Vec<f64> = samples.iter().map(|s| s[b]).collect();
            let (ma, mb) = (mean(&xa), mean(&xb));
            let psi: Vec<f64> = xa
                .iter()
                .zip(&xb)
                .map(|(u, v)| (u - ma) * (v - mb))
                .collect();
            (mean(&psi), std_err(&psi))
        })
        .collect()
}

fn sample_orbits(
    sampler: &OrbitSampler,
    engine: &ThermoEngine,
    g: &Observable,
    len: usize,
    n_orbits: usize,
    seed: u64,
    families: (u64, u64),
) -> Result<Vec<Vec<f64>>> {
    let spec = engine.bank().spec();
    (0..n_orbits as u64)
        .into_par_iter()
        .map(|i| {
            let x = base_point(&spec.base, seed, families.0, i)?;
            let mut rng = stream_rng(master(seed, families.1), i);
            sampler.observe_orbit(&x, g, len, &mut rng)
        })
        .collect()
}

pub fn covariance_sequence(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    m_max: usize,
    n_base_samples: usize,
    n_orbits: usize,
    seed: u64,
) -> Result<CovarianceReport> {
    let a = route_a(engine, g, m_max, n_base_samples, seed)?;
    let orbits = sample_orbits(
        sampler,
        engine,
        g,
        m_max + 1,
        n_orbits,
        seed,
        (streams::BASE_ROUTE_B, streams::ORBIT_ROUTE_B),
    )?;
    let pairs: Vec<(usize, usize)> = (0..=m_max).map(|m| (0, m)).collect();
    let b = orbit_covariances(&orbits, &pairs);
    let rows: Vec<CovarianceRow> = (0..=m_max)
        .map(|m| {
            let se = a.std_err[m].hypot(b[m].1);
            CovarianceRow {
                m,
                route_a: a.s[m],
                route_a_std_err: a.std_err[m],
                route_b: b[m].0,
                route_b_std_err: b[m].1,
                agree: (a.s[m] - b[m].0).abs() <= 4.0 * se + 1e-12,
            }
        })
        .collect();
    let (ms, vs): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.route_a.abs() > 2.0 * r.route_a_std_err && r.route_a != 0.0)
        .map(|r| (r.m as f64, r.route_a.abs()))
        .unzip();
    Ok(CovarianceReport {
        all_agree: rows.iter().all(|r| r.agree),
        decay_rate: if ms.len() >= 3 {
            exp_fit(&ms, &vs).map(|f| f.rate)
        } else {
            None
        },
        rows,
        mu_hat: a.mu_hat,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarianceParams {
    pub m_start: usize,
    pub m_max: usize,
    /// Series truncation stops once `|s_M|` falls below this.
    pub tail_tol: f64,
    pub n_base_samples: usize,
    /// Orbit length for the direct estimate `Var(S_n g)/n`.
    pub n_var: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for VarianceParams {
    fn default() -> Self {
        Self {
            m_start: 8,
            m_max: 64,
            tail_tol: 1e-4,
            n_base_samples: 2000,
            n_var: 10_000,
            trials: 2000,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VarianceReport {
    pub s: Vec<f64>,
    pub s_std_err: Vec<f64>,
    pub m: usize,
    /// `|s_M|` at the final truncation.
    pub tail: f64,
    /// Set when `|s_M| ≥ tail_tol` even at `m_max`.
    pub truncated: bool,
    pub sigma2_series: f64,
    pub sigma2_series_std_err: f64,
    pub sigma2_mc: f64,
    pub sigma2_mc_std_err: f64,
    pub mu_hat: f64,
    pub agreement: bool,
    pub n_var: usize,
    pub trials: usize,
}

/// Direct `Var(S_n g)/n` with its fourth-moment standard error.
fn direct_variance(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let spec = engine.bank().spec();
    let sums: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| -> Result<f64> {
            let x = base_point(&spec.base, seed, streams::BASE_VAR, i)?;
            let mut rng = stream_rng(master(seed, streams::ORBIT_VAR), i);
            Ok(sum(&sampler.observe_orbit(&x, g, n, &mut rng)?))
        })
        .collect::<Result<_>>()?;
    let m = mean(&sums);
    let sq: Vec<f64> = sums.iter().map(|s| (s - m) * (s - m)).collect();
    let var = crate::stats::variance(&sums);
    let m4 = mean(&sq.iter().map(|v| v * v).collect::<Vec<_>>());
    let se = ((m4 - var * var).max(0.0) / trials as f64).sqrt();
    Ok((var / n as f64, se / n as f64))
}

/// Route A with the truncation doubled from `m_start` until `|s_M| < tail_tol`
/// or `M = m_max`.
pub fn sigma2_series(engine: &ThermoEngine, g: &Observable, p: &VarianceParams) -> Result<RouteA> {
    if p.m_start == 0 || p.m_start > p.m_max {
        return Err(Error::InvalidArgument("need 0 < m_start ≤ m_max".into()));
    }
    let mut m = p.m_start;
    loop {
        let a = route_a(engine, g, m, p.n_base_samples, p.seed)?;
        if a.s[m].abs() < p.tail_tol || m >= p.m_max {
            return Ok(a);
        }
        m = (2 * m).min(p.m_max);
    }
}

pub fn sigma2_estimate(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    p: &VarianceParams,
) -> Result<VarianceReport> {
    if p.n_var == 0 || p.trials < 2 {
        return Err(Error::InvalidArgument(
            "need n_var > 0 and trials ≥ 2".into(),
        ));
    }
    let a = sigma2_series(engine, g, p)?;
    let m = a.s.len() - 1;
    let (sigma2_mc, sigma2_mc_std_err) =
        direct_variance(engine, sampler, g, p.n_var, p.trials, p.seed)?;
    let tail = a.s[m].abs();
    let diff = (a.sigma2 - sigma2_mc).abs();
    let tol = (0.05 * a.sigma2.abs()).max(4.0 * a.sigma2_std_err.hypot(sigma2_mc_std_err));
    Ok(VarianceReport {
        m,
        tail,
        truncated: tail >= p.tail_tol,
        sigma2_series: a.sigma2,
        sigma2_series_std_err: a.sigma2_std_err,
        sigma2_mc,
        sigma2_mc_std_err,
        mu_hat: a.mu_hat,
        agreement: diff <= tol + 1e-12,
        s: a.s,
        s_std_err: a.std_err,
        n_var: p.n_var,
        trials: p.trials,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StationarityRow {
    pub n: usize,
    pub m: usize,
    pub covariance: f64,
    pub std_err: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationarityReport {
    pub rows: Vec<StationarityRow>,
    /// Every row within four combined standard errors of the `n = n_list[0]` row with the same `m`.
    pub consistent: bool,
}

/// `Cov(g∘T^n, g∘T^{n+m})` on shared orbits for every `(n, m)`.
pub fn stationarity_check(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    n_list: &[usize],
    m_list: &[usize],
    n_orbits: usize,
    seed: u64,
) -> Result<StationarityReport> {
    if n_list.is_empty() || m_list.is_empty() {
        return Err(Error::InvalidArgument("empty n or m list".into()));
    }
    let len = n_list.iter().max().unwrap() + m_list.iter().max().unwrap() + 1;
    let orbits = sample_orbits(
        sampler,
        engine,
        g,
        len,
        n_orbits,
        seed,
        (streams::BASE_STAT, streams::ORBIT_STAT),
    )?;
    let pairs: Vec<(usize, usize)> = n_list
        .iter()
        .flat_map(|&n| m_list.iter().map(move |&m| (n, n + m)))
        .collect();
    let covs = orbit_covariances(&orbits, &pairs);
    let rows: Vec<StationarityRow> = pairs
        .iter()
        .zip(&covs)
        .map(|(&(n, b), &(c, se))| StationarityRow {
            n,
            m: b - n,
            covariance: c,
            std_err: se,
        })
        .collect();
    let consistent = rows.iter().all(|r| {
        let r0 = rows.iter().find(|q| q.m == r.m).unwrap();
        (r.covariance - r0.covariance).abs() <= 4.0 * r.std_err.hypot(r0.std_err) + 1e-12
    });
    Ok(StationarityReport { rows, consistent })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{SystemParams, SystemSpec};
    use crate::grid::Interp;
    use crate::sampler::SamplerParams;
    use crate::thermo::DepthParams;
    use crate::transfer::OperatorBank;
    use std::sync::Arc;

    fn setup() -> (ThermoEngine, OrbitSampler) {
        let spec = Arc::new(SystemSpec::new(&SystemParams::default()).unwrap());
        let bank = Arc::new(OperatorBank::new(spec.clone(), 256, Interp::Cubic).unwrap());
        let engine = ThermoEngine::new(bank, DepthParams::default()).unwrap();
        let sampler = OrbitSampler::new(spec, &SamplerParams::default()).unwrap();
        (engine, sampler)
    }

    #[test]
    fn constant_observable_has_zero_covariances() {
        let (e, s) = setup();
        let rep = covariance_sequence(&e, &s, &Observable::constant(0.7), 4, 40, 100, 1).unwrap();
        for r in &rep.rows {
            assert!(r.route_a.abs() < 1e-12 && r.route_b.abs() < 1e-12, "{r:?}");
        }
        assert!((rep.mu_hat - 0.7).abs() < 1e-12);
    }

    #[test]
    fn routes_agree_on_default_observable() {
        let (e, s) = setup();
        let g = e.bank().spec().observable.clone();
        let rep = covariance_sequence(&e, &s, &g, 6, 400, 20_000, 2).unwrap();
        assert!(rep.rows[0].route_a >= 0.0);
        assert!(rep.all_agree, "{rep:?}");
    }

    #[test]
    fn fiber_part_vanishes_at_lag_zero_only_for_constants() {
        let (e, _) = setup();
        let g = e.bank().spec().observable.clone();
        let a = route_a(&e, &g, 3, 40, 3).unwrap();
        assert!(a.fiber_part[0] > 0.0);
        let c = route_a(&e, &Observable::constant(-1.0), 3, 40, 3).unwrap();
        assert!(c.fiber_part.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn scaling_the_observable_scales_the_series() {
        let (e, _) = setup();
        let g = e.bank().spec().observable.clone();
        let a = route_a(&e, &g, 8, 40, 4).unwrap();
        let b = route_a(&e, &g.scaled(2.0), 8, 40, 4).unwrap();
        assert!((b.sigma2 - 4.0 * a.sigma2).abs() < 1e-10 * a.sigma2.abs().max(1.0));
    }

    #[test]
    fn stationarity_holds_within_error() {
        let (e, s) = setup();
        let g = e.bank().spec().observable.clone();
        let rep = stationarity_check(&e, &s, &g, &[0, 5, 20], &[0, 1, 3], 20_000, 5).unwrap();
        assert!(rep.consistent, "{rep:?}");
    }

    #[test]
    fn rejects_bad_parameters() {
        let (e, s) = setup();
        let g = e.bank().spec().observable.clone();
        let p = VarianceParams {
            m_start: 0,
            ..Default::default()
        };
        assert!(sigma2_estimate(&e, &s, &g, &p).is_err());
        assert!(route_a(&e, &g, 3, 5, 1).is_err());
    }
}
