use rayon::prelude::*;
use serde::Serialize;

use super::{base_point, master, streams};
use crate::error::{Error, Result};
use crate::fiber::Observable;
use crate::rng::stream_rng;
use crate::sampler::OrbitSampler;
use crate::stats::{ks_test, linear_fit, mean, median, normal_cdf, std_err, variance, KahanSum};
use crate::thermo::ThermoEngine;

/// Running sums `S_1, …, S_n` of `g` along one sampled orbit.
fn orbit_sums(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    n: usize,
    seed: u64,
    families: (u64, u64),
    i: u64,
) -> Result<Vec<f64>> {
    let x = base_point(&engine.bank().spec().base, seed, families.0, i)?;
    let mut rng = stream_rng(master(seed, families.1), i);
    let gs = sampler.observe_orbit(&x, g, n, &mut rng)?;
    let mut acc = KahanSum::new();
    Ok(gs
        .iter()
        .map(|v| {
            acc.add(*v);
            acc.total()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CltStatus {
    Tested,
    /// `σ²` at or below the floor: the Gaussian limit is degenerate and the
    /// coboundary check applies instead.
    Degenerate,
}

#[derive(Debug, Clone, Serialize)]
pub struct CltReport {
    pub status: CltStatus,
    pub sigma2: f64,
    pub sigma2_floor: f64,
    pub mu_hat: f64,
    pub n: usize,
    pub trials: usize,
    pub ks_stat: Option<f64>,
    pub p_value: Option<f64>,
    pub sample_mean: f64,
    pub sample_variance: f64,
    pub skewness: Option<f64>,
    pub excess_kurtosis: Option<f64>,
    /// `mean S_n/n` over trials and its standard error.
    pub birkhoff_mean: f64,
    pub birkhoff_mean_std_err: f64,
    /// `(S_n − nμ̂)/√n` per trial.
    #[serde(skip)]
    pub samples: Vec<f64>,
}

/// KS test of `(S_n g − nμ̂)/√n` against `N(0, σ²)` over independent orbits.
#[allow(clippy::too_many_arguments)]
pub fn clt_test(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    sigma2: f64,
    mu_hat: f64,
    n: usize,
    trials: usize,
    sigma2_floor: f64,
    seed: u64,
) -> Result<CltReport> {
    if n == 0 || trials < 2 {
        return Err(Error::InvalidArgument(
            "need n > 0 and at least two trials".into(),
        ));
    }
    let sums: Vec<f64> = (0..trials as u64)
        .into_par_iter()
        .map(|i| {
            orbit_sums(
                engine,
                sampler,
                g,
                n,
                seed,
                (streams::BASE_CLT, streams::ORBIT_CLT),
                i,
            )
            .map(|s| s[n - 1])
        })
        .collect::<Result<_>>()?;
    let root = (n as f64).sqrt();
    let samples: Vec<f64> = sums
        .iter()
        .map(|s| (s - n as f64 * mu_hat) / root)
        .collect();
    let averages: Vec<f64> = sums.iter().map(|s| s / n as f64).collect();
    let (m, v) = (mean(&samples), variance(&samples));
    let tested = sigma2 > sigma2_floor && v > 0.0;
    let (skewness, excess_kurtosis) = if v > 0.0 {
        let sd = v.sqrt();
        let z: Vec<f64> = samples.iter().map(|s| (s - m) / sd).collect();
        (
            Some(mean(&z.iter().map(|t| t.powi(3)).collect::<Vec<_>>())),
            Some(mean(&z.iter().map(|t| t.powi(4)).collect::<Vec<_>>()) - 3.0),
        )
    } else {
        (None, None)
    };
    let ks = tested.then(|| ks_test(&samples, |t| normal_cdf(t, 0.0, sigma2.sqrt())));
    Ok(CltReport {
        status: if tested {
            CltStatus::Tested
        } else {
            CltStatus::Degenerate
        },
        sigma2,
        sigma2_floor,
        mu_hat,
        n,
        trials,
        ks_stat: ks.as_ref().map(|k| k.statistic),
        p_value: ks.as_ref().map(|k| k.p_value),
        sample_mean: m,
        sample_variance: v,
        skewness,
        excess_kurtosis,
        birkhoff_mean: mean(&averages),
        birkhoff_mean_std_err: std_err(&averages),
        samples,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct LilReport {
    pub sigma2: f64,
    pub mu_hat: f64,
    /// Running maxima start at `k_min`, where `log log k` is comfortably positive.
    pub k_min: usize,
    pub checkpoints: Vec<usize>,
    /// Median over trials of the running max at each checkpoint.
    pub median: Vec<f64>,
    pub terminal_median: f64,
    /// Median of the statistic itself (not its running max) at each checkpoint.
    pub pointwise_median: Vec<f64>,
    pub trials: usize,
    /// `trajectories[t][c]`: running max of trial `t` at checkpoint `c`.
    #[serde(skip)]
    pub trajectories: Vec<Vec<f64>>,
}

/// Geometric checkpoints from `k_min` to `n_max`, eight per decade.
fn geometric_checkpoints(k_min: usize, n_max: usize) -> Vec<usize> {
    let mut out = Vec::new();
    let mut t = k_min as f64;
    while (t as usize) < n_max {
        let k = t.round() as usize;
        if out.last() != Some(&k) {
            out.push(k);
        }
        t *= 10f64.powf(1.0 / 8.0);
    }
    out.push(n_max);
    out
}

/// Per-trial running max of `|S_k − kμ̂| / (σ √(2k log log k))` over `k_min ≤ k ≤ n`.
#[allow(clippy::too_many_arguments)]
pub fn lil_probe(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    sigma2: f64,
    mu_hat: f64,
    n_max: usize,
    trials: usize,
    sigma2_floor: f64,
    seed: u64,
) -> Result<LilReport> {
    let k_min = 16;
    if n_max < 100 || trials == 0 {
        return Err(Error::InvalidArgument(
            "need n_max ≥ 100 and at least one trial".into(),
        ));
    }
    let sd = sigma2.max(sigma2_floor).sqrt();
    let checkpoints = geometric_checkpoints(k_min, n_max);
    let per: Vec<(Vec<f64>, Vec<f64>)> = (0..trials as u64)
        .into_par_iter()
        .map(|i| -> Result<(Vec<f64>, Vec<f64>)> {
            let sums = orbit_sums(
                engine,
                sampler,
                g,
                n_max,
                seed,
                (streams::BASE_LIL, streams::ORBIT_LIL),
                i,
            )?;
            let mut out = Vec::with_capacity(checkpoints.len());
            let mut now = Vec::with_capacity(checkpoints.len());
            let mut running = 0.0f64;
            let mut c = 0;
            for k in k_min..=n_max {
                let kf = k as f64;
                let t = (sums[k - 1] - kf * mu_hat).abs() / (sd * (2.0 * kf * kf.ln().ln()).sqrt());
                running = running.max(t);
                if k == checkpoints[c] {
                    out.push(running);
                    now.push(t);
                    c += 1;
                }
            }
            Ok((out, now))
        })
        .collect::<Result<_>>()?;
    let (trajectories, pointwise): (Vec<Vec<f64>>, Vec<Vec<f64>>) = per.into_iter().unzip();
    let column_median =
        |rows: &[Vec<f64>], c: usize| median(&rows.iter().map(|t| t[c]).collect::<Vec<_>>());
    let median_at: Vec<f64> = (0..checkpoints.len())
        .map(|c| column_median(&trajectories, c))
        .collect();
    let pointwise_median = (0..checkpoints.len())
        .map(|c| column_median(&pointwise, c))
        .collect();
    Ok(LilReport {
        sigma2,
        mu_hat,
        k_min,
        terminal_median: *median_at.last().unwrap(),
        median: median_at,
        pointwise_median,
        checkpoints,
        trials,
        trajectories,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    CoboundaryConsistent,
    NotCoboundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoboundaryRow {
    pub n: usize,
    /// `‖S_n g − n c‖_{L²(μ)}`.
    pub l2_norm: f64,
    /// `E|S_n g − n c| / n^{1/4}`.
    pub quarter_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CoboundaryReport {
    pub center: f64,
    pub rows: Vec<CoboundaryRow>,
    pub sup_l2: f64,
    /// Slopes against `log n` of `log ‖·‖_{L²}` and of the quarter ratio.
    pub l2_slope: f64,
    pub quarter_slope: f64,
    pub verdict: Verdict,
    pub trials: usize,
}

/// Growth of centered Birkhoff sums across `n_list`; bounded sums with a
/// falling `n^{−1/4}` ratio are read as a coboundary.
pub fn coboundary_check(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    g: &Observable,
    center: f64,
    n_list: &[usize],
    trials: usize,
    seed: u64,
) -> Result<CoboundaryReport> {
    if n_list.len() < 2 || n_list.contains(&0) || trials < 2 {
        return Err(Error::InvalidArgument(
            "need two positive n values and two trials".into(),
        ));
    }
    let n_top = *n_list.iter().max().unwrap();
    let per: Vec<Vec<f64>> = (0..trials as u64)
        .into_par_iter()
        .map(|i| -> Result<Vec<f64>> {
            let sums = orbit_sums(
                engine,
                sampler,
                g,
                n_top,
                seed,
                (streams::BASE_COB, streams::ORBIT_COB),
                i,
            )?;
            Ok(n_list
                .iter()
                .map(|&n| sums[n - 1] - n as f64 * center)
                .collect())
        })
        .collect::<Result<_>>()?;
    let rows: Vec<CoboundaryRow> = n_list
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            let col: Vec<f64> = per.iter().map(|p| p[c]).collect();
            CoboundaryRow {
                n,
                l2_norm: mean(&col.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt(),
                quarter_ratio: mean(&col.iter().map(|v| v.abs()).collect::<Vec<_>>())
                    / (n as f64).powf(0.25),
            }
        })
        .collect();
    let log_n: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let slope = |vals: Vec<f64>| {
        let ys: Vec<f64> = vals.iter().map(|v| v.max(f64::MIN_POSITIVE).ln()).collect();
        linear_fit(&log_n, &ys).map(|f| f.slope).unwrap_or(0.0)
    };
    let all_zero = rows.iter().all(|r| r.l2_norm == 0.0);
    let (l2_slope, quarter_slope) = if all_zero {
        (0.0, f64::NEG_INFINITY)
    } else {
        (
            slope(rows.iter().map(|r| r.l2_norm).collect()),
            slope(rows.iter().map(|r| r.quarter_ratio).collect()),
        )
    };
    let bounded = l2_slope < 0.1 && quarter_slope < 0.0;
    Ok(CoboundaryReport {
        center,
        sup_l2: rows.iter().map(|r| r.l2_norm).fold(0.0, f64::max),
        rows,
        l2_slope,
        quarter_slope,
        verdict: if bounded {
            Verdict::CoboundaryConsistent
        } else {
            Verdict::NotCoboundary
        },
        trials,
    })
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
        let bank = Arc::new(OperatorBank::new(spec.clone(), 64, Interp::Cubic).unwrap());
        let engine = ThermoEngine::new(bank, DepthParams::default()).unwrap();
        let sampler = OrbitSampler::new(spec, &SamplerParams::default()).unwrap();
        (engine, sampler)
    }

    #[test]
    fn zero_observable_is_degenerate() {
        let (e, s) = setup();
        let rep = clt_test(
            &e,
            &s,
            &Observable::constant(0.0),
            0.0,
            0.0,
            50,
            20,
            1e-3,
            1,
        )
        .unwrap();
        assert_eq!(rep.status, CltStatus::Degenerate);
        assert!(rep.samples.iter().all(|v| *v == 0.0));
        assert!(rep.p_value.is_none());
        let json = serde_json::to_string(&rep).unwrap();
        assert!(!json.contains("NaN"));
    }

    #[test]
    fn birkhoff_average_matches_mean() {
        let (e, s) = setup();
        let g = e.bank().spec().observable.clone();
        let rep = clt_test(&e, &s, &g, 0.05, 0.0, 500, 400, 1e-3, 2).unwrap();
        assert_eq!(rep.status, CltStatus::Tested);
        // fiber means average to about 0.077 on the default system
        let mu = crate::limits::route_a(&e, &g, 0, 400, 2).unwrap().mu_hat;
        assert!(
            (rep.birkhoff_mean - mu).abs() < 4.0 * rep.birkhoff_mean_std_err + 2e-3,
            "{rep:?} {mu}"
        );
    }

    #[test]
    fn checkpoints_are_geometric_and_end_at_n_max() {
        let c = geometric_checkpoints(16, 1000);
        assert_eq!(c[0], 16);
        assert_eq!(*c.last().unwrap(), 1000);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn running_max_is_monotone() {
        let (e, s) = setup();
        let g = e.bank().spec().observable.clone();
        let rep = lil_probe(&e, &s, &g, 0.05, 0.077, 2000, 10, 1e-3, 3).unwrap();
        for t in &rep.trajectories {
            assert!(t.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn coboundary_sums_stay_bounded() {
        let (e, s) = setup();
        let g = Observable::coboundary(0.3);
        let rep = coboundary_check(&e, &s, &g, 0.3, &[100, 1000, 4000], 100, 4).unwrap();
        assert!(rep.rows.iter().all(|r| r.l2_norm <= 2.0 + 1e-9), "{rep:?}");
        assert_eq!(rep.verdict, Verdict::CoboundaryConsistent);
        let lil = lil_probe(&e, &s, &g, 0.0, 0.3, 4000, 20, 1e-3, 4).unwrap();
        assert!(
            lil.pointwise_median.last().unwrap() < &(0.2 * lil.pointwise_median[0]),
            "{lil:?}"
        );
    }

    #[test]
    fn zero_observable_has_zero_norms() {
        let (e, s) = setup();
        let rep =
            coboundary_check(&e, &s, &Observable::constant(0.0), 0.0, &[10, 100], 10, 5).unwrap();
        assert!(rep.rows.iter().all(|r| r.l2_norm == 0.0));
        assert_eq!(rep.verdict, Verdict::CoboundaryConsistent);
    }
}
