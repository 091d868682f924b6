use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{base_point, check_radius, complex_rho, master, push_along, streams};
use crate::base::{base_distance, past_perturbed_partner, BaseMetricParams, BasePoint};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::stats::log_growth_slope;
use crate::thermo::ThermoEngine;
use crate::transfer::ObservableNodes;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Assumption6Params {
    pub n_list: Vec<usize>,
    /// Independent frequency sequences, each drawn uniformly from `[−r_max, r_max]`.
    pub n_draws: usize,
    pub r_max: f64,
    /// Base pairs per `(n, draw)`.
    pub n_pairs: usize,
    /// Pairs differ first at a depth drawn from `1..=max_depth`.
    pub max_depth: i64,
    pub beta: f64,
    pub eps0: f64,
    pub seed: u64,
}

impl Default for Assumption6Params {
    fn default() -> Self {
        Self {
            n_list: vec![2, 4, 8],
            n_draws: 5,
            r_max: 0.5,
            n_pairs: 200,
            max_depth: 16,
            beta: 0.5,
            eps0: 1.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Assumption6Row {
    pub n: usize,
    pub draw: usize,
    pub sup_norm: f64,
    /// Largest `|F(x) − F(x')| / d_X(x, x')^β` over pairs differing in the past.
    pub variation: f64,
    pub holder_norm: f64,
    /// Same ratio for a single flipped future coordinate, measured in the
    /// two-sided metric `Σ_i 2^{−|i|}[x_i ≠ x'_i]`.
    pub two_sided_variation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Assumption6Report {
    pub params: Assumption6Params,
    pub rows: Vec<Assumption6Row>,
    /// Per draw, `max_n ‖F‖_H / min_n ‖F‖_H`.
    pub spread: Vec<f64>,
    pub max_spread: f64,
    /// Slope of `log max_draw ‖F‖_H` against `n`.
    pub slope: f64,
    pub two_sided_slope: f64,
}

impl Assumption6Report {
    pub fn uniform_within(&self, factor: f64) -> bool {
        self.max_spread <= factor
    }
}

fn two_sided_distance(x: &BasePoint, y: &BasePoint, metric: &BaseMetricParams) -> f64 {
    let w = metric.window as i64;
    (-w..=w)
        .filter(|&i| x.symbol(i) != y.symbol(i))
        .map(|i| 0.5f64.powi(i.abs() as i32))
        .sum()
}

/// `F(x) = ∫ L_{r_{n−1}, τ^{n−1}x} ⋯ L_{r_0, x}(ρ_x) dν_{τ^n x}`.
fn perturbed_integral(
    engine: &ThermoEngine,
    nodes: &ObservableNodes,
    x: &BasePoint,
    r: &[f64],
) -> Result<Complex64> {
    let n = r.len() as i64;
    let chain = engine.chain(x, 0, n)?;
    let v = push_along(engine.bank(), &chain, 0, complex_rho(&chain, 0), r, nodes)?;
    Ok(chain.integrate(n, &v))
}

/// Sup norm and Hölder variation of `F` along the fixed frequency draws.
pub fn assumption6_check(
    engine: &ThermoEngine,
    p: &Assumption6Params,
) -> Result<Assumption6Report> {
    if p.n_list.is_empty() || p.n_draws == 0 || p.n_pairs == 0 || p.max_depth < 1 {
        return Err(Error::InvalidArgument(
            "empty n_list, draws, pairs or depth range".into(),
        ));
    }
    if !(p.beta > 0.0 && p.beta <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta = {} outside (0, 1]",
            p.beta
        )));
    }
    check_radius(&[p.r_max], p.eps0)?;
    let bank = engine.bank();
    let spec = bank.spec();
    let nodes = bank.observable_nodes(&spec.observable);
    let metric = BaseMetricParams::default();
    let n_top = *p.n_list.iter().max().unwrap();
    let draws: Vec<Vec<f64>> = (0..p.n_draws as u64)
        .map(|d| {
            let mut rng = stream_rng(master(p.seed, streams::R_DRAWS), d);
            (0..n_top)
                .map(|_| rng.random_range(-p.r_max..=p.r_max))
                .collect()
        })
        .collect();
    let mut rows = Vec::new();
    for &n in &p.n_list {
        for (di, r) in draws.iter().enumerate() {
            let r = &r[..n];
            // (sup, past ratio, two-sided ratio)
            let per: Vec<(f64, f64, f64)> = (0..p.n_pairs as u64)
                .into_par_iter()
                .map(|i| -> Result<(f64, f64, f64)> {
                    let x = base_point(&spec.base, p.seed, streams::BASE_PAIRS, i)?;
                    let mut rng = stream_rng(master(p.seed, streams::BASE_PAIRS), i);
                    let depth = rng.random_range(1..=p.max_depth);
                    let fresh = derive_seed(rng.random(), depth as u64);
                    let past =
                        past_perturbed_partner(&x, depth, fresh, depth + metric.window as i64);
                    let q = x.alphabet_size();
                    let both = x.with_symbol(depth, (x.symbol(depth) + 1) % q);
                    let fx = perturbed_integral(engine, &nodes, &x, r)?;
                    let fp = perturbed_integral(engine, &nodes, &past, r)?;
                    let fb = perturbed_integral(engine, &nodes, &both, r)?;
                    let ratio = |fy: Complex64, d: f64| (fx - fy).norm() / d.powf(p.beta);
                    Ok((
                        fx.norm().max(fp.norm()),
                        ratio(fp, base_distance(&x, &past, &metric)),
                        ratio(fb, two_sided_distance(&x, &both, &metric)),
                    ))
                })
                .collect::<Result<_>>()?;
            let max = |f: fn(&(f64, f64, f64)) -> f64| per.iter().map(f).fold(0.0, f64::max);
            let (sup_norm, variation) = (max(|t| t.0), max(|t| t.1));
            rows.push(Assumption6Row {
                n,
                draw: di,
                sup_norm,
                variation,
                holder_norm: sup_norm + variation,
                two_sided_variation: max(|t| t.2),
            });
        }
    }
    let spread: Vec<f64> = (0..p.n_draws)
        .map(|d| {
            let hs: Vec<f64> = rows
                .iter()
                .filter(|r| r.draw == d)
                .map(|r| r.holder_norm)
                .collect();
            let hi = hs.iter().cloned().fold(0.0, f64::max);
            let lo = hs.iter().cloned().fold(f64::INFINITY, f64::min);
            hi / lo
        })
        .collect();
    let ns: Vec<f64> = p.n_list.iter().map(|&n| n as f64).collect();
    let top = |f: fn(&Assumption6Row) -> f64| -> Vec<f64> {
        p.n_list
            .iter()
            .map(|&n| rows.iter().filter(|r| r.n == n).map(f).fold(0.0, f64::max))
            .collect()
    };
    let slope = log_growth_slope(&ns, &top(|r| r.holder_norm));
    let two_sided_slope = log_growth_slope(&ns, &top(|r| r.two_sided_variation));
    Ok(Assumption6Report {
        params: p.clone(),
        max_spread: spread.iter().cloned().fold(0.0, f64::max),
        spread,
        rows,
        slope,
        two_sided_slope,
    })
}
