use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{base_point, check_radius, complex_rho, push_along, streams};
use crate::error::{Error, Result};
use crate::stats::exp_fit;
use crate::thermo::ThermoEngine;

/// Two groups of frequency blocks: `n` blocks on `[b_j, b_{j+1})`, then `m`
/// blocks on `[b_j + k, b_{j+1} + k)` after a gap of `k` steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlockConfig {
    pub n: usize,
    pub m: usize,
    pub boundaries: Vec<usize>,
    pub frequencies: Vec<f64>,
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self::single(0.4, 0.4)
    }
}

impl BlockConfig {
    /// One block on each side: `b = (0, 1, 2)`, `r = (r_1, r_2)`.
    pub fn single(r1: f64, r2: f64) -> Self {
        Self {
            n: 1,
            m: 1,
            boundaries: vec![0, 1, 2],
            frequencies: vec![r1, r2],
        }
    }

    pub fn validate(&self, eps0: f64) -> Result<()> {
        if self.n == 0 || self.m == 0 {
            return Err(Error::InvalidArgument(
                "both block groups must be nonempty".into(),
            ));
        }
        if self.boundaries.len() != self.n + self.m + 1 || self.frequencies.len() != self.n + self.m
        {
            return Err(Error::InvalidArgument(format!(
                "need {} boundaries and {} frequencies",
                self.n + self.m + 1,
                self.n + self.m
            )));
        }
        if self.boundaries.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "block boundaries must increase strictly".into(),
            ));
        }
        check_radius(&self.frequencies, eps0)
    }

    /// Per-step frequencies over `0..b_last + k`.
    fn steps(&self, k: usize) -> Vec<f64> {
        let b = &self.boundaries;
        let mut s = vec![0.0; b[self.n + self.m] + k];
        for j in 0..self.n + self.m {
            let shift = if j < self.n { 0 } else { k };
            for v in &mut s[b[j] + shift..b[j + 1] + shift] {
                *v = self.frequencies[j];
            }
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSource {
    /// Entries of the full difference above two standard errors.
    Total,
    /// The deterministic `(L_0^k − Q^k)` component, when the full difference
    /// sinks into Monte Carlo noise too early.
    GapComponent,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConditionHRow {
    pub k: usize,
    /// `|E J − E F · E G|`.
    pub difference: f64,
    pub std_err: f64,
    /// `E |J − F·G∘τ^{−k}|`: the part carried by `L_0^k − Q^k`.
    pub gap_component: f64,
    /// `|E[F·G∘τ^{−k}] − E F · E G|`: the part carried by base mixing.
    pub base_component: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConditionHReport {
    pub config: BlockConfig,
    pub rows: Vec<ConditionHRow>,
    /// Fitted `c` in `e^{−ck}`.
    pub c_hat: f64,
    pub r_squared: f64,
    pub fit_source: FitSource,
    pub noise_dominated: bool,
    pub n_base_samples: usize,
}

/// Joint block functional against the product of the two block functionals,
/// all computed from one chain per base sample.
pub fn condition_h_check(
    engine: &ThermoEngine,
    config: &BlockConfig,
    k_list: &[usize],
    eps0: f64,
    n_base_samples: usize,
    seed: u64,
) -> Result<ConditionHReport> {
    config.validate(eps0)?;
    let bank = engine.bank();
    let spec = bank.spec();
    let nodes = bank.observable_nodes(&spec.observable);
    let b = &config.boundaries;
    let (b_mid, b_last) = (b[config.n], b[config.n + config.m]);
    let mut rows = Vec::with_capacity(k_list.len());
    for &k in k_list {
        let steps = config.steps(k);
        let t = steps.len() as i64;
        let per: Vec<(Complex64, Complex64, Complex64)> = (0..n_base_samples as u64)
            .into_par_iter()
            .map(|i| -> Result<(Complex64, Complex64, Complex64)> {
                let x = base_point(&spec.base, seed, streams::BASE_BLOCKS, i)?;
                let chain = engine.chain(&x, -t, 0)?;
                let z_fiber = -t + b_mid as i64;
                let w_fiber = z_fiber + k as i64;
                let v_z = push_along(
                    bank,
                    &chain,
                    -t,
                    complex_rho(&chain, -t),
                    &steps[..b_mid],
                    &nodes,
                )?;
                let g_val = chain.integrate(z_fiber, &v_z);
                let v_w = push_along(bank, &chain, z_fiber, v_z, &steps[b_mid..b_mid + k], &nodes)?;
                let second = &steps[b_mid + k..];
                let joint =
                    chain.integrate(0, &push_along(bank, &chain, w_fiber, v_w, second, &nodes)?);
                let f_val = chain.integrate(
                    0,
                    &push_along(
                        bank,
                        &chain,
                        w_fiber,
                        complex_rho(&chain, w_fiber),
                        second,
                        &nodes,
                    )?,
                );
                Ok((joint, f_val, g_val))
            })
            .collect::<Result<_>>()?;
        debug_assert_eq!(b_last + k, steps.len());
        rows.push(summarize(k, &per));
    }
    let (c_hat, r_squared, fit_source) = fit_rate(&rows);
    Ok(ConditionHReport {
        config: config.clone(),
        noise_dominated: rows.iter().all(|r| r.difference <= 2.0 * r.std_err),
        rows,
        c_hat,
        r_squared,
        fit_source,
        n_base_samples,
    })
}

fn summarize(k: usize, per: &[(Complex64, Complex64, Complex64)]) -> ConditionHRow {
    let n = per.len() as f64;
    let mean = |f: &dyn Fn(&(Complex64, Complex64, Complex64)) -> Complex64| {
        per.iter()
            .map(f)
            .fold(Complex64::new(0.0, 0.0), |a, b| a + b)
            / n
    };
    let ej = mean(&|p| p.0);
    let ef = mean(&|p| p.1);
    let eg = mean(&|p| p.2);
    let efg = mean(&|p| p.1 * p.2);
    // linearization of E J − E F · E G
    let infl: Vec<Complex64> = per
        .iter()
        .map(|p| (p.0 - ej) - eg * (p.1 - ef) - ef * (p.2 - eg))
        .collect();
    let re: Vec<f64> = infl.iter().map(|c| c.re).collect();
    let im: Vec<f64> = infl.iter().map(|c| c.im).collect();
    let gap: Vec<f64> = per.iter().map(|p| (p.0 - p.1 * p.2).norm()).collect();
    ConditionHRow {
        k,
        difference: (ej - ef * eg).norm(),
        std_err: crate::stats::std_err(&re).hypot(crate::stats::std_err(&im)),
        gap_component: crate::stats::mean(&gap),
        base_component: (efg - ef * eg).norm(),
    }
}

fn fit_rate(rows: &[ConditionHRow]) -> (f64, f64, FitSource) {
    let (ks, vs): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.difference > 2.0 * r.std_err && r.difference > 0.0)
        .map(|r| (r.k as f64, r.difference))
        .unzip();
    if ks.len() >= 3 {
        if let Some(f) = exp_fit(&ks, &vs) {
            return (-f.rate.ln(), f.r_squared, FitSource::Total);
        }
    }
    let floor = 100.0 * f64::EPSILON;
    let (ks, vs): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.gap_component > floor)
        .map(|r| (r.k as f64, r.gap_component))
        .unzip();
    if ks.len() >= 2 {
        if let Some(f) = exp_fit(&ks, &vs) {
            return (-f.rate.ln(), f.r_squared, FitSource::GapComponent);
        }
    }
    (f64::NAN, f64::NAN, FitSource::None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::{SystemParams, SystemSpec};
    use crate::grid::Interp;
    use crate::thermo::DepthParams;
    use crate::transfer::OperatorBank;
    use std::sync::Arc;

    fn engine() -> ThermoEngine {
        let spec = Arc::new(SystemSpec::new(&SystemParams::default()).unwrap());
        let bank = Arc::new(OperatorBank::new(spec, 256, Interp::Cubic).unwrap());
        ThermoEngine::new(bank, DepthParams::default()).unwrap()
    }

    #[test]
    fn steps_layout() {
        let c = BlockConfig {
            n: 1,
            m: 2,
            boundaries: vec![1, 3, 4, 6],
            frequencies: vec![0.1, 0.2, 0.3],
        };
        assert_eq!(c.steps(2), vec![0.0, 0.1, 0.1, 0.0, 0.0, 0.2, 0.3, 0.3]);
    }

    #[test]
    fn validation() {
        let mut c = BlockConfig::single(0.4, 0.4);
        assert!(c.validate(1.0).is_ok());
        assert!(c.validate(0.3).is_err());
        c.boundaries = vec![0, 2, 2];
        assert!(c.validate(1.0).is_err());
    }

    #[test]
    fn zero_frequencies_give_zero_difference() {
        let rep = condition_h_check(
            &engine(),
            &BlockConfig::single(0.0, 0.0),
            &[0, 2, 5],
            1.0,
            20,
            1,
        )
        .unwrap();
        for r in &rep.rows {
            assert!(r.difference < 1e-12 && r.gap_component < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn difference_decays_in_gap() {
        let rep = condition_h_check(
            &engine(),
            &BlockConfig::single(0.4, 0.4),
            &[0, 1, 2, 3, 4, 6, 8],
            1.0,
            400,
            2,
        )
        .unwrap();
        assert!(rep.rows[0].difference <= 2.0);
        assert!(rep.c_hat > 0.0, "{rep:?}");
        let g: Vec<f64> = rep.rows.iter().map(|r| r.gap_component).collect();
        assert!(g.windows(2).all(|w| w[1] < w[0]), "{g:?}");
    }
}
