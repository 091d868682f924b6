//! Uniform-in-`n` bounds on the perturbed iterates `L^n_{r,x}` in the sup
//! and Hölder norms.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::stats::log_growth_slope;
use crate::thermo::ThermoEngine;
use crate::transfer::{transfer_iterate, OperatorKind};
use crate::trig::TestFunction;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundsRow {
    pub r: f64,
    pub n: usize,
    /// Max over instances of `‖L_r^n u‖_∞ / ‖u‖_∞`.
    pub sup_ratio: f64,
    /// Max over instances of `‖L_r^n u‖_α / ‖u‖_α`.
    pub alpha_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RSummary {
    pub r: f64,
    pub sup_max: f64,
    pub alpha_max: f64,
    /// Slopes of the log max-ratio against `n`.
    pub sup_slope: f64,
    pub alpha_slope: f64,
    /// `C_α (1 + |r| Q̃)`.
    pub alpha_bound: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BoundsReport {
    pub rows: Vec<BoundsRow>,
    pub per_r: Vec<RSummary>,
    /// `max ‖L_0^n 1‖_∞` over instances and `n`, bounding every sup ratio.
    pub c_sup: f64,
    /// Largest Hölder ratio at `r = 0`.
    pub c_alpha: f64,
    pub q_tilde: f64,
    pub eps0: f64,
    pub n_max: usize,
}

impl BoundsReport {
    pub fn max_slope(&self) -> f64 {
        self.per_r
            .iter()
            .flat_map(|s| [s.sup_slope, s.alpha_slope])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Sup ratios below `c_sup` and Hölder ratios below `C_α(1 + |r|Q̃)`,
    /// both up to a relative `tol`.
    pub fn within_bounds(&self, tol: f64) -> bool {
        self.per_r.iter().all(|s| {
            s.sup_max <= self.c_sup * (1.0 + tol) && s.alpha_max <= s.alpha_bound * (1.0 + tol)
        })
    }
}

/// Ratios of `L_r^n u` for constant `r` along each orbit, `n = 1..=n_max`.
pub fn operator_norm_bounds_check(
    engine: &ThermoEngine,
    x_samples: &[BasePoint],
    u_samples: &[TestFunction],
    r_grid: &[f64],
    n_max: usize,
    eps0: f64,
) -> Result<BoundsReport> {
    if let Some(r) = r_grid.iter().find(|r| r.abs() > eps0) {
        return Err(Error::InvalidArgument(format!(
            "|r| = {} exceeds the perturbation radius {eps0}",
            r.abs()
        )));
    }
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be positive".into()));
    }
    let bank = engine.bank();
    let spec = bank.spec();
    let (alpha, eta) = (spec.holder.alpha, spec.holder.eta);
    let nodes = bank.observable_nodes(&spec.observable);
    // (c_sup, ratios[r][n] as (sup, alpha))
    type Instance = (f64, Vec<Vec<(f64, f64)>>);
    let per: Vec<Instance> = x_samples
        .par_iter()
        .zip(u_samples.par_iter())
        .map(|(x, u)| -> Result<Instance> {
            let chain = engine.chain(x, 0, n_max as i64)?;
            let lambdas = chain.lambdas_from(0);
            let mut ones = bank.ones(x);
            let mut c_sup = 0.0f64;
            for j in 0..n_max {
                ones = transfer_iterate(
                    bank,
                    &chain.point(j as i64),
                    &ones,
                    1,
                    OperatorKind::Normalized {
                        lambdas: &lambdas[j..],
                    },
                )?;
                c_sup = c_sup.max(ones.sup_norm());
            }
            let ug = bank.function(x, |z| Complex64::new(u.eval(z), 0.0));
            let (us, ua) = (ug.sup_norm(), ug.holder_norm(alpha, eta));
            let mut by_r = Vec::with_capacity(r_grid.len());
            for &r in r_grid {
                let rs = vec![r; n_max];
                let mut v = ug.clone();
                let mut out = Vec::with_capacity(n_max);
                for j in 0..n_max {
                    v = transfer_iterate(
                        bank,
                        &chain.point(j as i64),
                        &v,
                        1,
                        OperatorKind::Perturbed {
                            lambdas: &lambdas[j..],
                            r: &rs[j..],
                            g: &nodes,
                        },
                    )?;
                    out.push((v.sup_norm() / us, v.holder_norm(alpha, eta) / ua));
                }
                by_r.push(out);
            }
            Ok((c_sup, by_r))
        })
        .collect::<Result<Vec<_>>>()?;
    let c_sup = per.iter().map(|p| p.0).fold(1.0, f64::max);
    let mut rows = Vec::new();
    for (ri, &r) in r_grid.iter().enumerate() {
        for n in 1..=n_max {
            let (mut s, mut a) = (0.0f64, 0.0f64);
            for p in &per {
                s = s.max(p.1[ri][n - 1].0);
                a = a.max(p.1[ri][n - 1].1);
            }
            rows.push(BoundsRow {
                r,
                n,
                sup_ratio: s,
                alpha_ratio: a,
            });
        }
    }
    let c_alpha = rows
        .iter()
        .filter(|row| row.r == 0.0)
        .map(|row| row.alpha_ratio)
        .fold(1.0, f64::max);
    let q_tilde = spec.holder.q_tilde;
    let ns: Vec<f64> = (1..=n_max).map(|n| n as f64).collect();
    let per_r = r_grid
        .iter()
        .map(|&r| {
            let sel: Vec<&BoundsRow> = rows.iter().filter(|row| row.r == r).collect();
            let sup: Vec<f64> = sel.iter().map(|row| row.sup_ratio).collect();
            let alp: Vec<f64> = sel.iter().map(|row| row.alpha_ratio).collect();
            RSummary {
                r,
                sup_max: sup.iter().cloned().fold(0.0, f64::max),
                alpha_max: alp.iter().cloned().fold(0.0, f64::max),
                sup_slope: log_growth_slope(&ns, &sup),
                alpha_slope: log_growth_slope(&ns, &alp),
                alpha_bound: c_alpha * (1.0 + r.abs() * q_tilde),
            }
        })
        .collect();
    Ok(BoundsReport {
        rows,
        per_r,
        c_sup,
        c_alpha,
        q_tilde,
        eps0,
        n_max,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_base;
    use crate::fiber::{SystemParams, SystemSpec};
    use crate::grid::Interp;
    use crate::thermo::DepthParams;
    use crate::transfer::OperatorBank;
    use crate::trig::{PiecewiseLinear, TrigPoly};
    use std::sync::Arc;

    fn engine(p: SystemParams, n: usize) -> ThermoEngine {
        let spec = Arc::new(SystemSpec::new(&p).unwrap());
        let bank = Arc::new(OperatorBank::new(spec, n, Interp::Cubic).unwrap());
        ThermoEngine::new(bank, DepthParams::default()).unwrap()
    }

    #[test]
    fn constant_potential_keeps_one_fixed() {
        let e = engine(
            SystemParams {
                potential_amp: vec![0.0, 0.0],
                potential_shift: 0.3,
                ..SystemParams::default()
            },
            128,
        );
        let spec = e.bank().spec().clone();
        let xs: Vec<BasePoint> = (0..3)
            .map(|i| sample_base(&spec.base, 1, i).unwrap())
            .collect();
        let one = TestFunction::Trig(TrigPoly {
            constant: 1.0,
            cos: vec![],
            sin: vec![],
            exponentiate: false,
        });
        let us = vec![one; 3];
        let rep = operator_norm_bounds_check(&e, &xs, &us, &[0.0], 10, 1.0).unwrap();
        for row in &rep.rows {
            assert!((row.sup_ratio - 1.0).abs() < 1e-12, "{row:?}");
        }
        assert!((rep.c_sup - 1.0).abs() < 1e-12);
    }

    #[test]
    fn default_ratios_do_not_grow() {
        let e = engine(SystemParams::default(), 256);
        let spec = e.bank().spec().clone();
        let mut rng = crate::rng::stream_rng(3, 0);
        let xs: Vec<BasePoint> = (0..4)
            .map(|i| sample_base(&spec.base, 3, i).unwrap())
            .collect();
        let us: Vec<TestFunction> = (0..4)
            .map(|_| TestFunction::PiecewiseLinear(PiecewiseLinear::random(&mut rng, 7)))
            .collect();
        let rep = operator_norm_bounds_check(&e, &xs, &us, &[0.0, 0.5], 15, 1.0).unwrap();
        assert!(rep.max_slope() <= 0.01, "{:?}", rep.per_r);
        assert!(rep.within_bounds(1e-9), "{rep:?}");
    }

    #[test]
    fn rejects_r_beyond_radius() {
        let e = engine(SystemParams::default(), 64);
        let x = sample_base(&e.bank().spec().base, 1, 1).unwrap();
        let u = TestFunction::PiecewiseLinear(PiecewiseLinear::random(
            &mut crate::rng::stream_rng(1, 1),
            5,
        ));
        assert!(operator_norm_bounds_check(&e, &[x], &[u], &[1.5], 3, 1.0).is_err());
    }
}
