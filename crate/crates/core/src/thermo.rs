//! Conformal measures, eigenvalue chains and invariant densities computed
//! along base orbits, plus gap-rate and base-regularity estimates.
//!
//! A [`Chain`] over coordinates `[lo, hi]` of a base point is built in two
//! sweeps. The measure sweep starts from Lebesgue weights `K` steps in the
//! future and pulls them back with the adjoint operators, normalizing at each
//! step; the normalizer is `λ_j = ν_{j+1}(L_j 1)`, so the discrete duality
//! `ν_{j+1}(L_j u) = λ_j ν_j(u)` holds exactly within one chain. The density
//! sweep starts from `1` `K` steps in the past and pushes forward with
//! `L_0 = L/λ`.

use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::base::{base_distance, past_perturbed_partner, BaseMetricParams, BasePoint};
use crate::error::{Error, Result};
use crate::grid::{integrate_values, FiberMeasure, GridFunction, Scalar};
use crate::stats::{exp_fit, linear_fit, ExpFit};
use crate::transfer::{transfer_iterate, OperatorBank, OperatorKind};

/// Depth settings for pullbacks and pushforwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthParams {
    pub depth: usize,
    pub depth_max: usize,
    /// Target for `|λ̂(K) − λ̂(K−2)| / λ̂(K)`.
    pub tol: f64,
}

impl Default for DepthParams {
    fn default() -> Self {
        Self {
            depth: 40,
            depth_max: 160,
            tol: 1e-12,
        }
    }
}

/// Measures, eigenvalues and densities on the fibers `τ^j x`, `lo ≤ j ≤ hi`.
#[derive(Debug, Clone)]
pub struct Chain {
    pub x: BasePoint,
    pub lo: i64,
    pub hi: i64,
    pub depth: usize,
    interp: crate::grid::Interp,
    nu: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    rho: Vec<Vec<f64>>,
}

impl Chain {
    fn idx(&self, j: i64) -> usize {
        assert!(
            j >= self.lo && j <= self.hi,
            "index {j} outside chain [{}, {}]",
            self.lo,
            self.hi
        );
        (j - self.lo) as usize
    }

    pub fn point(&self, j: i64) -> BasePoint {
        self.x.shift(j)
    }

    pub fn nu(&self, j: i64) -> FiberMeasure {
        FiberMeasure {
            tag: self.point(j).tag(),
            weights: self.nu[self.idx(j)].clone(),
        }
    }

    pub fn nu_weights(&self, j: i64) -> &[f64] {
        &self.nu[self.idx(j)]
    }

    /// `λ_{τ^j x}`.
    pub fn lambda(&self, j: i64) -> f64 {
        self.lambda[self.idx(j)]
    }

    /// `λ_{τ^j x}, …, λ_{τ^{hi} x}`.
    pub fn lambdas_from(&self, j: i64) -> &[f64] {
        &self.lambda[self.idx(j)..]
    }

    pub fn rho(&self, j: i64) -> GridFunction<f64> {
        GridFunction::from_values(
            self.point(j).tag(),
            self.rho[self.idx(j)].clone(),
            self.interp,
        )
    }

    pub fn rho_values(&self, j: i64) -> &[f64] {
        &self.rho[self.idx(j)]
    }

    /// `∫ u dν_{τ^j x}` for raw node values.
    pub fn integrate<S: Scalar>(&self, j: i64, values: &[S]) -> S {
        integrate_values(&self.nu[self.idx(j)], values)
    }

    /// `μ_{τ^j x}(u) = ν(u ρ)` for raw node values.
    pub fn mu_integrate(&self, j: i64, values: &[f64]) -> f64 {
        let i = self.idx(j);
        let w: Vec<f64> = self.nu[i]
            .iter()
            .zip(&self.rho[i])
            .map(|(a, b)| a * b)
            .collect();
        integrate_values(&w, values)
    }
}

/// Computes chains and fiber states for one operator bank.
#[derive(Debug, Clone)]
pub struct ThermoEngine {
    bank: Arc<OperatorBank>,
    pub params: DepthParams,
}

/// Single-fiber view: `ν̂_x`, `λ̂_x`, `ρ̂_x` with depth diagnostics.
#[derive(Debug, Clone)]
pub struct ThermoState {
    pub x: BasePoint,
    pub depth: usize,
    pub nu: FiberMeasure,
    pub lambda: f64,
    pub rho: GridFunction<f64>,
    /// `λ̂_x, …, λ̂_{τ^{K−1}x}`.
    pub lambda_chain: Vec<f64>,
    pub lambda_delta: f64,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ThermoExport {
    pub lambda_chain: Vec<f64>,
    pub rho: Vec<f64>,
    pub nu_weights: Vec<f64>,
    pub residuals: StateResiduals,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct StateResiduals {
    pub depth: usize,
    pub lambda_delta: f64,
    pub converged: bool,
    pub nu_rho: f64,
    pub nu_min_weight: f64,
}

impl ThermoState {
    pub fn export(&self) -> ThermoExport {
        ThermoExport {
            lambda_chain: self.lambda_chain.clone(),
            rho: self.rho.values.clone(),
            nu_weights: self.nu.weights.clone(),
            residuals: StateResiduals {
                depth: self.depth,
                lambda_delta: self.lambda_delta,
                converged: self.converged,
                nu_rho: self.nu.integrate(&self.rho),
                nu_min_weight: self.nu.min_weight(),
            },
        }
    }
}

impl ThermoEngine {
    pub fn new(bank: Arc<OperatorBank>, params: DepthParams) -> Result<Self> {
        if params.depth < 2 || params.depth_max < params.depth {
            return Err(Error::InvalidArgument(format!(
                "bad depth settings {} / {}",
                params.depth, params.depth_max
            )));
        }
        Ok(Self { bank, params })
    }

    pub fn bank(&self) -> &OperatorBank {
        &self.bank
    }

    pub fn bank_arc(&self) -> Arc<OperatorBank> {
        self.bank.clone()
    }

    pub fn n_points(&self) -> usize {
        self.bank.n_points()
    }

    /// Chain over `[lo, hi]` at the engine's default depth.
    pub fn chain(&self, x: &BasePoint, lo: i64, hi: i64) -> Result<Chain> {
        self.chain_with_depth(x, lo, hi, self.params.depth)
    }

    pub fn chain_with_depth(&self, x: &BasePoint, lo: i64, hi: i64, depth: usize) -> Result<Chain> {
        if lo > hi || depth == 0 {
            return Err(Error::InvalidArgument(format!(
                "empty chain [{lo}, {hi}] or zero depth"
            )));
        }
        let n = self.bank.n_points();
        let k = depth as i64;
        let start = lo - k;
        let len = (hi - lo + 1) as usize;
        // measure sweep from hi + K down to lo − K
        let mut w = vec![1.0 / n as f64; n];
        let mut lambda_all = vec![0.0; (hi + k - start) as usize];
        let mut nu = vec![Vec::new(); len];
        for j in (start..hi + k).rev() {
            let mut v = self.bank.op(x.symbol(j)).apply_adjoint(&w);
            let lam = crate::stats::sum(&v);
            if !(lam > 0.0 && lam.is_finite()) {
                return Err(Error::InvalidSystem(format!(
                    "nonpositive eigenvalue estimate {lam}"
                )));
            }
            let inv = 1.0 / lam;
            v.iter_mut().for_each(|t| *t *= inv);
            lambda_all[(j - start) as usize] = lam;
            if j >= lo && j <= hi {
                nu[(j - lo) as usize] = v.clone();
            }
            w = v;
        }
        // density sweep from lo − K up to hi
        let mut r = vec![1.0; n];
        let mut rho = vec![Vec::new(); len];
        for j in start..hi {
            let mut v = self.bank.op(x.symbol(j)).apply(&r);
            let inv = 1.0 / lambda_all[(j - start) as usize];
            v.iter_mut().for_each(|t| *t *= inv);
            if j + 1 >= lo {
                rho[(j + 1 - lo) as usize] = v.clone();
            }
            r = v;
        }
        let lambda = lambda_all[(lo - start) as usize..(hi - start + 1) as usize].to_vec();
        Ok(Chain {
            x: x.clone(),
            lo,
            hi,
            depth,
            interp: self.bank.interp(),
            nu,
            lambda,
            rho,
        })
    }

    /// `λ̂_x` from a pullback of depth `k` (measure sweep only).
    pub fn lambda_at_depth(&self, x: &BasePoint, k: usize) -> f64 {
        let n = self.bank.n_points();
        let mut w = vec![1.0 / n as f64; n];
        let mut lam = 0.0;
        for j in (0..=k as i64).rev() {
            let mut v = self.bank.op(x.symbol(j)).apply_adjoint(&w);
            lam = crate::stats::sum(&v);
            v.iter_mut().for_each(|t| *t /= lam);
            w = v;
        }
        lam
    }

    /// `(ν̂_x, λ̂_x)` with the depth doubled until `|λ̂(K) − λ̂(K−2)|` is below
    /// tolerance or `K_max` is reached.
    pub fn conformal_pullback(&self, x: &BasePoint) -> Result<ThermoState> {
        let mut k = self.params.depth;
        loop {
            let lam_k = self.lambda_at_depth(x, k);
            let lam_k2 = self.lambda_at_depth(x, k - 2);
            let delta = (lam_k - lam_k2).abs();
            let converged = delta <= self.params.tol * lam_k;
            if converged || k >= self.params.depth_max {
                let chain = self.chain_with_depth(x, 0, k as i64 - 1, k)?;
                return Ok(ThermoState {
                    x: x.clone(),
                    depth: k,
                    nu: chain.nu(0),
                    lambda: chain.lambda(0),
                    rho: chain.rho(0),
                    lambda_chain: chain.lambda.clone(),
                    lambda_delta: delta,
                    converged,
                });
            }
            k = (2 * k).min(self.params.depth_max);
        }
    }

    /// `ρ̂_x = L^K_{0,τ^{−K}x} 1` at the engine's default depth.
    pub fn invariant_density(&self, x: &BasePoint) -> Result<GridFunction<f64>> {
        Ok(self.chain(x, 0, 0)?.rho(0))
    }

    /// `(1/K) Σ_{k<K} L^k_{0,τ^{−k}x} 1`.
    pub fn cesaro_density(&self, x: &BasePoint, k_terms: usize) -> Result<GridFunction<f64>> {
        let kk = k_terms as i64;
        let chain = self.chain(x, -kk, 0)?;
        let n = self.bank.n_points();
        let mut acc = vec![0.0; n];
        for k in 0..kk {
            let start = chain.point(-k);
            let one = GridFunction::constant(&start, n, self.bank.interp(), 1.0);
            let lambdas = chain.lambdas_from(-k);
            let v = transfer_iterate(
                &self.bank,
                &start,
                &one,
                k as usize,
                OperatorKind::Normalized { lambdas },
            )?;
            acc.iter_mut().zip(&v.values).for_each(|(a, b)| *a += b);
        }
        acc.iter_mut().for_each(|a| *a /= k_terms as f64);
        Ok(GridFunction::from_values(x.tag(), acc, self.bank.interp()))
    }

    /// λ̂ at increasing depths, for Cauchy-rate diagnostics.
    pub fn depth_profile(&self, x: &BasePoint, depths: &[usize]) -> Vec<f64> {
        depths.iter().map(|&k| self.lambda_at_depth(x, k)).collect()
    }
}

/// Conformality and fixed-point residuals between independently computed
/// states of `x` and `τx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConsistencyResiduals {
    pub duality: f64,
    pub fixed_point: f64,
    pub nu_rho: f64,
}

pub fn consistency_residuals(
    engine: &ThermoEngine,
    x: &BasePoint,
    test_functions: &[GridFunction<f64>],
) -> Result<ConsistencyResiduals> {
    let here = engine.chain(x, 0, 0)?;
    let next = engine.chain(&x.shift(1), 0, 0)?;
    let bank = engine.bank();
    let op = bank.op(x.symbol(0));
    let lam = here.lambda(0);
    let mut duality = 0.0f64;
    for u in test_functions {
        let lu = op.apply(&u.values);
        let lhs = next.integrate(0, &lu);
        let rhs = lam * here.integrate(0, &u.values);
        duality = duality.max((lhs - rhs).abs());
    }
    let pushed = op.apply(here.rho_values(0));
    let fixed_point = pushed
        .iter()
        .zip(next.rho_values(0))
        .map(|(a, b)| (a / lam - b).abs())
        .fold(0.0, f64::max);
    let nu_rho = (here.integrate(0, here.rho_values(0)) - 1.0).abs();
    Ok(ConsistencyResiduals {
        duality,
        fixed_point,
        nu_rho,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct GapRow {
    pub n: usize,
    pub max_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GapEstimate {
    pub rows: Vec<GapRow>,
    pub kappa: f64,
    pub constant: f64,
    pub r_squared: f64,
    pub n_fit_points: usize,
    /// Residuals reached the round-off floor before a fit was possible; the
    /// reported `kappa` is then an upper bound from the last measurable step.
    pub too_strong: bool,
    pub floor: f64,
}

/// Fits `max_u ‖L_0^n u − Q^n u‖_∞ / ‖u‖_α ≈ C κ^n` over `0 ≤ n ≤ n_max`,
/// using the leading run of values above `100·ε_mach`.
pub fn gap_estimate(
    engine: &ThermoEngine,
    x_samples: &[BasePoint],
    u_samples: &[crate::trig::TestFunction],
    n_max: usize,
) -> Result<GapEstimate> {
    let bank = engine.bank();
    let spec = bank.spec();
    let (alpha, eta) = (spec.holder.alpha, spec.holder.eta);
    let per_instance: Vec<Vec<f64>> = x_samples
        .par_iter()
        .zip(u_samples.par_iter())
        .map(|(x, u)| -> Result<Vec<f64>> {
            let chain = engine.chain(x, 0, n_max as i64)?;
            let ug = bank.function(x, |z| u.eval(z));
            let norm = ug.holder_norm(alpha, eta);
            let c = chain.integrate(0, &ug.values);
            let mut v = ug.values.clone();
            let mut out = Vec::with_capacity(n_max + 1);
            let rho0 = chain.rho_values(0);
            out.push(
                v.iter()
                    .zip(rho0)
                    .map(|(a, r)| (a - c * r).abs())
                    .fold(0.0, f64::max)
                    / norm,
            );
            for j in 0..n_max {
                let mut w = bank.op(x.symbol(j as i64)).apply(&v);
                let inv = 1.0 / chain.lambda(j as i64);
                w.iter_mut().for_each(|t| *t *= inv);
                v = w;
                let rho = chain.rho_values(j as i64 + 1);
                let diff = v
                    .iter()
                    .zip(rho)
                    .map(|(a, r)| (a - c * r).abs())
                    .fold(0.0, f64::max);
                out.push(diff / norm);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    let rows: Vec<GapRow> = (0..=n_max)
        .map(|j| GapRow {
            n: j,
            max_ratio: per_instance.iter().map(|v| v[j]).fold(0.0, f64::max),
        })
        .collect();
    Ok(fit_gap(rows))
}

pub(crate) fn fit_gap(rows: Vec<GapRow>) -> GapEstimate {
    let floor = 100.0 * f64::EPSILON;
    let (ks, vs): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .take_while(|r| r.max_ratio > floor)
        .map(|r| (r.n as f64, r.max_ratio))
        .unzip();
    if ks.len() >= 3 {
        let fit: ExpFit = exp_fit(&ks, &vs).expect("distinct n values");
        GapEstimate {
            rows,
            kappa: fit.rate,
            constant: fit.constant,
            r_squared: fit.r_squared,
            n_fit_points: ks.len(),
            too_strong: false,
            floor,
        }
    } else {
        // upper bound from the first step that reaches the floor
        let n_floor = rows
            .iter()
            .find(|r| r.max_ratio <= floor)
            .map(|r| r.n)
            .unwrap_or(rows.len());
        let start = rows.first().map(|r| r.max_ratio).unwrap_or(1.0).max(floor);
        let kappa = if n_floor == 0 {
            0.0
        } else {
            (floor / start).powf(1.0 / n_floor as f64)
        };
        GapEstimate {
            constant: start,
            rows,
            kappa,
            r_squared: f64::NAN,
            n_fit_points: ks.len(),
            too_strong: true,
            floor,
        }
    }
}

/// Extremes of `ρ̂_x` and `L_0^n 1` over sampled base points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UniformBounds {
    pub rho_min: f64,
    pub rho_max: f64,
    pub iterate_min: f64,
    pub iterate_max: f64,
    /// Smallest `C` with every measured value in `[C^{−1}, C]`.
    pub constant: f64,
}

pub fn uniform_bounds(
    engine: &ThermoEngine,
    x_samples: &[BasePoint],
    n_max: usize,
) -> Result<UniformBounds> {
    let bank = engine.bank();
    let per: Vec<(f64, f64, f64, f64)> = x_samples
        .par_iter()
        .map(|x| -> Result<(f64, f64, f64, f64)> {
            let chain = engine.chain(x, 0, n_max as i64)?;
            let rho = chain.rho(0);
            let mut v = vec![1.0; bank.n_points()];
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for j in 0..n_max {
                let mut w = bank.op(x.symbol(j as i64)).apply(&v);
                let inv = 1.0 / chain.lambda(j as i64);
                w.iter_mut().for_each(|t| *t *= inv);
                for &t in &w {
                    lo = lo.min(t);
                    hi = hi.max(t);
                }
                v = w;
            }
            Ok((rho.min_value(), rho.max_value(), lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut b = UniformBounds {
        rho_min: f64::INFINITY,
        rho_max: f64::NEG_INFINITY,
        iterate_min: f64::INFINITY,
        iterate_max: f64::NEG_INFINITY,
        constant: 1.0,
    };
    for (a, c, d, e) in per {
        b.rho_min = b.rho_min.min(a);
        b.rho_max = b.rho_max.max(c);
        b.iterate_min = b.iterate_min.min(d);
        b.iterate_max = b.iterate_max.max(e);
    }
    b.constant = [
        b.rho_max,
        1.0 / b.rho_min,
        b.iterate_max,
        1.0 / b.iterate_min,
    ]
    .into_iter()
    .fold(1.0, f64::max);
    Ok(b)
}

/// Pair of base points agreeing on `[−depth, depth]` and differing right
/// outside it on both sides.
pub fn regularity_pair(x: &BasePoint, depth: i64, fresh_seed: u64, reach: i64) -> BasePoint {
    let mut y = past_perturbed_partner(x, depth + 1, fresh_seed, depth + 1 + reach);
    let q = x.alphabet_size();
    for i in (depth + 1)..=(depth + 1 + reach) {
        let mut s = (crate::rng::hash2(fresh_seed ^ 0xa5a5, i as u64) % q as u64) as usize;
        if i == depth + 1 && s == x.symbol(i) {
            s = (s + 1) % q;
        }
        y = y.with_symbol(i, s);
    }
    y
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityRow {
    pub depth: i64,
    pub distance: f64,
    pub lambda_diff: f64,
    pub rho_diff: f64,
    /// `sup |L_{0,x}^n 1 − L_{0,x'}^n 1|` per entry of `n_list`.
    pub iterate_diff: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RegularityReport {
    pub rows: Vec<RegularityRow>,
    pub n_list: Vec<usize>,
    /// Slope of `log diff` against `log d_X`, per quantity.
    pub beta_lambda: f64,
    pub beta_rho: f64,
    pub beta_iterate: Vec<f64>,
    /// Largest exponent in `(0, 1]` with bounded ratios, and the bound.
    pub beta: f64,
    pub bound: f64,
}

/// Hölder ratios of `λ`, `ρ` and `L_0^n 1` over pairs at several depths.
pub fn regularity_check(
    engine: &ThermoEngine,
    base_points: &[BasePoint],
    depths: &[i64],
    n_list: &[usize],
    metric: &BaseMetricParams,
    seed: u64,
) -> Result<RegularityReport> {
    let bank = engine.bank();
    let n_max = n_list.iter().cloned().max().unwrap_or(0) as i64;
    let mut rows = Vec::new();
    for &depth in depths {
        let per: Vec<(f64, f64, f64, Vec<f64>)> = base_points
            .par_iter()
            .enumerate()
            .map(|(i, x)| -> Result<(f64, f64, f64, Vec<f64>)> {
                let y = regularity_pair(x, depth, crate::rng::derive_seed(seed, i as u64), 8);
                let cx = engine.chain(x, 0, n_max.max(0))?;
                let cy = engine.chain(&y, 0, n_max.max(0))?;
                let dl = (cx.lambda(0) - cy.lambda(0)).abs();
                let dr = cx
                    .rho_values(0)
                    .iter()
                    .zip(cy.rho_values(0))
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                let mut it = Vec::with_capacity(n_list.len());
                let one = vec![1.0; bank.n_points()];
                let iterate = |c: &Chain, p: &BasePoint, n: usize| {
                    let mut v = one.clone();
                    for j in 0..n {
                        let mut w = bank.op(p.symbol(j as i64)).apply(&v);
                        let inv = 1.0 / c.lambda(j as i64);
                        w.iter_mut().for_each(|t| *t *= inv);
                        v = w;
                    }
                    v
                };
                for &n in n_list {
                    let a = iterate(&cx, x, n);
                    let b = iterate(&cy, &y, n);
                    it.push(
                        a.iter()
                            .zip(&b)
                            .map(|(p, q)| (p - q).abs())
                            .fold(0.0, f64::max),
                    );
                }
                Ok((base_distance(x, &y, metric), dl, dr, it))
            })
            .collect::<Result<Vec<_>>>()?;
        let count = per.len() as f64;
        let mut row = RegularityRow {
            depth,
            distance: per.iter().map(|p| p.0).sum::<f64>() / count,
            lambda_diff: 0.0,
            rho_diff: 0.0,
            iterate_diff: vec![0.0; n_list.len()],
        };
        for p in &per {
            row.lambda_diff = row.lambda_diff.max(p.1);
            row.rho_diff = row.rho_diff.max(p.2);
            for (a, b) in row.iterate_diff.iter_mut().zip(&p.3) {
                *a = a.max(*b);
            }
        }
        rows.push(row);
    }
    let slope = |vals: Vec<f64>| -> f64 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = rows
            .iter()
            .zip(vals)
            .filter(|(_, v)| *v > 1e3 * f64::EPSILON)
            .map(|(r, v)| (r.distance.ln(), v.ln()))
            .unzip();
        linear_fit(&xs, &ys)
            .map(|f| f.slope)
            .unwrap_or(f64::INFINITY)
    };
    let beta_lambda = slope(rows.iter().map(|r| r.lambda_diff).collect());
    let beta_rho = slope(rows.iter().map(|r| r.rho_diff).collect());
    let beta_iterate: Vec<f64> = (0..n_list.len())
        .map(|k| slope(rows.iter().map(|r| r.iterate_diff[k]).collect()))
        .collect();
    let beta = beta_lambda.min(beta_rho).min(1.0).max(f64::MIN_POSITIVE);
    let bound = rows
        .iter()
        .map(|r| r.lambda_diff.max(r.rho_diff) / r.distance.powf(beta))
        .fold(0.0, f64::max);
    Ok(RegularityReport {
        rows,
        n_list: n_list.to_vec(),
        beta_lambda,
        beta_rho,
        beta_iterate,
        beta,
        bound,
    })
}

/// `T`-invariance of `μ` for one test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InvarianceRow {
    /// `|E_x μ_x(h∘T_x) − E_x μ_{τx}(h)|` with both sides over the same `x`.
    pub paired: f64,
    /// `E_x μ_x(h∘T_x) − E_x μ_x(h)` and its Monte Carlo standard error.
    pub unpaired: f64,
    pub unpaired_std_err: f64,
}

/// Compares `μ(h∘T)` with `μ(h)` for fiber functions `h_x = h(x_0, ·)`.
pub fn mu_invariance_check(
    engine: &ThermoEngine,
    x_samples: &[BasePoint],
    functions: &[crate::trig::SymbolTestFunction],
) -> Result<Vec<InvarianceRow>> {
    let bank = engine.bank();
    let spec = bank.spec();
    let n = bank.n_points();
    let chains: Vec<Chain> = x_samples
        .par_iter()
        .map(|x| engine.chain(x, 0, 1))
        .collect::<Result<Vec<_>>>()?;
    let rows = functions
        .iter()
        .map(|h| {
            let (mut pushed, mut next, mut here) = (Vec::new(), Vec::new(), Vec::new());
            for c in &chains {
                let (e0, e1) = (c.x.symbol(0), c.x.symbol(1));
                let nodes: Vec<f64> = (0..n).map(|i| crate::grid::node(i, n)).collect();
                let composed: Vec<f64> = nodes
                    .iter()
                    .map(|&z| h.eval(e1, spec.map_symbol(e0, z)))
                    .collect();
                let on_next: Vec<f64> = nodes.iter().map(|&z| h.eval(e1, z)).collect();
                let on_here: Vec<f64> = nodes.iter().map(|&z| h.eval(e0, z)).collect();
                pushed.push(c.mu_integrate(0, &composed));
                next.push(c.mu_integrate(1, &on_next));
                here.push(c.mu_integrate(0, &on_here));
            }
            let diff: Vec<f64> = pushed.iter().zip(&here).map(|(a, b)| a - b).collect();
            InvarianceRow {
                paired: (crate::stats::mean(&pushed) - crate::stats::mean(&next)).abs(),
                unpaired: crate::stats::mean(&diff),
                unpaired_std_err: crate::stats::std_err(&diff),
            }
        })
        .collect();
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_base;
    use crate::fiber::{Observable, SystemParams, SystemSpec};
    use crate::grid::Interp;
    use crate::trig::{PiecewiseLinear, TestFunction, TrigPoly};
    use std::f64::consts::TAU;

    fn engine(p: SystemParams, n: usize) -> ThermoEngine {
        let spec = Arc::new(SystemSpec::new(&p).unwrap());
        let bank = Arc::new(OperatorBank::new(spec, n, Interp::Cubic).unwrap());
        ThermoEngine::new(bank, DepthParams::default()).unwrap()
    }

    fn doubling() -> SystemParams {
        SystemParams {
            branch_count: vec![2, 2],
            potential_amp: vec![0.0, 0.0],
            ..SystemParams::default()
        }
    }

    #[test]
    fn doubling_closed_form() {
        let e = engine(doubling(), 256);
        let x = sample_base(&e.bank().spec().base, 42, 0).unwrap();
        let s = e.conformal_pullback(&x).unwrap();
        assert!((s.lambda - 2.0).abs() < 1e-12);
        assert!(s.nu.weights.iter().all(|w| (w - 1.0 / 256.0).abs() < 1e-14));
        assert!(s.rho.values.iter().all(|r| (r - 1.0).abs() < 1e-12));
        assert!(s.converged);
    }

    #[test]
    fn constant_potential_scales_lambda() {
        let p = SystemParams {
            potential_amp: vec![0.0, 0.0],
            potential_shift: 0.3,
            nonlinearity: vec![0.05, 0.0],
            ..SystemParams::default()
        };
        let e = engine(p, 256);
        let x = sample_base(&e.bank().spec().base, 1, 0).unwrap();
        let c = e.chain(&x, 0, 3).unwrap();
        for j in 0..=3 {
            let d = e.bank().spec().branch_count[x.symbol(j)] as f64;
            assert!((c.lambda(j) - d * 0.3f64.exp()).abs() < 1e-12);
            assert!(c.rho_values(j).iter().all(|r| (r - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn chain_duality_and_normalization_are_exact() {
        let e = engine(SystemParams::default(), 256);
        let x = sample_base(&e.bank().spec().base, 7, 0).unwrap();
        let c = e.chain(&x, -2, 3).unwrap();
        let u: Vec<f64> = (0..256)
            .map(|i| 1.0 + (TAU * i as f64 / 256.0).sin())
            .collect();
        for j in -2..3 {
            let lu = e.bank().op(x.symbol(j)).apply(&u);
            let lhs = c.integrate(j + 1, &lu);
            let rhs = c.lambda(j) * c.integrate(j, &u);
            assert!((lhs - rhs).abs() < 1e-13);
            assert!((c.integrate(j, c.rho_values(j)) - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn independent_states_agree() {
        let e = engine(SystemParams::default(), 256);
        let x = sample_base(&e.bank().spec().base, 9, 0).unwrap();
        let mut rng = crate::rng::stream_rng(1, 0);
        let us: Vec<GridFunction<f64>> = (0..10)
            .map(|_| {
                let p = TrigPoly::random(&mut rng, 3, 1.0);
                e.bank().function(&x, |z| p.eval(z))
            })
            .collect();
        let r = consistency_residuals(&e, &x, &us).unwrap();
        assert!(r.duality < 1e-10, "{r:?}");
        assert!(r.fixed_point < 1e-10, "{r:?}");
        assert!(r.nu_rho < 1e-12);
    }

    #[test]
    fn depth_is_cauchy() {
        let e = engine(SystemParams::default(), 256);
        let x = sample_base(&e.bank().spec().base, 3, 0).unwrap();
        let prof = e.depth_profile(&x, &[2, 4, 6, 8]);
        let d1 = (prof[1] - prof[0]).abs();
        let d2 = (prof[2] - prof[1]).abs();
        let d3 = (prof[3] - prof[2]).abs();
        assert!(d2 < d1 && d3 < d2, "{prof:?}");
    }

    #[test]
    fn cesaro_agrees_at_order_one_over_k() {
        let e = engine(SystemParams::default(), 256);
        let x = sample_base(&e.bank().spec().base, 5, 0).unwrap();
        let rho = e.invariant_density(&x).unwrap();
        let diff = |k: usize| e.cesaro_density(&x, k).unwrap().sub(&rho).sup_norm();
        let (a, b) = (diff(10), diff(20));
        // the average converges like 1/K, not geometrically
        assert!((a / b - 2.0).abs() < 0.2, "{a} {b}");
    }

    #[test]
    fn doubling_gap_kills_cos() {
        let e = engine(doubling(), 512);
        let spec_base = e.bank().spec().base.clone();
        let xs: Vec<BasePoint> = (0..3)
            .map(|i| sample_base(&spec_base, 2, i).unwrap())
            .collect();
        let cos = TrigPoly {
            constant: 0.0,
            cos: vec![1.0],
            sin: vec![0.0],
            exponentiate: false,
        };
        let us = vec![TestFunction::Trig(cos); 3];
        let g = gap_estimate(&e, &xs, &us, 10).unwrap();
        assert!(g.kappa <= 0.55, "{g:?}");
    }

    #[test]
    fn default_gap_is_measurable() {
        let e = engine(SystemParams::default(), 256);
        let base = e.bank().spec().base.clone();
        let mut rng = crate::rng::stream_rng(4, 0);
        let xs: Vec<BasePoint> = (0..4).map(|i| sample_base(&base, 4, i).unwrap()).collect();
        let us: Vec<TestFunction> = (0..4)
            .map(|_| TestFunction::PiecewiseLinear(PiecewiseLinear::random(&mut rng, 7)))
            .collect();
        let g = gap_estimate(&e, &xs, &us, 20).unwrap();
        assert!(g.kappa < 1.0, "{g:?}");
    }

    #[test]
    fn uniform_bounds_are_finite() {
        let e = engine(SystemParams::default(), 128);
        let base = e.bank().spec().base.clone();
        let xs: Vec<BasePoint> = (0..5).map(|i| sample_base(&base, 8, i).unwrap()).collect();
        let b = uniform_bounds(&e, &xs, 10).unwrap();
        assert!(b.rho_min > 0.0 && b.iterate_min > 0.0);
        assert!(b.constant >= b.rho_max && b.constant < 10.0);
    }

    #[test]
    fn regularity_identical_points() {
        let e = engine(SystemParams::default(), 128);
        let x = sample_base(&e.bank().spec().base, 8, 1).unwrap();
        let a = e.chain(&x, 0, 0).unwrap();
        let b = e.chain(&x.shift(0), 0, 0).unwrap();
        assert_eq!(a.lambda(0), b.lambda(0));
        assert_eq!(a.rho_values(0), b.rho_values(0));
    }

    #[test]
    fn regularity_pairs_agree_on_window() {
        let spec = SystemSpec::new(&SystemParams::default()).unwrap();
        let x = sample_base(&spec.base, 8, 1).unwrap();
        let y = regularity_pair(&x, 5, 99, 8);
        assert_eq!(x.window(-5, 5), y.window(-5, 5));
        assert_ne!(x.symbol(-6), y.symbol(-6));
        assert_ne!(x.symbol(6), y.symbol(6));
    }

    #[test]
    fn regularity_differences_shrink_with_depth() {
        let e = engine(SystemParams::default(), 128);
        let base = e.bank().spec().base.clone();
        let xs: Vec<BasePoint> = (0..4).map(|i| sample_base(&base, 6, i).unwrap()).collect();
        let r =
            regularity_check(&e, &xs, &[1, 3, 5], &[1], &BaseMetricParams::default(), 3).unwrap();
        assert!(r.rows[2].lambda_diff < r.rows[0].lambda_diff);
        assert!(r.beta_lambda > 0.0);
    }

    #[test]
    fn observable_unused_guard() {
        // the thermodynamic objects do not depend on the observable
        let p = SystemParams {
            observable: Observable::constant(3.0),
            ..SystemParams::default()
        };
        let a = engine(p, 128);
        let b = engine(SystemParams::default(), 128);
        let x = sample_base(&a.bank().spec().base, 1, 1).unwrap();
        assert_eq!(
            a.chain(&x, 0, 0).unwrap().lambda(0),
            b.chain(&x, 0, 0).unwrap().lambda(0)
        );
    }

    #[test]
    fn mu_is_invariant_under_the_maps() {
        let e = engine(SystemParams::default(), 512);
        let spec = e.bank().spec().clone();
        let xs: Vec<BasePoint> = (0..6)
            .map(|i| sample_base(&spec.base, 8, i).unwrap())
            .collect();
        let mut rng = crate::rng::stream_rng(8, 100);
        let hs: Vec<_> = (0..3)
            .map(|_| crate::trig::SymbolTestFunction::random_trig(&mut rng, 2, 3, 1.0))
            .collect();
        for row in mu_invariance_check(&e, &xs, &hs).unwrap() {
            assert!(row.paired < 1e-5, "{row:?}");
        }
    }
}
