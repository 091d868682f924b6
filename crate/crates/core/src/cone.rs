//! Multiplicative-oscillation cones `Λ^s_x` of positive normalized fiber
//! functions, the embedding of nonnegative Hölder functions into them, and
//! their invariance under the normalized operator.

use serde::Serialize;

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::grid::{FiberMeasure, GridFunction};
use crate::thermo::ThermoEngine;
use crate::transfer::{transfer_iterate, OperatorKind};

/// `h = (u + v_α(u)/Q) / (ν(u) + v_α(u)/Q)` for `u ≥ 0`.
pub fn cone_embed(
    u: &GridFunction<f64>,
    nu: &FiberMeasure,
    q_tilde: f64,
    alpha: f64,
    eta: f64,
) -> Result<GridFunction<f64>> {
    if u.tag != nu.tag {
        return Err(Error::FiberMismatch {
            expected: nu.tag,
            found: u.tag,
        });
    }
    if !(q_tilde > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "distortion constant {q_tilde} must be positive"
        )));
    }
    if u.min_value() < 0.0 {
        return Err(Error::InvalidArgument("cone embedding needs u >= 0".into()));
    }
    let shift = u.variation(alpha, eta) / q_tilde;
    let denom = nu.integrate(u) + shift;
    if !(denom > 0.0) {
        return Err(Error::ZeroFunction);
    }
    Ok(GridFunction::from_values(
        u.tag,
        u.values.iter().map(|&v| (v + shift) / denom).collect(),
        u.interp,
    ))
}

/// Cone parameters: aperture `s`, distortion `Q`, radius `ξ`, exponent `α`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConeParams {
    pub s: f64,
    pub q: f64,
    pub xi: f64,
    pub alpha: f64,
    /// Relative tolerance for the mass and the pair inequality.
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConePair {
    pub i: usize,
    pub j: usize,
    /// `h(w_i) − e^{sQϱ^α} h(w_j)`, relative to `‖h‖_∞`.
    pub excess: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConeCertificate {
    pub in_cone: bool,
    pub min_value: f64,
    pub mass_error: f64,
    /// Largest relative excess over all grid pairs within `ξ`.
    pub worst: Option<ConePair>,
}

/// Exhaustive grid-pair scan of the cone conditions.
pub fn cone_check(h: &GridFunction<f64>, nu: &FiberMeasure, p: &ConeParams) -> ConeCertificate {
    let n = h.n_points();
    let min_value = h.min_value();
    let mass_error = (nu.integrate(h) - 1.0).abs();
    let sup = h.sup_norm().max(f64::MIN_POSITIVE);
    let kmax = ((p.xi * n as f64 + 1e-9).floor() as usize).min(n / 2);
    let mut worst: Option<ConePair> = None;
    for k in 1..=kmax {
        let factor = (p.s * p.q * (k as f64 / n as f64).powf(p.alpha)).exp();
        for i in 0..n {
            let j = (i + k) % n;
            for (a, b) in [(i, j), (j, i)] {
                let excess = (h.values[a] - factor * h.values[b]) / sup;
                if worst.is_none_or(|w| excess > w.excess) {
                    worst = Some(ConePair { i: a, j: b, excess });
                }
            }
        }
    }
    let pairs_ok = worst.is_none_or(|w| w.excess <= p.tol);
    ConeCertificate {
        in_cone: min_value >= 0.0 && mass_error <= p.tol && pairs_ok,
        min_value,
        mass_error,
        worst,
    }
}

/// Variation bound for cone members in the form `sQ e^{sQξ^α} ξ^α`, times `‖h‖_∞`.
pub fn stated_variation_factor(p: &ConeParams) -> f64 {
    let xa = p.xi.powf(p.alpha);
    p.s * p.q * (p.s * p.q * xa).exp() * xa
}

/// What the cone inequality actually yields when `η ≤ ξ`:
/// `|h(w_1) − h(w_2)| ≤ (e^{sQϱ^α} − 1)h(w_2) ≤ sQϱ^α e^{sQξ^α}‖h‖_∞`.
pub fn corrected_variation_factor(p: &ConeParams) -> f64 {
    p.s * p.q * (p.s * p.q * p.xi.powf(p.alpha)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationBound {
    pub variation: f64,
    pub sup_norm: f64,
    pub stated_bound: f64,
    pub corrected_bound: f64,
}

impl VariationBound {
    pub fn new(h: &GridFunction<f64>, p: &ConeParams, eta: f64) -> Self {
        let sup_norm = h.sup_norm();
        Self {
            variation: h.variation(p.alpha, eta),
            sup_norm,
            stated_bound: stated_variation_factor(p) * sup_norm,
            corrected_bound: corrected_variation_factor(p) * sup_norm,
        }
    }

    pub fn stated_holds(&self, tol: f64) -> bool {
        self.variation <= self.stated_bound + tol
    }

    pub fn corrected_holds(&self, tol: f64) -> bool {
        self.variation <= self.corrected_bound + tol
    }
}

/// Certificates for `L_0^n h` on `τ^n x`, `n = 0..=n_max`, together with the
/// variation bounds of each image.
#[derive(Debug, Clone, Serialize)]
pub struct ConeOrbit {
    pub certificates: Vec<ConeCertificate>,
    pub bounds: Vec<VariationBound>,
}

impl ConeOrbit {
    pub fn all_in_cone(&self) -> bool {
        self.certificates.iter().all(|c| c.in_cone)
    }
}

/// Embeds `u ≥ 0` (node values on the fiber of `x`) into the cone at `x` and
/// follows it under `L_0` for `n_max` steps.
pub fn cone_orbit(
    engine: &ThermoEngine,
    x: &BasePoint,
    u: &[f64],
    n_max: usize,
    p: &ConeParams,
) -> Result<ConeOrbit> {
    let bank = engine.bank();
    let eta = bank.spec().holder.eta;
    let chain = engine.chain(x, 0, n_max as i64)?;
    let ug = GridFunction::from_values(x.tag(), u.to_vec(), bank.interp());
    let h = cone_embed(&ug, &chain.nu(0), p.q, p.alpha, eta)?;
    let mut certificates = Vec::with_capacity(n_max + 1);
    let mut bounds = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let img = transfer_iterate(
            bank,
            x,
            &h,
            n,
            OperatorKind::Normalized {
                lambdas: chain.lambdas_from(0),
            },
        )?;
        certificates.push(cone_check(&img, &chain.nu(n as i64), p));
        bounds.push(VariationBound::new(&img, p, eta));
    }
    Ok(ConeOrbit {
        certificates,
        bounds,
    })
}
