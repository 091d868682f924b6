//! Statistical consequences of the operator picture: characteristic-function
//! encoding, near-independence of separated blocks, uniform Hölder bounds on
//! perturbed integrals, the covariance series and the limit-law probes.

mod assumption6;
mod condition_h;
mod encoding;
mod laws;
mod variance;

pub use assumption6::{assumption6_check, Assumption6Params, Assumption6Report, Assumption6Row};
pub use condition_h::{condition_h_check, BlockConfig, ConditionHReport, ConditionHRow, FitSource};
pub use encoding::{encoding_check, EncodingReport};
pub use laws::{
    clt_test, coboundary_check, lil_probe, CltReport, CltStatus, CoboundaryReport, CoboundaryRow,
    LilReport, Verdict,
};
pub use variance::{
    covariance_sequence, route_a, sigma2_estimate, sigma2_series, stationarity_check,
    CovarianceReport, CovarianceRow, RouteA, StationarityReport, StationarityRow, VarianceParams,
    VarianceReport,
};

use num_complex::Complex64;
use serde::Serialize;

use crate::base::{sample_base, BaseMeasureSpec, BasePoint};
use crate::error::{Error, Result};
use crate::grid::GridFunction;
use crate::rng::derive_seed;
use crate::thermo::Chain;
use crate::transfer::{transfer_iterate, ObservableNodes, OperatorBank, OperatorKind};

/// Separate stream families under one master seed.
pub(crate) mod streams {
    pub const BASE_RHS: u64 = 1;
    pub const BASE_LHS: u64 = 2;
    pub const ORBIT_LHS: u64 = 3;
    pub const BASE_BLOCKS: u64 = 4;
    pub const BASE_PAIRS: u64 = 5;
    pub const R_DRAWS: u64 = 6;
    pub const BASE_ROUTE_A: u64 = 7;
    pub const BASE_ROUTE_B: u64 = 8;
    pub const ORBIT_ROUTE_B: u64 = 9;
    pub const BASE_VAR: u64 = 10;
    pub const ORBIT_VAR: u64 = 11;
    pub const BASE_CLT: u64 = 12;
    pub const ORBIT_CLT: u64 = 13;
    pub const BASE_LIL: u64 = 14;
    pub const ORBIT_LIL: u64 = 15;
    pub const BASE_COB: u64 = 16;
    pub const ORBIT_COB: u64 = 17;
    pub const BASE_STAT: u64 = 18;
    pub const ORBIT_STAT: u64 = 19;
}

pub(crate) fn master(seed: u64, family: u64) -> u64 {
    derive_seed(seed, family)
}

pub(crate) fn base_point(
    spec: &BaseMeasureSpec,
    seed: u64,
    family: u64,
    i: u64,
) -> Result<BasePoint> {
    sample_base(spec, master(seed, family), i)
}

pub(crate) fn check_radius(r: &[f64], eps0: f64) -> Result<()> {
    match r.iter().find(|v| !(v.abs() <= eps0)) {
        Some(v) => Err(Error::InvalidArgument(format!(
            "frequency {v} outside the perturbation radius {eps0}"
        ))),
        None => Ok(()),
    }
}

/// Complex Monte Carlo mean with the standard error of its modulus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComplexEstimate {
    pub re: f64,
    pub im: f64,
    pub std_err: f64,
}

impl ComplexEstimate {
    pub fn from_samples(samples: &[Complex64]) -> Self {
        let re: Vec<f64> = samples.iter().map(|c| c.re).collect();
        let im: Vec<f64> = samples.iter().map(|c| c.im).collect();
        Self {
            re: crate::stats::mean(&re),
            im: crate::stats::mean(&im),
            std_err: crate::stats::std_err(&re).hypot(crate::stats::std_err(&im)),
        }
    }

    pub fn value(&self) -> Complex64 {
        Complex64::new(self.re, self.im)
    }

    pub fn modulus(&self) -> f64 {
        self.value().norm()
    }
}

/// `L_{r_{len−1}} ∘ ⋯ ∘ L_{r_0} v` from fiber `j0` of a chain; `r = 0` steps
/// are plain normalized steps.
pub(crate) fn push_along(
    bank: &OperatorBank,
    chain: &Chain,
    j0: i64,
    v: Vec<Complex64>,
    r: &[f64],
    nodes: &ObservableNodes,
) -> Result<Vec<Complex64>> {
    if r.is_empty() {
        return Ok(v);
    }
    let start = chain.point(j0);
    let u = GridFunction::from_values(start.tag(), v, bank.interp());
    let out = transfer_iterate(
        bank,
        &start,
        &u,
        r.len(),
        OperatorKind::Perturbed {
            lambdas: chain.lambdas_from(j0),
            r,
            g: nodes,
        },
    )?;
    Ok(out.values)
}

pub(crate) fn complex_rho(chain: &Chain, j: i64) -> Vec<Complex64> {
    chain
        .rho_values(j)
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .collect()
}
