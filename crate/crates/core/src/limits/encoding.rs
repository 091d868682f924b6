use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use super::{base_point, check_radius, complex_rho, master, push_along, streams, ComplexEstimate};
use crate::error::Result;
use crate::rng::stream_rng;
use crate::sampler::OrbitSampler;
use crate::thermo::ThermoEngine;

/// Both sides of `E_μ e^{iΣ r_j g∘T^j} = ∫ ν_x(L_{r_{n−1}}⋯L_{r_0} ρ_{τ^{−n}x}) dm(x)`.
#[derive(Debug, Clone, Serialize)]
pub struct EncodingReport {
    pub r: Vec<f64>,
    /// Orbit Monte Carlo.
    pub lhs: ComplexEstimate,
    /// Base Monte Carlo of operator chains.
    pub rhs: ComplexEstimate,
    pub difference: f64,
    pub combined_std_err: f64,
    pub n_base_samples: usize,
    /// `difference ≤ 4·combined_std_err`, with a round-off allowance.
    pub within: bool,
}

pub fn encoding_check(
    engine: &ThermoEngine,
    sampler: &OrbitSampler,
    r: &[f64],
    eps0: f64,
    n_base_samples: usize,
    seed: u64,
) -> Result<EncodingReport> {
    check_radius(r, eps0)?;
    let bank = engine.bank();
    let spec = bank.spec();
    let g = &spec.observable;
    let n = r.len();
    let lhs: Vec<Complex64> = (0..n_base_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Complex64> {
            let x = base_point(&spec.base, seed, streams::BASE_LHS, i)?;
            let mut rng = stream_rng(master(seed, streams::ORBIT_LHS), i);
            let gs = sampler.observe_orbit(&x, g, n, &mut rng)?;
            let phase: f64 = gs.iter().zip(r).map(|(a, b)| a * b).sum();
            Ok(Complex64::from_polar(1.0, phase))
        })
        .collect::<Result<_>>()?;
    let nodes = bank.observable_nodes(g);
    let rhs: Vec<Complex64> = (0..n_base_samples as u64)
        .into_par_iter()
        .map(|i| -> Result<Complex64> {
            let x = base_point(&spec.base, seed, streams::BASE_RHS, i)?;
            let chain = engine.chain(&x, -(n as i64), 0)?;
            let v = push_along(
                bank,
                &chain,
                -(n as i64),
                complex_rho(&chain, -(n as i64)),
                r,
                &nodes,
            )?;
            Ok(chain.integrate(0, &v))
        })
        .collect::<Result<_>>()?;
    let lhs = ComplexEstimate::from_samples(&lhs);
    let rhs = ComplexEstimate::from_samples(&rhs);
    let difference = (lhs.value() - rhs.value()).norm();
    let combined_std_err = lhs.std_err.hypot(rhs.std_err);
    Ok(EncodingReport {
        r: r.to_vec(),
        lhs,
        rhs,
        difference,
        combined_std_err,
        n_base_samples,
        within: difference <= 4.0 * combined_std_err + 1e-12,
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
        let bank = Arc::new(OperatorBank::new(spec.clone(), 256, Interp::Cubic).unwrap());
        let engine = ThermoEngine::new(bank, DepthParams::default()).unwrap();
        let sampler = OrbitSampler::new(spec, &SamplerParams::default()).unwrap();
        (engine, sampler)
    }

    #[test]
    fn zero_frequencies_give_one() {
        let (e, s) = setup();
        let rep = encoding_check(&e, &s, &[0.0; 3], 1.0, 50, 1).unwrap();
        assert!((rep.lhs.value() - 1.0).norm() < 1e-15);
        assert!((rep.rhs.value() - 1.0).norm() < 1e-12);
        assert!(rep.within);
    }

    #[test]
    fn identity_holds_within_error() {
        let (e, s) = setup();
        for r in [vec![0.7], vec![0.3, -0.5, 0.9]] {
            let rep = encoding_check(&e, &s, &r, 1.0, 2000, 2).unwrap();
            assert!(rep.within, "{rep:?}");
            assert!(rep.lhs.modulus() <= 1.0 && rep.rhs.modulus() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn rejects_large_frequencies() {
        let (e, s) = setup();
        assert!(encoding_check(&e, &s, &[1.5], 1.0, 10, 1).is_err());
    }
}
