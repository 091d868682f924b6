//! Exact-conditional orbit sampling from the fiber measures `μ_x = ρ_x ν_x`.
//!
//! An orbit `z_0, …, z_{n−1}` with `z_0 ~ μ_x` is drawn backwards: start
//! uniformly `n + B` steps ahead, then repeatedly pick a preimage `z` of the
//! current point with probability proportional to `e^{φ(z)} ρ(z)`. Because
//! `L_0 ρ_x = ρ_{τx}`, these are the exact conditionals of `μ` given the
//! image point, so after the burn-in `B` the chain has forgotten its uniform
//! start at the gap rate. The density `ρ` on a fiber is read from a table
//! keyed by the last `L` past symbols.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::fiber::{Observable, SystemSpec};
use crate::grid::{Interp, Stencil};
use crate::transfer::OperatorBank;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerParams {
    /// Grid size of the density table.
    pub grid: usize,
    /// Number of past symbols keying the table; 0 picks the largest memory
    /// with at most `table_cap` words.
    pub memory: usize,
    pub table_cap: usize,
    pub burn_in: usize,
}

impl Default for SamplerParams {
    fn default() -> Self {
        Self {
            grid: 256,
            memory: 0,
            table_cap: 4096,
            burn_in: 64,
        }
    }
}

/// `ρ` on fibers whose last `memory` past symbols are given, normalized to
/// Lebesgue mean one.
#[derive(Debug, Clone)]
pub struct DensityTable {
    q: usize,
    memory: usize,
    grid: usize,
    values: Vec<f64>,
}

impl DensityTable {
    pub fn build(spec: Arc<SystemSpec>, grid: usize, memory: usize) -> Result<Self> {
        let q = spec.alphabet_size();
        let bank = OperatorBank::new(spec, grid, Interp::Cubic)?;
        let mut level = vec![1.0; grid];
        for l in 1..=memory {
            let prev = level;
            let words = q.pow(l as u32);
            level = vec![0.0; words * grid];
            for idx in 0..words {
                // most recent symbol in the lowest digit
                let s = idx % q;
                let parent = idx / q;
                let mut v = bank.op(s).apply(&prev[parent * grid..(parent + 1) * grid]);
                let mean = crate::stats::mean(&v);
                v.iter_mut().for_each(|t| *t /= mean);
                level[idx * grid..(idx + 1) * grid].copy_from_slice(&v);
            }
        }
        Ok(Self {
            q,
            memory,
            grid,
            values: level,
        })
    }

    pub fn memory(&self) -> usize {
        self.memory
    }

    /// Table index of the past word of fiber `j` given raw symbols.
    pub fn word_index(&self, past: impl Iterator<Item = usize>) -> usize {
        let mut idx = 0;
        let mut p = 1;
        for s in past.take(self.memory) {
            idx += s * p;
            p *= self.q;
        }
        idx
    }

    #[inline]
    pub fn eval(&self, word: usize, z: f64) -> f64 {
        let row = &self.values[word * self.grid..(word + 1) * self.grid];
        Stencil::new(z, self.grid, Interp::Cubic).apply(row)
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Draws `μ`-distributed orbits and evaluates an observable along them.
#[derive(Debug, Clone)]
pub struct OrbitSampler {
    spec: Arc<SystemSpec>,
    table: DensityTable,
    burn_in: usize,
}

impl OrbitSampler {
    pub fn new(spec: Arc<SystemSpec>, params: &SamplerParams) -> Result<Self> {
        let q = spec.alphabet_size();
        let memory = if params.memory > 0 {
            params.memory
        } else {
            let mut m = 0;
            while q.pow(m as u32 + 1) <= params.table_cap {
                m += 1;
            }
            m
        };
        if q.checked_pow(memory as u32).is_none_or(|w| w > 1 << 22) {
            return Err(Error::InvalidArgument(format!(
                "sampler memory {memory} too large"
            )));
        }
        let table = DensityTable::build(spec.clone(), params.grid, memory)?;
        if !(table.min_value() > 0.0) {
            return Err(Error::InvalidSystem(
                "sampler density table is not positive".into(),
            ));
        }
        Ok(Self {
            spec,
            table,
            burn_in: params.burn_in,
        })
    }

    pub fn table(&self) -> &DensityTable {
        &self.table
    }

    /// Orbit points `z_0, …, z_{n−1}` over `x` with `z_0 ~ μ_x`.
    pub fn orbit(&self, x: &BasePoint, n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        self.walk(x, n, rng, |j, _, z| out[j] = z)?;
        Ok(out)
    }

    /// `g_{τ^j x}(z_j)` for `j < n` along one sampled orbit.
    pub fn observe_orbit(
        &self,
        x: &BasePoint,
        g: &Observable,
        n: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f64>> {
        let mut out = vec![0.0; n];
        let spec = self.spec.clone();
        self.walk(x, n, rng, |j, e, z| out[j] = spec.observe(g, e, z))?;
        Ok(out)
    }

    fn walk<F: FnMut(usize, usize, f64)>(
        &self,
        x: &BasePoint,
        n: usize,
        rng: &mut ChaCha8Rng,
        mut record: F,
    ) -> Result<()> {
        let l = self.table.memory as i64;
        let top = (n + self.burn_in) as i64;
        // symbols at indices −L..top
        let symbols: Vec<usize> = (-l..top).map(|i| x.symbol(i)).collect();
        let sym = |i: i64| symbols[(i + l) as usize];
        let q = self.table.q;
        let high = q.pow(self.table.memory.saturating_sub(1) as u32);
        let mut z: f64 = rng.random();
        let mut word = self.table.word_index((1..=l).map(|k| sym(top - k)));
        let mut weights = [0.0f64; 16];
        let mut points = [0.0f64; 16];
        for j in (0..top).rev() {
            let e = sym(j);
            // word of fiber j from the word of fiber j + 1
            if l > 0 {
                word = (word - e) / q + sym(j - l) * high;
            }
            let d = self.spec.branch_count[e];
            if d > 16 {
                return Err(Error::InvalidArgument(
                    "sampler supports at most 16 branches".into(),
                ));
            }
            let mut total = 0.0;
            for b in 0..d {
                let zb = self.spec.inverse_branch(e, z, b)?;
                let w = self.spec.potential(e, zb).exp() * self.table.eval(word, zb).max(0.0);
                points[b] = zb;
                total += w;
                weights[b] = total;
            }
            let u = rng.random::<f64>() * total;
            let pick = weights[..d].iter().position(|&c| u < c).unwrap_or(d - 1);
            z = points[pick];
            if (j as usize) < n {
                record(j as usize, e, z);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_base;
    use crate::fiber::SystemParams;
    use crate::rng::stream_rng;
    use crate::stats::{ks_test, mean};
    use crate::thermo::{DepthParams, ThermoEngine};

    fn spec(p: SystemParams) -> Arc<SystemSpec> {
        Arc::new(SystemSpec::new(&p).unwrap())
    }

    #[test]
    fn doubling_marginal_is_uniform() {
        let s = spec(SystemParams {
            branch_count: vec![2, 2],
            potential_amp: vec![0.0, 0.0],
            ..SystemParams::default()
        });
        let sampler = OrbitSampler::new(s.clone(), &SamplerParams::default()).unwrap();
        let zs: Vec<f64> = (0..2000)
            .map(|i| {
                let x = sample_base(&s.base, 1, i).unwrap();
                sampler.orbit(&x, 1, &mut stream_rng(2, i)).unwrap()[0]
            })
            .collect();
        assert!(ks_test(&zs, |z| z.clamp(0.0, 1.0)).p_value > 0.01);
    }

    #[test]
    fn orbit_follows_the_maps() {
        let s = spec(SystemParams {
            nonlinearity: vec![0.05, 0.02],
            ..SystemParams::default()
        });
        let sampler = OrbitSampler::new(s.clone(), &SamplerParams::default()).unwrap();
        let x = sample_base(&s.base, 3, 3).unwrap();
        let zs = sampler.orbit(&x, 50, &mut stream_rng(4, 4)).unwrap();
        for j in 0..49 {
            let img = s.map_symbol(x.symbol(j as i64), zs[j]);
            assert!(crate::fiber::circle_distance(img, zs[j + 1]) < 1e-12);
        }
    }

    #[test]
    fn table_matches_pushforward_density() {
        let s = spec(SystemParams::default());
        let sampler = OrbitSampler::new(s.clone(), &SamplerParams::default()).unwrap();
        let bank = Arc::new(OperatorBank::new(s.clone(), 256, Interp::Cubic).unwrap());
        let engine = ThermoEngine::new(bank, DepthParams::default()).unwrap();
        let x = sample_base(&s.base, 5, 5).unwrap();
        let rho = engine.invariant_density(&x).unwrap();
        let m = sampler.table().memory() as i64;
        let word = sampler.table().word_index((1..=m).map(|k| x.symbol(-k)));
        // the table is normalized to Lebesgue mean one, ρ̂ to ν̂-mass one
        let scale = crate::stats::mean(&rho.values);
        for i in (0..256).step_by(17) {
            let z = i as f64 / 256.0;
            assert!((sampler.table().eval(word, z) * scale - rho.values[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn sampled_mean_matches_quadrature() {
        let s = spec(SystemParams::default());
        let sampler = OrbitSampler::new(s.clone(), &SamplerParams::default()).unwrap();
        let bank = Arc::new(OperatorBank::new(s.clone(), 256, Interp::Cubic).unwrap());
        let engine = ThermoEngine::new(bank.clone(), DepthParams::default()).unwrap();
        let g = s.observable.clone();
        let x = sample_base(&s.base, 6, 6).unwrap();
        let chain = engine.chain(&x, 0, 0).unwrap();
        let gv: Vec<f64> = (0..256)
            .map(|i| s.observe(&g, x.symbol(0), i as f64 / 256.0))
            .collect();
        let exact = chain.mu_integrate(0, &gv);
        let draws: Vec<f64> = (0..4000)
            .map(|i| {
                sampler
                    .observe_orbit(&x, &g, 1, &mut stream_rng(7, i))
                    .unwrap()[0]
            })
            .collect();
        let se = crate::stats::std_err(&draws);
        assert!(
            (mean(&draws) - exact).abs() < 4.0 * se,
            "{} vs {exact}",
            mean(&draws)
        );
    }
}
