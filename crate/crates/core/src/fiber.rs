//! Fiber maps `T_e(z) = d(e)·z + ε(e)·sin(2πz)/(2π) mod 1`, their inverse
//! branches, the potential and observables, and the Hölder constants derived
//! from them.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::base::{BaseMeasureSpec, BasePoint};
use crate::error::{Error, Result};
use crate::stats::KahanSum;

const NEWTON_MAX_ITER: usize = 100;

/// Reduce to `[0, 1)`; guards the `rem_euclid` rounding case that yields 1.0.
#[inline]
pub fn wrap_unit(z: f64) -> f64 {
    let r = z.rem_euclid(1.0);
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

/// Arc-length distance on the unit circle.
#[inline]
pub fn circle_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Fiberwise observable family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableKind {
    /// `c(e) + b·cos(2π(z + θ(e)))`.
    Trig {
        offset: Vec<f64>,
        amplitude: f64,
        phase: Vec<f64>,
    },
    /// `value` on every fiber.
    Constant { value: f64 },
    /// `k − k∘T_x + value` with `k(z) = cos(2πz)`.
    Coboundary { value: f64 },
}

// unknown keys are rejected by the flattened variant
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observable {
    #[serde(flatten)]
    pub kind: ObservableKind,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Observable {
    pub fn trig(offset: Vec<f64>, amplitude: f64, phase: Vec<f64>) -> Self {
        Self {
            kind: ObservableKind::Trig {
                offset,
                amplitude,
                phase,
            },
            scale: 1.0,
        }
    }

    pub fn constant(value: f64) -> Self {
        Self {
            kind: ObservableKind::Constant { value },
            scale: 1.0,
        }
    }

    pub fn coboundary(value: f64) -> Self {
        Self {
            kind: ObservableKind::Coboundary { value },
            scale: 1.0,
        }
    }

    /// `μ(g)` when it is known in closed form: constants, and coboundaries
    /// `k − k∘T + c`, whose mean is `c` under any invariant measure.
    pub fn exact_mean(&self) -> Option<f64> {
        match self.kind {
            ObservableKind::Constant { value } | ObservableKind::Coboundary { value } => {
                Some(self.scale * value)
            }
            ObservableKind::Trig { .. } => None,
        }
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            kind: self.kind.clone(),
            scale: self.scale * factor,
        }
    }
}

/// Constructor parameters for [`SystemSpec`]; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemParams {
    pub weights: Vec<f64>,
    pub branch_count: Vec<usize>,
    pub nonlinearity: Vec<f64>,
    pub potential_shift: f64,
    pub potential_amp: Vec<f64>,
    pub observable: Observable,
    pub alpha: f64,
    /// Variation cutoff; `None` means `1/(2·max d)`.
    pub eta: Option<f64>,
    /// Inverse-branch radius; `None` means `1/(2·max d)`.
    pub xi: Option<f64>,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            weights: vec![0.5, 0.5],
            branch_count: vec![2, 3],
            nonlinearity: vec![0.0, 0.0],
            potential_shift: 0.0,
            potential_amp: vec![0.1, 0.15],
            observable: Observable::trig(vec![0.2, -0.1], 1.0, vec![0.0, 0.25]),
            alpha: 1.0,
            eta: None,
            xi: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolderParams {
    pub alpha: f64,
    pub eta: f64,
    pub xi: f64,
    pub h_tilde: f64,
    pub gamma_star: f64,
    pub q_tilde: f64,
}

impl HolderParams {
    pub fn new(alpha: f64, eta: f64, xi: f64, h_tilde: f64, gamma_star: f64) -> Self {
        let g = gamma_star.powf(-alpha);
        Self {
            alpha,
            eta,
            xi,
            h_tilde,
            gamma_star,
            q_tilde: h_tilde * g / (1.0 - g),
        }
    }
}

/// Validated model: base measure, per-symbol maps, potential and observable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemSpec {
    pub base: BaseMeasureSpec,
    pub branch_count: Vec<usize>,
    pub nonlinearity: Vec<f64>,
    pub potential_shift: f64,
    pub potential_amp: Vec<f64>,
    pub observable: Observable,
    pub holder: HolderParams,
}

impl SystemSpec {
    pub fn new(p: &SystemParams) -> Result<Self> {
        let base = BaseMeasureSpec::new(p.weights.clone())?;
        let q = base.alphabet_size();
        let check_len = |name: &str, len: usize| {
            if len == q {
                Ok(())
            } else {
                Err(Error::InvalidSystem(format!(
                    "{name} has {len} entries but the alphabet has {q} symbols"
                )))
            }
        };
        check_len("branch_count", p.branch_count.len())?;
        check_len("nonlinearity", p.nonlinearity.len())?;
        check_len("potential_amp", p.potential_amp.len())?;
        if let ObservableKind::Trig { offset, phase, .. } = &p.observable.kind {
            check_len("observable.offset", offset.len())?;
            check_len("observable.phase", phase.len())?;
        }
        if let Some(d) = p.branch_count.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidSystem(format!("branch count {d} < 2")));
        }
        if p.nonlinearity.iter().any(|e| !(*e >= 0.0)) {
            return Err(Error::InvalidSystem("nonlinearity must be >= 0".into()));
        }
        if !(p.alpha > 0.0 && p.alpha <= 1.0) {
            return Err(Error::InvalidSystem(format!(
                "alpha = {} outside (0, 1]",
                p.alpha
            )));
        }
        let d_min = *p.branch_count.iter().min().unwrap() as f64;
        let d_max = *p.branch_count.iter().max().unwrap() as f64;
        let eps_max = p.nonlinearity.iter().cloned().fold(0.0, f64::max);
        // sup |s'| = 1 for s(z) = sin(2πz)/(2π)
        let gamma_star = d_min - TAU * eps_max;
        if !(gamma_star > 1.0) {
            return Err(Error::InvalidSystem(format!(
                "expansion bound min d - 2π max ε = {gamma_star} is not > 1"
            )));
        }
        let radius = 1.0 / (2.0 * d_max);
        let eta = p.eta.unwrap_or(radius);
        let xi = p.xi.unwrap_or(radius);
        if !(eta > 0.0 && xi > 0.0) {
            return Err(Error::InvalidSystem("eta and xi must be positive".into()));
        }
        let lip_phi = TAU * p.potential_amp.iter().map(|a| a.abs()).fold(0.0, f64::max);
        let deriv_max = p
            .branch_count
            .iter()
            .zip(&p.nonlinearity)
            .map(|(&d, &e)| d as f64 + e)
            .fold(0.0, f64::max);
        let lip_g = observable_lipschitz(&p.observable, deriv_max);
        let h_tilde = lip_phi.max(lip_g).max(1.0) * eta.powf(1.0 - p.alpha);
        Ok(Self {
            base,
            branch_count: p.branch_count.clone(),
            nonlinearity: p.nonlinearity.clone(),
            potential_shift: p.potential_shift,
            potential_amp: p.potential_amp.clone(),
            observable: p.observable.clone(),
            holder: HolderParams::new(p.alpha, eta, xi, h_tilde, gamma_star),
        })
    }

    pub fn alphabet_size(&self) -> usize {
        self.base.alphabet_size()
    }

    /// `deg(T) = max_e d(e)`.
    pub fn max_degree(&self) -> usize {
        *self.branch_count.iter().max().unwrap()
    }

    pub fn is_linear(&self) -> bool {
        self.nonlinearity.iter().all(|&e| e == 0.0)
    }

    #[inline]
    pub fn lift(&self, e: usize, z: f64) -> f64 {
        self.branch_count[e] as f64 * z + self.nonlinearity[e] * (TAU * z).sin() / TAU
    }

    #[inline]
    pub fn map_symbol(&self, e: usize, z: f64) -> f64 {
        wrap_unit(self.lift(e, z))
    }

    /// `T_x(z)`; depends on `x` only through `x_0`.
    pub fn apply_map(&self, x: &BasePoint, z: f64) -> f64 {
        self.map_symbol(x.symbol(0), z)
    }

    #[inline]
    pub fn derivative(&self, e: usize, z: f64) -> f64 {
        self.branch_count[e] as f64 + self.nonlinearity[e] * (TAU * z).cos()
    }

    /// Preimage of `w` on branch `j`: the unique `z ∈ [0,1)` with lift `w + j`.
    pub fn inverse_branch(&self, e: usize, w: f64, j: usize) -> Result<f64> {
        let d = self.branch_count[e] as f64;
        let target = w + j as f64;
        let eps = self.nonlinearity[e];
        if eps == 0.0 {
            return Ok(wrap_unit(target / d));
        }
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut z = target / d;
        for _ in 0..NEWTON_MAX_ITER {
            let f = self.lift(e, z) - target;
            if f.abs() <= 4.0 * f64::EPSILON * target.max(1.0) {
                return Ok(wrap_unit(z));
            }
            if f > 0.0 {
                hi = z;
            } else {
                lo = z;
            }
            let mut next = z - f / self.derivative(e, z);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - z).abs() <= f64::EPSILON * 0.5 {
                return Ok(wrap_unit(next));
            }
            z = next;
        }
        Err(Error::BranchNotConverged {
            symbol: e,
            branch: j,
            target: w,
        })
    }

    /// All `d(e)` preimages of `w` under `T_e`, ascending.
    pub fn inverse_branches_symbol(&self, e: usize, w: f64) -> Result<Vec<f64>> {
        (0..self.branch_count[e])
            .map(|j| self.inverse_branch(e, w, j))
            .collect()
    }

    pub fn inverse_branches(&self, x: &BasePoint, w: f64) -> Result<Vec<f64>> {
        self.inverse_branches_symbol(x.symbol(0), w)
    }

    /// `φ_e(z) = t + a(e)·cos(2πz)`.
    #[inline]
    pub fn potential(&self, e: usize, z: f64) -> f64 {
        self.potential_shift + self.potential_amp[e] * (TAU * z).cos()
    }

    #[inline]
    pub fn observe(&self, g: &Observable, e: usize, z: f64) -> f64 {
        let v = match &g.kind {
            ObservableKind::Trig {
                offset,
                amplitude,
                phase,
            } => offset[e] + amplitude * (TAU * (z + phase[e])).cos(),
            ObservableKind::Constant { value } => *value,
            ObservableKind::Coboundary { value } => {
                (TAU * z).cos() - (TAU * self.map_symbol(e, z)).cos() + value
            }
        };
        g.scale * v
    }

    /// Lipschitz constant of `g` on every fiber.
    pub fn observable_lipschitz(&self, g: &Observable) -> f64 {
        let deriv_max = self
            .branch_count
            .iter()
            .zip(&self.nonlinearity)
            .map(|(&d, &e)| d as f64 + e)
            .fold(0.0, f64::max);
        observable_lipschitz(g, deriv_max)
    }

    pub fn validate_observable(&self, g: &Observable) -> Result<()> {
        if let ObservableKind::Trig { offset, phase, .. } = &g.kind {
            if offset.len() != self.alphabet_size() || phase.len() != self.alphabet_size() {
                return Err(Error::InvalidSystem(
                    "observable offset/phase length differs from alphabet size".into(),
                ));
            }
        }
        Ok(())
    }

    /// Smallest `|T_e'|` over a grid of `n` points and all symbols.
    pub fn min_expansion_on_grid(&self, n: usize) -> f64 {
        let mut m = f64::INFINITY;
        for e in 0..self.alphabet_size() {
            for i in 0..n {
                m = m.min(self.derivative(e, i as f64 / n as f64).abs());
            }
        }
        m
    }
}

fn observable_lipschitz(g: &Observable, deriv_max: f64) -> f64 {
    let base = match &g.kind {
        ObservableKind::Trig { amplitude, .. } => TAU * amplitude.abs(),
        ObservableKind::Constant { .. } => 0.0,
        ObservableKind::Coboundary { .. } => TAU * (1.0 + deriv_max),
    };
    base * g.scale.abs()
}

/// `S_{x,n}h(z) = Σ_{j<n} h_{τ^j x}(T_x^j z)`, with `h` given per symbol.
pub fn birkhoff_sum<H>(spec: &SystemSpec, h: H, x: &BasePoint, z: f64, n: usize) -> f64
where
    H: Fn(usize, f64) -> f64,
{
    let mut acc = KahanSum::new();
    let mut z = z;
    for j in 0..n as i64 {
        let e = x.symbol(j);
        acc.add(h(e, z));
        z = spec.map_symbol(e, z);
    }
    acc.total()
}
