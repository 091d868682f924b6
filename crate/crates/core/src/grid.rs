//! Functions and measures on a fiber, sampled on a uniform circle grid.

use std::fmt::Debug;
use std::io::{self, Write};
use std::ops::{Add, AddAssign, Mul, Sub};

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::fiber::wrap_unit;
use crate::stats::KahanSum;

/// Interpolation between grid nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Linear,
    /// Periodic four-point Lagrange.
    Cubic,
}

impl Interp {
    /// Convergence order of the interpolation error.
    pub fn order(self) -> f64 {
        match self {
            Interp::Linear => 2.0,
            Interp::Cubic => 4.0,
        }
    }
}

/// Node indices and weights that reconstruct a value at an off-grid point.
#[derive(Debug, Clone, Copy)]
pub struct Stencil {
    pub idx: [usize; 4],
    pub w: [f64; 4],
    pub len: usize,
}

// distance (in cells) below which a point counts as a node
const SNAP: f64 = 1e-11;

impl Stencil {
    pub fn new(z: f64, n: usize, interp: Interp) -> Self {
        let s = wrap_unit(z) * n as f64;
        let i0 = s.floor();
        let f = s - i0;
        let i0 = i0 as usize % n;
        if f < SNAP || f > 1.0 - SNAP {
            let i = if f < SNAP { i0 } else { (i0 + 1) % n };
            return Self {
                idx: [i, 0, 0, 0],
                w: [1.0, 0.0, 0.0, 0.0],
                len: 1,
            };
        }
        match interp {
            Interp::Linear => Self {
                idx: [i0, (i0 + 1) % n, 0, 0],
                w: [1.0 - f, f, 0.0, 0.0],
                len: 2,
            },
            Interp::Cubic => {
                let (fm, f1, f2) = (f + 1.0, f - 1.0, f - 2.0);
                Self {
                    idx: [(i0 + n - 1) % n, i0, (i0 + 1) % n, (i0 + 2) % n],
                    w: [
                        -f * f1 * f2 / 6.0,
                        fm * f1 * f2 / 2.0,
                        -fm * f * f2 / 2.0,
                        fm * f * f1 / 6.0,
                    ],
                    len: 4,
                }
            }
        }
    }

    #[inline]
    pub fn apply<S: Scalar>(&self, values: &[S]) -> S {
        let mut acc = S::zero();
        for k in 0..self.len {
            acc += values[self.idx[k]] * self.w[k];
        }
        acc
    }
}

/// Field of grid values: real or complex.
pub trait Scalar:
    Copy
    + Debug
    + Send
    + Sync
    + PartialEq
    + Add<Output = Self>
    + Sub<Output = Self>
    + AddAssign
    + Mul<f64, Output = Self>
    + 'static
{
    fn zero() -> Self;
    fn from_real(v: f64) -> Self;
    /// Imaginary parts are dropped for real scalars.
    fn from_parts(re: f64, im: f64) -> Self;
    fn modulus(self) -> f64;
    fn re(self) -> f64;
    fn im(self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(v: f64) -> Self {
        v
    }
    fn from_parts(re: f64, _im: f64) -> Self {
        re
    }
    fn modulus(self) -> f64 {
        self.abs()
    }
    fn re(self) -> f64 {
        self
    }
    fn im(self) -> f64 {
        0.0
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn from_parts(re: f64, im: f64) -> Self {
        Complex64::new(re, im)
    }
    fn modulus(self) -> f64 {
        self.norm()
    }
    fn re(self) -> f64 {
        self.re
    }
    fn im(self) -> f64 {
        self.im
    }
}

pub fn node(i: usize, n: usize) -> f64 {
    i as f64 / n as f64
}

/// Function on one fiber, tagged by the base point it lives over.
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction<S: Scalar = f64> {
    pub tag: u64,
    pub values: Vec<S>,
    pub interp: Interp,
}

impl<S: Scalar> GridFunction<S> {
    pub fn from_values(tag: u64, values: Vec<S>, interp: Interp) -> Self {
        Self {
            tag,
            values,
            interp,
        }
    }

    pub fn from_fn<F: Fn(f64) -> S>(x: &BasePoint, n: usize, interp: Interp, f: F) -> Self {
        Self::from_values(x.tag(), (0..n).map(|i| f(node(i, n))).collect(), interp)
    }

    pub fn constant(x: &BasePoint, n: usize, interp: Interp, c: S) -> Self {
        Self::from_values(x.tag(), vec![c; n], interp)
    }

    pub fn n_points(&self) -> usize {
        self.values.len()
    }

    pub fn eval(&self, z: f64) -> S {
        Stencil::new(z, self.values.len(), self.interp).apply(&self.values)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.modulus()).fold(0.0, f64::max)
    }

    /// Grid proxy for `sup_{0 < ϱ(y,y') ≤ η} |u(y) − u(y')| / ϱ^α`; a lower
    /// bound for the true variation that converges under refinement.
    pub fn variation(&self, alpha: f64, eta: f64) -> f64 {
        variation_alpha(&self.values, alpha, eta)
    }

    /// `‖u‖_α = ‖u‖_∞ + v_α(u)`.
    pub fn holder_norm(&self, alpha: f64, eta: f64) -> f64 {
        self.sup_norm() + self.variation(alpha, eta)
    }

    pub fn check_fiber(&self, x: &BasePoint) -> Result<()> {
        let t = x.tag();
        if self.tag != t {
            return Err(Error::FiberMismatch {
                expected: t,
                found: self.tag,
            });
        }
        Ok(())
    }

    pub fn scale(&self, c: f64) -> Self {
        Self::from_values(
            self.tag,
            self.values.iter().map(|&v| v * c).collect(),
            self.interp,
        )
    }

    pub fn sub(&self, other: &Self) -> Self {
        debug_assert_eq!(self.values.len(), other.values.len());
        Self::from_values(
            self.tag,
            self.values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| a - b)
                .collect(),
            self.interp,
        )
    }

    /// Writes `index,point,value_re,value_im` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "index,point,value_re,value_im")?;
        let n = self.values.len();
        for (i, v) in self.values.iter().enumerate() {
            writeln!(out, "{},{},{:e},{:e}", i, node(i, n), v.re(), v.im())?;
        }
        Ok(())
    }
}

impl GridFunction<f64> {
    pub fn to_complex(&self) -> GridFunction<Complex64> {
        GridFunction::from_values(
            self.tag,
            self.values
                .iter()
                .map(|&v| Complex64::new(v, 0.0))
                .collect(),
            self.interp,
        )
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.values
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Grid variation of raw values on the uniform circle grid.
pub fn variation_alpha<S: Scalar>(values: &[S], alpha: f64, eta: f64) -> f64 {
    let n = values.len();
    let kmax = ((eta * n as f64 + 1e-9).floor() as usize).min(n / 2);
    let mut best = 0.0f64;
    for k in 1..=kmax {
        let inv = (k as f64 / n as f64).powf(-alpha);
        let mut m = 0.0f64;
        for i in 0..n {
            m = m.max((values[i] - values[(i + k) % n]).modulus());
        }
        best = best.max(m * inv);
    }
    best
}

/// Nonnegative-ish grid weights standing for a fiber probability measure.
/// Weights produced by the adjoint of a cubic operator may dip slightly
/// below zero; `min_weight` reports how far.
#[derive(Debug, Clone, PartialEq)]
pub struct FiberMeasure {
    pub tag: u64,
    pub weights: Vec<f64>,
}

impl FiberMeasure {
    pub fn lebesgue(x: &BasePoint, n: usize) -> Self {
        Self {
            tag: x.tag(),
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn n_points(&self) -> usize {
        self.weights.len()
    }

    pub fn mass(&self) -> f64 {
        crate::stats::sum(&self.weights)
    }

    pub fn min_weight(&self) -> f64 {
        self.weights.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn integrate<S: Scalar>(&self, u: &GridFunction<S>) -> S {
        integrate_values(&self.weights, &u.values)
    }

    /// Density-weighted measure `ρ·ν` (e.g. `μ_x = ρ_x ν_x`).
    pub fn with_density(&self, rho: &GridFunction<f64>) -> FiberMeasure {
        FiberMeasure {
            tag: self.tag,
            weights: self
                .weights
                .iter()
                .zip(&rho.values)
                .map(|(w, r)| w * r)
                .collect(),
        }
    }

    /// Draw from the positive part by CDF inversion, jittered uniformly
    /// inside the node's cell.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let n = self.weights.len();
        let total: f64 = self.weights.iter().map(|w| w.max(0.0)).sum();
        let target = rng.random::<f64>() * total;
        let mut acc = 0.0;
        let mut idx = n - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w.max(0.0);
            if target < acc {
                idx = i;
                break;
            }
        }
        let jitter = rng.random::<f64>() - 0.5;
        wrap_unit((idx as f64 + jitter) / n as f64)
    }
}

pub fn integrate_values<S: Scalar>(weights: &[f64], values: &[S]) -> S {
    let mut re = KahanSum::new();
    let mut im = KahanSum::new();
    for (&w, &v) in weights.iter().zip(values) {
        re.add(w * v.re());
        im.add(w * v.im());
    }
    S::from_parts(re.total(), im.total())
}
