//! Random test functions: low-order trigonometric polynomials and
//! piecewise-linear periodic splines.

use std::f64::consts::TAU;

use rand::Rng;
use serde::Serialize;

/// `c + Σ_k a_k cos(2πkz) + b_k sin(2πkz)`, optionally exponentiated.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrigPoly {
    pub constant: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
    pub exponentiate: bool,
}

impl TrigPoly {
    /// Signed polynomial with coefficients of size `≤ scale/k`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, degree: usize, scale: f64) -> Self {
        let mut cos = Vec::with_capacity(degree);
        let mut sin = Vec::with_capacity(degree);
        for k in 1..=degree {
            cos.push(scale * (2.0 * rng.random::<f64>() - 1.0) / k as f64);
            sin.push(scale * (2.0 * rng.random::<f64>() - 1.0) / k as f64);
        }
        Self {
            constant: 2.0 * rng.random::<f64>() - 1.0,
            cos,
            sin,
            exponentiate: false,
        }
    }

    /// Strictly positive `exp` of a random polynomial.
    pub fn random_positive<R: Rng + ?Sized>(rng: &mut R, degree: usize, scale: f64) -> Self {
        Self {
            exponentiate: true,
            ..Self::random(rng, degree, scale)
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        let mut v = self.constant;
        for (k, (a, b)) in self.cos.iter().zip(&self.sin).enumerate() {
            let t = TAU * (k + 1) as f64 * z;
            v += a * t.cos() + b * t.sin();
        }
        if self.exponentiate {
            v.exp()
        } else {
            v
        }
    }
}

/// Periodic piecewise-linear function through random values at `m`
/// equally spaced knots: Lipschitz with a full Fourier spectrum.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewiseLinear {
    pub knots: Vec<f64>,
    pub phase: f64,
}

impl PiecewiseLinear {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Self {
        Self {
            knots: (0..m).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect(),
            phase: rng.random::<f64>(),
        }
    }

    pub fn eval(&self, z: f64) -> f64 {
        let m = self.knots.len();
        let s = crate::fiber::wrap_unit(z + self.phase) * m as f64;
        let i = (s.floor() as usize).min(m - 1);
        let f = s - i as f64;
        self.knots[i] * (1.0 - f) + self.knots[(i + 1) % m] * f
    }
}

/// Test function drawn for gap and bound probes.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Trig(TrigPoly),
    PiecewiseLinear(PiecewiseLinear),
}

impl TestFunction {
    pub fn eval(&self, z: f64) -> f64 {
        match self {
            TestFunction::Trig(p) => p.eval(z),
            TestFunction::PiecewiseLinear(p) => p.eval(z),
        }
    }
}

/// Fiber function `h_x(z) = f_{x_0}(z)` with one test function per symbol.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SymbolTestFunction {
    pub per_symbol: Vec<TestFunction>,
}

impl SymbolTestFunction {
    pub fn random_trig<R: Rng + ?Sized>(rng: &mut R, q: usize, degree: usize, scale: f64) -> Self {
        Self {
            per_symbol: (0..q)
                .map(|_| TestFunction::Trig(TrigPoly::random(rng, degree, scale)))
                .collect(),
        }
    }

    pub fn eval(&self, symbol: usize, z: f64) -> f64 {
        self.per_symbol[symbol].eval(z)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn positive_version_is_positive_and_periodic() {
        let mut rng = crate::rng::stream_rng(3, 3);
        let p = TrigPoly::random_positive(&mut rng, 4, 0.8);
        for k in 0..100 {
            let z = k as f64 / 100.0;
            assert!(p.eval(z) > 0.0);
            assert!((p.eval(z) - p.eval(z + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn piecewise_linear_hits_knots_and_is_continuous() {
        let p = PiecewiseLinear {
            knots: vec![0.0, 1.0, -1.0, 0.5],
            phase: 0.0,
        };
        assert_eq!(p.eval(0.25), 1.0);
        assert_eq!(p.eval(0.5), -1.0);
        assert!((p.eval(0.125) - 0.5).abs() < 1e-15);
        assert!((p.eval(0.999_999_999) - p.eval(0.0)).abs() < 1e-6);
    }
}
