//! Discretized transfer operators `L_e u(w) = Σ_{T_e z = w} u(z) e^{φ_e(z)}`,
//! their orbit compositions, and a grid-free preimage-tree oracle.

use std::sync::Arc;

use num_complex::Complex64;

use crate::base::BasePoint;
use crate::error::{Error, Result};
use crate::fiber::{Observable, SystemSpec};
use crate::grid::{node, FiberMeasure, GridFunction, Interp, Scalar, Stencil};

/// Leaf budget for the preimage-tree oracle.
pub const ORACLE_BUDGET: u128 = 1_000_000;

/// Sparse (CSR) matrix of one symbol's transfer operator: row `i` is the
/// target node `i/N`, columns are interpolation stencils at its preimages.
#[derive(Debug, Clone)]
pub struct SymbolOperator {
    n: usize,
    row_ptr: Vec<u32>,
    cols: Vec<u32>,
    vals: Vec<f64>,
}

impl SymbolOperator {
    pub fn build(spec: &SystemSpec, e: usize, n: usize, interp: Interp) -> Result<Self> {
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0u32);
        for i in 0..n {
            let w = node(i, n);
            for j in 0..spec.branch_count[e] {
                let z = spec.inverse_branch(e, w, j)?;
                let weight = spec.potential(e, z).exp();
                let st = Stencil::new(z, n, interp);
                for k in 0..st.len {
                    cols.push(st.idx[k] as u32);
                    vals.push(weight * st.w[k]);
                }
            }
            row_ptr.push(cols.len() as u32);
        }
        Ok(Self {
            n,
            row_ptr,
            cols,
            vals,
        })
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn apply<S: Scalar>(&self, u: &[S]) -> Vec<S> {
        let mut out = Vec::with_capacity(self.n);
        for i in 0..self.n {
            let mut acc = S::zero();
            for k in self.row_ptr[i] as usize..self.row_ptr[i + 1] as usize {
                acc += u[self.cols[k] as usize] * self.vals[k];
            }
            out.push(acc);
        }
        out
    }

    /// Transpose action, used to pull measures back.
    pub fn apply_adjoint(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        for i in 0..self.n {
            let wi = w[i];
            for k in self.row_ptr[i] as usize..self.row_ptr[i + 1] as usize {
                out[self.cols[k] as usize] += self.vals[k] * wi;
            }
        }
        out
    }
}

/// Observable values at grid nodes, per symbol.
#[derive(Debug, Clone)]
pub struct ObservableNodes {
    pub values: Vec<Vec<f64>>,
}

/// Per-symbol operators for one system at one resolution.
#[derive(Debug, Clone)]
pub struct OperatorBank {
    spec: Arc<SystemSpec>,
    n: usize,
    interp: Interp,
    ops: Vec<SymbolOperator>,
}

impl OperatorBank {
    pub fn new(spec: Arc<SystemSpec>, n: usize, interp: Interp) -> Result<Self> {
        if n < 8 {
            return Err(Error::InvalidArgument(format!(
                "grid size {n} is too small"
            )));
        }
        let ops = (0..spec.alphabet_size())
            .map(|e| SymbolOperator::build(&spec, e, n, interp))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            n,
            interp,
            ops,
        })
    }

    pub fn spec(&self) -> &SystemSpec {
        &self.spec
    }

    pub fn spec_arc(&self) -> Arc<SystemSpec> {
        self.spec.clone()
    }

    pub fn n_points(&self) -> usize {
        self.n
    }

    pub fn interp(&self) -> Interp {
        self.interp
    }

    pub fn op(&self, symbol: usize) -> &SymbolOperator {
        &self.ops[symbol]
    }

    pub fn observable_nodes(&self, g: &Observable) -> ObservableNodes {
        ObservableNodes {
            values: (0..self.spec.alphabet_size())
                .map(|e| {
                    (0..self.n)
                        .map(|i| self.spec.observe(g, e, node(i, self.n)))
                        .collect()
                })
                .collect(),
        }
    }

    pub fn potential_nodes(&self, symbol: usize) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.spec.potential(symbol, node(i, self.n)))
            .collect()
    }

    pub fn lebesgue(&self, x: &BasePoint) -> FiberMeasure {
        FiberMeasure::lebesgue(x, self.n)
    }

    pub fn function<S: Scalar, F: Fn(f64) -> S>(&self, x: &BasePoint, f: F) -> GridFunction<S> {
        GridFunction::from_fn(x, self.n, self.interp, f)
    }

    pub fn ones(&self, x: &BasePoint) -> GridFunction<f64> {
        GridFunction::constant(x, self.n, self.interp, 1.0)
    }

    fn check(&self, x: &BasePoint, u: &GridFunction<impl Scalar>) -> Result<()> {
        if u.n_points() != self.n {
            return Err(Error::GridMismatch {
                expected: self.n,
                found: u.n_points(),
            });
        }
        u.check_fiber(x)
    }
}

/// Composition rule along the orbit.
#[derive(Debug, Clone, Copy)]
pub enum OperatorKind<'a> {
    Raw,
    /// Divide by `λ_{τ^j x}` at step `j`.
    Normalized {
        lambdas: &'a [f64],
    },
    /// `L_{r_j}u = L_0(e^{i r_j g} u)` at step `j`.
    Perturbed {
        lambdas: &'a [f64],
        r: &'a [f64],
        g: &'a ObservableNodes,
    },
}

/// `(L_x u)` on the fiber of `τx`.
pub fn transfer_apply<S: Scalar>(
    bank: &OperatorBank,
    x: &BasePoint,
    u: &GridFunction<S>,
) -> Result<GridFunction<S>> {
    bank.check(x, u)?;
    let v = bank.op(x.symbol(0)).apply(&u.values);
    Ok(GridFunction::from_values(x.shift(1).tag(), v, bank.interp))
}

/// `n`-fold composition along the orbit of `x`, landing on `τ^n x`.
pub fn transfer_iterate<S: PhaseScalar>(
    bank: &OperatorBank,
    x: &BasePoint,
    u: &GridFunction<S>,
    n: usize,
    kind: OperatorKind<'_>,
) -> Result<GridFunction<S>> {
    bank.check(x, u)?;
    let need = |len: usize, what: &str| {
        if len < n {
            Err(Error::InvalidArgument(format!(
                "{what} has {len} entries, need {n}"
            )))
        } else {
            Ok(())
        }
    };
    match kind {
        OperatorKind::Raw => {}
        OperatorKind::Normalized { lambdas } => need(lambdas.len(), "lambda chain")?,
        OperatorKind::Perturbed { lambdas, r, .. } => {
            need(lambdas.len(), "lambda chain")?;
            need(r.len(), "r sequence")?;
        }
    }
    let mut v = u.values.clone();
    for j in 0..n {
        let e = x.symbol(j as i64);
        if let OperatorKind::Perturbed { r, g, .. } = kind {
            if r[j] != 0.0 {
                for (vi, gi) in v.iter_mut().zip(&g.values[e]) {
                    *vi = vi.rotate(r[j] * gi)?;
                }
            }
        }
        v = bank.op(e).apply(&v);
        let scale = match kind {
            OperatorKind::Raw => 1.0,
            OperatorKind::Normalized { lambdas } | OperatorKind::Perturbed { lambdas, .. } => {
                1.0 / lambdas[j]
            }
        };
        if scale != 1.0 {
            for vi in v.iter_mut() {
                *vi = *vi * scale;
            }
        }
    }
    Ok(GridFunction::from_values(
        x.shift(n as i64).tag(),
        v,
        bank.interp,
    ))
}

/// Scalars that can be multiplied by `e^{iθ}`; real data only for `θ = 0`.
pub trait PhaseScalar: Scalar {
    fn rotate(self, theta: f64) -> Result<Self>;
}

impl PhaseScalar for f64 {
    fn rotate(self, theta: f64) -> Result<Self> {
        if theta == 0.0 {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(
                "perturbed operator with r != 0 needs complex data".into(),
            ))
        }
    }
}

impl PhaseScalar for Complex64 {
    fn rotate(self, theta: f64) -> Result<Self> {
        Ok(self * Complex64::from_polar(1.0, theta))
    }
}

/// Grid-free composition rule for the oracle.
#[derive(Debug, Clone, Copy)]
pub enum OracleKind<'a> {
    Raw,
    Normalized {
        lambdas: &'a [f64],
    },
    Perturbed {
        lambdas: &'a [f64],
        r: &'a [f64],
        g: &'a Observable,
    },
}

impl OracleKind<'_> {
    fn lambda(&self, j: usize) -> f64 {
        match self {
            OracleKind::Raw => 1.0,
            OracleKind::Normalized { lambdas } | OracleKind::Perturbed { lambdas, .. } => {
                lambdas[j]
            }
        }
    }

    fn phase(&self, spec: &SystemSpec, j: usize, e: usize, z: f64) -> f64 {
        match self {
            OracleKind::Perturbed { r, g, .. } => r[j] * spec.observe(g, e, z),
            _ => 0.0,
        }
    }
}

fn oracle_budget(spec: &SystemSpec, x: &BasePoint, n: usize, budget: u128) -> Result<Vec<usize>> {
    let symbols: Vec<usize> = (0..n as i64).map(|j| x.symbol(j)).collect();
    let leaves: u128 = symbols
        .iter()
        .map(|&e| spec.branch_count[e] as u128)
        .product();
    if leaves > budget {
        return Err(Error::BranchBudgetExceeded {
            depth: n,
            leaves,
            budget,
        });
    }
    Ok(symbols)
}

fn check_oracle_kind(kind: &OracleKind<'_>, n: usize) -> Result<()> {
    let ok = match kind {
        OracleKind::Raw => true,
        OracleKind::Normalized { lambdas } => lambdas.len() >= n,
        OracleKind::Perturbed { lambdas, r, .. } => lambdas.len() >= n && r.len() >= n,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "oracle chain shorter than depth".into(),
        ))
    }
}

/// `(L^n u)(w)` on the fiber of `τ^n x`, by recursive preimage enumeration in
/// the nested form `L_{n−1}(⋯L_0(u))`.
pub fn oracle_transfer(
    spec: &SystemSpec,
    x: &BasePoint,
    u: &dyn Fn(f64) -> Complex64,
    n: usize,
    w: f64,
    kind: OracleKind<'_>,
) -> Result<Complex64> {
    check_oracle_kind(&kind, n)?;
    let symbols = oracle_budget(spec, x, n, ORACLE_BUDGET)?;
    fn rec(
        spec: &SystemSpec,
        symbols: &[usize],
        u: &dyn Fn(f64) -> Complex64,
        kind: &OracleKind<'_>,
        level: usize,
        w: f64,
    ) -> Result<Complex64> {
        let e = symbols[level];
        let mut acc = Complex64::new(0.0, 0.0);
        for j in 0..spec.branch_count[e] {
            let z = spec.inverse_branch(e, w, j)?;
            let inner = if level == 0 {
                u(z)
            } else {
                rec(spec, symbols, u, kind, level - 1, z)?
            };
            let factor =
                Complex64::from_polar(spec.potential(e, z).exp(), kind.phase(spec, level, e, z));
            acc += inner * factor;
        }
        Ok(acc / kind.lambda(level))
    }
    if n == 0 {
        return Ok(u(w));
    }
    rec(spec, &symbols, u, &kind, n - 1, w)
}

/// Same quantity in the accumulated form
/// `Σ_{z ∈ T^{−n}w} u(z)·exp(S_nφ(z) + iΣ_j r_j g(T^j z)) / Π λ_j`.
pub fn oracle_transfer_accumulated(
    spec: &SystemSpec,
    x: &BasePoint,
    u: &dyn Fn(f64) -> Complex64,
    n: usize,
    w: f64,
    kind: OracleKind<'_>,
) -> Result<Complex64> {
    check_oracle_kind(&kind, n)?;
    let symbols = oracle_budget(spec, x, n, ORACLE_BUDGET)?;
    let log_lambda: f64 = (0..n).map(|j| kind.lambda(j).ln()).sum();
    let mut acc = Complex64::new(0.0, 0.0);
    // explicit stack of (level, point, S_φ, Σ r g)
    let mut stack = vec![(n, w, 0.0f64, 0.0f64)];
    while let Some((level, w, s_phi, s_phase)) = stack.pop() {
        if level == 0 {
            acc += u(w) * Complex64::from_polar((s_phi - log_lambda).exp(), s_phase);
            continue;
        }
        let j = level - 1;
        let e = symbols[j];
        for b in 0..spec.branch_count[e] {
            let z = spec.inverse_branch(e, w, b)?;
            stack.push((
                j,
                z,
                s_phi + spec.potential(e, z),
                s_phase + kind.phase(spec, j, e, z),
            ));
        }
    }
    Ok(acc)
}

/// `Q^n_x u = ν_x(u)·ρ_{τ^n x}`.
pub fn projection_q<S: Scalar>(
    nu: &FiberMeasure,
    u: &GridFunction<S>,
    rho_target: &GridFunction<f64>,
) -> Result<GridFunction<S>> {
    if u.tag != nu.tag {
        return Err(Error::FiberMismatch {
            expected: nu.tag,
            found: u.tag,
        });
    }
    let c = nu.integrate(u);
    Ok(GridFunction::from_values(
        rho_target.tag,
        rho_target.values.iter().map(|&r| c * r).collect(),
        rho_target.interp,
    ))
}

/// Sup discrepancies between routes to the perturbed iterate.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct ChainIdentityCheck {
    /// Grid composition of perturbed operators vs the accumulated-phase oracle.
    pub discrepancy: f64,
    /// Nested oracle vs accumulated oracle (round-off only).
    pub oracle_discrepancy: f64,
    pub n: usize,
}

/// Compares `L_{r_{n−1}}∘⋯∘L_{r_0} u` (grid) with
/// `L_0^n(e^{iΣ r_j g∘T^j} u)` (oracle) at every grid node.
pub fn perturbed_chain_identity_check(
    bank: &OperatorBank,
    x: &BasePoint,
    u: &dyn Fn(f64) -> Complex64,
    r: &[f64],
    lambdas: &[f64],
    g: &Observable,
) -> Result<ChainIdentityCheck> {
    let n = r.len();
    let spec = bank.spec();
    let nodes = bank.observable_nodes(g);
    let ug = bank.function(x, u);
    let lhs = transfer_iterate(
        bank,
        x,
        &ug,
        n,
        OperatorKind::Perturbed {
            lambdas,
            r,
            g: &nodes,
        },
    )?;
    let kind = OracleKind::Perturbed { lambdas, r, g };
    let mut disc = 0.0f64;
    let mut odisc = 0.0f64;
    for i in 0..bank.n_points() {
        let w = node(i, bank.n_points());
        let rhs = oracle_transfer_accumulated(spec, x, u, n, w, kind)?;
        let nested = oracle_transfer(spec, x, u, n, w, kind)?;
        disc = disc.max((lhs.values[i] - rhs).norm());
        odisc = odisc.max((nested - rhs).norm());
    }
    Ok(ChainIdentityCheck {
        discrepancy: disc,
        oracle_discrepancy: odisc,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base::sample_base;
    use crate::fiber::SystemParams;
    use std::f64::consts::TAU;

    fn spec(amp: Vec<f64>, shift: f64, d: Vec<usize>, eps: Vec<f64>) -> Arc<SystemSpec> {
        let q = d.len();
        Arc::new(
            SystemSpec::new(&SystemParams {
                weights: vec![1.0 / q as f64; q],
                branch_count: d,
                nonlinearity: eps,
                potential_shift: shift,
                potential_amp: amp,
                observable: Observable::trig(vec![0.2; q], 1.0, vec![0.0; q]),
                ..SystemParams::default()
            })
            .unwrap(),
        )
    }

    fn c(v: f64) -> Complex64 {
        Complex64::new(v, 0.0)
    }

    #[test]
    fn counting_preimages() {
        let s = spec(vec![0.0, 0.0], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let x = s.base.point(5).with_symbol(0, 0);
        let out = transfer_apply(&bank, &x, &bank.ones(&x)).unwrap();
        assert!(out.values.iter().all(|&v| (v - 2.0).abs() < 1e-14));
        let s = spec(vec![0.0, 0.0], 0.7, vec![3, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let out = transfer_apply(&bank, &x, &bank.ones(&x)).unwrap();
        assert!(out
            .values
            .iter()
            .all(|&v| (v - 3.0 * 0.7f64.exp()).abs() < 1e-13));
    }

    #[test]
    fn two_term_substitution() {
        let s = spec(vec![0.1, 0.1], 0.0, vec![2, 2], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let x = s.base.point(1);
        let out = transfer_apply(&bank, &x, &bank.ones(&x)).unwrap();
        let expect = 0.1f64.exp() + (-0.1f64).exp();
        assert!((out.values[0] - expect).abs() < 1e-15);
        assert_eq!(out.tag, x.shift(1).tag());
    }

    #[test]
    fn rejects_wrong_fiber() {
        let s = spec(vec![0.1, 0.1], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 32, Interp::Cubic).unwrap();
        let x = s.base.point(1);
        let u = bank.ones(&x.shift(1));
        assert!(matches!(
            transfer_apply(&bank, &x, &u),
            Err(Error::FiberMismatch { .. })
        ));
    }

    #[test]
    fn iterate_products_and_identity() {
        let s = spec(vec![0.0, 0.0], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 32, Interp::Cubic).unwrap();
        let x = s.base.point(9).with_window(0, &[0, 1, 0]);
        let one = bank.ones(&x);
        let out = transfer_iterate(&bank, &x, &one, 3, OperatorKind::Raw).unwrap();
        assert!(out.values.iter().all(|&v| (v - 12.0).abs() < 1e-12));
        let same = transfer_iterate(&bank, &x, &one, 0, OperatorKind::Raw).unwrap();
        assert_eq!(same, one);
    }

    #[test]
    fn zero_frequencies_match_normalized() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let x = s.base.point(3);
        let u = bank.function(&x, |z| c(1.0 + 0.3 * (TAU * z).sin()));
        let lambdas = [2.1, 3.2, 2.05, 2.9];
        let g = bank.observable_nodes(&s.observable);
        let a = transfer_iterate(
            &bank,
            &x,
            &u,
            4,
            OperatorKind::Normalized { lambdas: &lambdas },
        )
        .unwrap();
        let b = transfer_iterate(
            &bank,
            &x,
            &u,
            4,
            OperatorKind::Perturbed {
                lambdas: &lambdas,
                r: &[0.0; 4],
                g: &g,
            },
        )
        .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn real_data_rejects_nonzero_frequency() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 32, Interp::Cubic).unwrap();
        let x = s.base.point(3);
        let g = bank.observable_nodes(&s.observable);
        let r = transfer_iterate(
            &bank,
            &x,
            &bank.ones(&x),
            1,
            OperatorKind::Perturbed {
                lambdas: &[1.0],
                r: &[0.5],
                g: &g,
            },
        );
        assert!(r.is_err());
    }

    #[test]
    fn oracle_counts_and_linearity() {
        let s = spec(vec![0.0, 0.0], 0.0, vec![2, 2], vec![0.0, 0.0]);
        let x = s.base.point(4);
        let one = |_: f64| c(1.0);
        let v = oracle_transfer(&s, &x, &one, 10, 0.3, OracleKind::Raw).unwrap();
        assert!((v - c(1024.0)).norm() < 1e-9);

        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.05, 0.0]);
        let x = s.base.point(6);
        let u = |z: f64| c((TAU * z).cos());
        let w = |z: f64| c(z * (1.0 - z));
        let comb = |z: f64| u(z) * 2.0 - w(z) * 0.5;
        let a = oracle_transfer(&s, &x, &u, 5, 0.42, OracleKind::Raw).unwrap();
        let b = oracle_transfer(&s, &x, &w, 5, 0.42, OracleKind::Raw).unwrap();
        let ab = oracle_transfer(&s, &x, &comb, 5, 0.42, OracleKind::Raw).unwrap();
        assert!((ab - (a * 2.0 - b * 0.5)).norm() < 1e-12 * (1.0 + ab.norm()));
    }

    #[test]
    fn oracle_budget_enforced() {
        let s = spec(vec![0.0, 0.0], 0.0, vec![3, 3], vec![0.0, 0.0]);
        let x = s.base.point(4);
        let r = oracle_transfer(&s, &x, &|_| c(1.0), 13, 0.1, OracleKind::Raw);
        assert!(matches!(r, Err(Error::BranchBudgetExceeded { .. })));
    }

    #[test]
    fn grid_matches_oracle_single_step() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.05, 0.03]);
        let bank = OperatorBank::new(s.clone(), 512, Interp::Cubic).unwrap();
        let x = sample_base(&s.base, 42, 0).unwrap();
        let f = |z: f64| c(1.0 + 0.5 * (TAU * z).sin());
        let out = transfer_apply(&bank, &x, &bank.function(&x, f)).unwrap();
        for i in (0..512).step_by(37) {
            let w = node(i, 512);
            let o = oracle_transfer(&s, &x, &f, 1, w, OracleKind::Raw).unwrap();
            assert!((out.values[i] - o).norm() < 1e-8);
        }
    }

    #[test]
    fn positivity_and_linearity_of_grid_operator() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 128, Interp::Linear).unwrap();
        let x = s.base.point(8);
        let u = bank.function(&x, |z| 1.0 + z * (1.0 - z));
        let v = bank.function(&x, |z| (TAU * z).sin());
        let lu = transfer_apply(&bank, &x, &u).unwrap();
        assert!(lu.values.iter().all(|&t| t > 0.0));
        let lv = transfer_apply(&bank, &x, &v).unwrap();
        let sum = GridFunction::from_values(
            u.tag,
            u.values
                .iter()
                .zip(&v.values)
                .map(|(a, b)| 3.0 * a + b)
                .collect(),
            u.interp,
        );
        let ls = transfer_apply(&bank, &x, &sum).unwrap();
        for i in 0..128 {
            assert!((ls.values[i] - (3.0 * lu.values[i] + lv.values[i])).abs() < 1e-13);
        }
    }

    #[test]
    fn adjoint_is_transpose() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.05, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let op = bank.op(0);
        let u: Vec<f64> = (0..64).map(|i| ((i * 7) % 13) as f64 - 6.0).collect();
        let w: Vec<f64> = (0..64).map(|i| ((i * 5) % 11) as f64 * 0.1).collect();
        let lu = op.apply(&u);
        let ltw = op.apply_adjoint(&w);
        let a: f64 = lu.iter().zip(&w).map(|(p, q)| p * q).sum();
        let b: f64 = ltw.iter().zip(&u).map(|(p, q)| p * q).sum();
        assert!((a - b).abs() < 1e-11);
    }

    #[test]
    fn oracle_forms_agree() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.04, 0.0]);
        let x = s.base.point(12);
        let g = s.observable.clone();
        let u = |z: f64| c(2.0 + (TAU * z).cos());
        let r = [0.3, -0.2, 0.1, 0.25];
        let lambdas = [2.0, 3.0, 2.5, 2.2];
        let kind = OracleKind::Perturbed {
            lambdas: &lambdas,
            r: &r,
            g: &g,
        };
        let a = oracle_transfer(&s, &x, &u, 4, 0.77, kind).unwrap();
        let b = oracle_transfer_accumulated(&s, &x, &u, 4, 0.77, kind).unwrap();
        assert!((a - b).norm() < 1e-13 * a.norm().max(1.0));
    }

    #[test]
    fn projection_examples() {
        let s = spec(vec![0.1, 0.15], 0.0, vec![2, 3], vec![0.0, 0.0]);
        let bank = OperatorBank::new(s.clone(), 64, Interp::Cubic).unwrap();
        let x = s.base.point(2);
        let nu = bank.lebesgue(&x);
        let rho = bank.function(&x.shift(3), |z| 1.0 + 0.2 * (TAU * z).cos());
        let q1 = projection_q(&nu, &bank.ones(&x), &rho).unwrap();
        assert_eq!(q1.values, rho.values);
        let zero_mean = bank.function(&x, |z| (TAU * z).sin());
        let q0 = projection_q(&nu, &zero_mean, &rho).unwrap();
        assert!(q0.sup_norm() < 1e-15);
    }
}
