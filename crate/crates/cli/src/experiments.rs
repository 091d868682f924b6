//! One runner per subcommand: calls into the library, collects summary
//! values, contract checks and raw CSV tables.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt::Display;
use std::sync::{Arc, OnceLock};

use asiplab::base::{base_correlation_check, sample_base, BaseObservable, BasePoint};
use asiplab::cone::{cone_orbit, ConeParams};
use asiplab::fiber::{Observable, SystemSpec};
use asiplab::limits::{
    assumption6_check, clt_test, coboundary_check, condition_h_check, covariance_sequence,
    encoding_check, lil_probe, sigma2_estimate, sigma2_series, stationarity_check,
    Assumption6Params, BlockConfig, CltStatus, FitSource, VarianceParams, Verdict,
};
use asiplab::rng::{derive_seed, stream_rng};
use asiplab::sampler::{OrbitSampler, SamplerParams};
use asiplab::thermo::{
    consistency_residuals, gap_estimate, uniform_bounds, DepthParams, ThermoEngine,
};
use asiplab::transfer::{perturbed_chain_identity_check, OperatorBank};
use asiplab::trig::{PiecewiseLinear, TestFunction, TrigPoly};
use num_complex::Complex64;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::ExperimentConfig;
use crate::error::CliError;

pub const SUBCOMMANDS: [&str; 11] = [
    "thermo",
    "gap",
    "bounds",
    "encoding",
    "condition-h",
    "assumption6",
    "decay-base",
    "sigma2",
    "clt",
    "lil",
    "coboundary",
];

// stream families for base points and test functions drawn here
const X_THERMO: u64 = 101;
const U_THERMO: u64 = 102;
const X_GAP: u64 = 103;
const U_GAP: u64 = 104;
const X_BOUNDS: u64 = 105;
const U_BOUNDS: u64 = 106;
const U_CONE: u64 = 107;
const R_ENCODING: u64 = 108;
const DECAY: u64 = 109;
const R_IDENTITY: u64 = 110;
const X_IDENTITY: u64 = 111;

/// Results of one subcommand.
#[derive(Debug, Default)]
pub struct Outcome {
    pub results: Map<String, Value>,
    pub checks: BTreeMap<String, bool>,
    pub warnings: Vec<String>,
    /// `(file name, contents)`.
    pub csvs: Vec<(String, String)>,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.values().all(|&v| v)
    }

    fn put<T: Serialize>(&mut self, key: &str, value: T) {
        self.results.insert(
            key.to_string(),
            serde_json::to_value(value).expect("result serializes"),
        );
    }

    fn check(&mut self, key: &str, ok: bool) {
        self.checks.insert(key.to_string(), ok);
    }

    fn csv<R, C>(&mut self, name: &str, header: &[&str], rows: R)
    where
        R: IntoIterator<Item = Vec<C>>,
        C: Display,
    {
        let mut out = header.join(",");
        out.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        self.csvs.push((name.to_string(), out));
    }
}

/// Shared numerical state for a run.
pub struct Context {
    pub cfg: ExperimentConfig,
    pub spec: Arc<SystemSpec>,
    pub engine: ThermoEngine,
    sampler: OnceLock<OrbitSampler>,
}

impl Context {
    pub fn new(cfg: ExperimentConfig) -> Result<Self, CliError> {
        let spec = Arc::new(SystemSpec::new(&cfg.system)?);
        let nm = &cfg.numerics;
        let bank = Arc::new(OperatorBank::new(spec.clone(), nm.grid_points, nm.interp)?);
        let engine = ThermoEngine::new(
            bank,
            DepthParams {
                depth: nm.depth,
                depth_max: nm.depth_max,
                tol: nm.depth_tol,
            },
        )?;
        Ok(Self {
            cfg,
            spec,
            engine,
            sampler: OnceLock::new(),
        })
    }

    fn seed(&self) -> u64 {
        self.cfg.statistics.seed
    }

    fn sampler(&self) -> Result<&OrbitSampler, CliError> {
        if let Some(s) = self.sampler.get() {
            return Ok(s);
        }
        let nm = &self.cfg.numerics;
        let s = OrbitSampler::new(
            self.spec.clone(),
            &SamplerParams {
                grid: nm.sampler_grid,
                memory: nm.sampler_memory,
                table_cap: nm.sampler_table_cap,
                burn_in: nm.burn_in,
            },
        )?;
        Ok(self.sampler.get_or_init(|| s))
    }

    fn points(&self, family: u64, n: usize) -> Result<Vec<BasePoint>, CliError> {
        let master = derive_seed(self.seed(), family);
        (0..n as u64)
            .map(|i| sample_base(&self.spec.base, master, i).map_err(CliError::from))
            .collect()
    }

    fn variance_params(&self) -> VarianceParams {
        let st = &self.cfg.statistics;
        VarianceParams {
            m_start: st.m,
            m_max: st.m_max,
            tail_tol: st.tail_tol,
            n_base_samples: st.n_base_samples,
            n_var: st.n,
            trials: st.trials,
            seed: st.seed,
        }
    }

    fn cone_params(&self) -> ConeParams {
        let h = self.spec.holder;
        ConeParams {
            s: 1.0,
            q: h.q_tilde,
            xi: h.xi,
            alpha: h.alpha,
            tol: 1e-9,
        }
    }

    /// Center for `S_n g`: the closed-form mean when known, else `μ̂(g)`.
    fn center(&self, g: &Observable, mu_hat: f64) -> f64 {
        g.exact_mean().unwrap_or(mu_hat)
    }
}

pub fn run_subcommand(ctx: &Context, name: &str) -> Result<Outcome, CliError> {
    match name {
        "thermo" => thermo(ctx),
        "gap" => gap(ctx),
        "bounds" => bounds(ctx),
        "encoding" => encoding(ctx),
        "condition-h" => condition_h(ctx),
        "assumption6" => assumption6(ctx),
        "decay-base" => decay_base(ctx),
        "sigma2" => sigma2(ctx),
        "clt" => clt(ctx),
        "lil" => lil(ctx),
        "coboundary" => coboundary(ctx),
        "all" => all(ctx),
        other => Err(CliError::Config(format!(
            "unknown subcommand `{other}`; expected one of {} or all",
            SUBCOMMANDS.join(", ")
        ))),
    }
}

fn all(ctx: &Context) -> Result<Outcome, CliError> {
    let mut out = Outcome::default();
    for name in SUBCOMMANDS {
        let sub = run_subcommand(ctx, name)?;
        let key = name.replace('-', "_");
        for (k, v) in sub.checks {
            out.check(&format!("{key}.{k}"), v);
        }
        out.warnings
            .extend(sub.warnings.into_iter().map(|w| format!("{name}: {w}")));
        for (f, c) in sub.csvs {
            out.csvs.push((format!("{key}_{f}"), c));
        }
        out.put(&key, Value::Object(sub.results));
    }
    Ok(out)
}

fn thermo(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.thermo;
    let bank = ctx.engine.bank();
    let xs = ctx.points(X_THERMO, e.x_samples.max(1))?;
    let mut rng = stream_rng(derive_seed(ctx.seed(), U_THERMO), 0);
    let polys: Vec<TrigPoly> = (0..e.test_functions)
        .map(|_| TrigPoly::random(&mut rng, 3, 1.0))
        .collect();
    let mut res = (0.0f64, 0.0f64, 0.0f64);
    for x in &xs {
        let fns: Vec<_> = polys
            .iter()
            .map(|p| bank.function(x, |z| p.eval(z)))
            .collect();
        let r = consistency_residuals(&ctx.engine, x, &fns)?;
        res = (
            res.0.max(r.duality),
            res.1.max(r.fixed_point),
            res.2.max(r.nu_rho),
        );
    }
    let x = &xs[0];
    let state = ctx.engine.conformal_pullback(x)?;
    let chain = ctx.engine.chain(x, 0, e.chain_length as i64)?;
    let lambda_chain: Vec<f64> = (0..=e.chain_length as i64)
        .map(|j| chain.lambda(j))
        .collect();
    let rho = chain.rho_values(0);
    let nu = chain.nu_weights(0);
    let mut out = Outcome::default();
    out.put("lambda", state.lambda);
    out.put("depth", state.depth);
    out.put("converged", state.converged);
    out.put("lambda_delta", state.lambda_delta);
    out.put("lambda_chain", &lambda_chain);
    out.put("rho_min", rho.iter().cloned().fold(f64::INFINITY, f64::min));
    out.put(
        "rho_max",
        rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    out.put("nu_mass", nu.iter().sum::<f64>());
    out.put("duality_residual", res.0);
    out.put("fixed_point_residual", res.1);
    out.put("nu_rho_residual", res.2);
    out.put("x_samples", xs.len());
    out.check("duality", res.0 <= 1e-6);
    out.check("fixed_point", res.1 <= 1e-6);
    out.check("nu_rho", res.2 <= 1e-8);
    if !state.converged {
        out.warnings.push(format!(
            "pullback depth reached {} before λ converged",
            state.depth
        ));
    }
    let n = rho.len();
    out.csv(
        "state.csv",
        &["z", "rho", "nu_weight"],
        (0..n).map(|i| vec![i as f64 / n as f64, rho[i], nu[i]]),
    );
    out.csv(
        "lambda_chain.csv",
        &["j", "lambda"],
        lambda_chain
            .iter()
            .enumerate()
            .map(|(j, l)| vec![j as f64, *l]),
    );
    Ok(out)
}

fn gap(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.gap;
    let xs = ctx.points(X_GAP, e.instances)?;
    let mut rng = stream_rng(derive_seed(ctx.seed(), U_GAP), 0);
    let us: Vec<TestFunction> = (0..e.instances)
        .map(|_| TestFunction::PiecewiseLinear(PiecewiseLinear::random(&mut rng, e.knots)))
        .collect();
    let est = gap_estimate(&ctx.engine, &xs, &us, e.n_max)?;
    let mut out = Outcome::default();
    out.put("kappa", est.kappa);
    out.put("constant", est.constant);
    out.put("r_squared", est.r_squared);
    out.put("n_fit_points", est.n_fit_points);
    out.put("too_strong", est.too_strong);
    out.check("kappa_below_one", est.kappa < 1.0);
    out.check("fit_quality", est.too_strong || est.r_squared >= 0.98);
    if est.too_strong {
        out.warnings
            .push("residuals hit round-off before a fit; kappa is an upper bound".into());
    }
    out.csv(
        "gap.csv",
        &["n", "max_ratio"],
        est.rows.iter().map(|r| vec![r.n as f64, r.max_ratio]),
    );
    Ok(out)
}

fn bounds(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.bounds;
    let bank = ctx.engine.bank();
    let xs = ctx.points(X_BOUNDS, e.x_samples.max(e.instances).max(e.cone_instances))?;
    let ub = uniform_bounds(&ctx.engine, &xs[..e.x_samples], e.n_max)?;
    let mut rng = stream_rng(derive_seed(ctx.seed(), U_BOUNDS), 0);
    let us: Vec<TestFunction> = (0..e.instances)
        .map(|i| {
            if i % 2 == 0 {
                TestFunction::PiecewiseLinear(PiecewiseLinear::random(&mut rng, 7))
            } else {
                TestFunction::Trig(TrigPoly::random_positive(&mut rng, 3, 0.5))
            }
        })
        .collect();
    let ob = asiplab::bounds::operator_norm_bounds_check(
        &ctx.engine,
        &xs[..e.instances],
        &us,
        &e.r_grid,
        e.operator_n_max,
        ctx.cfg.numerics.eps0,
    )?;
    let p = ctx.cone_params();
    let mut rng = stream_rng(derive_seed(ctx.seed(), U_CONE), 0);
    let mut cone_rows = Vec::new();
    let (mut embeds, mut images, mut stated, mut corrected) = (0usize, 0usize, 0usize, 0usize);
    for (i, x) in xs[..e.cone_instances].iter().enumerate() {
        let poly = TrigPoly::random_positive(&mut rng, 3, 0.5);
        let u = bank.function(x, |z| poly.eval(z)).values;
        let orbit = cone_orbit(&ctx.engine, x, &u, e.cone_n_max, &p)?;
        embeds += orbit.certificates[0].in_cone as usize;
        images += orbit.all_in_cone() as usize;
        stated += orbit.bounds.iter().all(|b| b.stated_holds(1e-8)) as usize;
        corrected += orbit.bounds.iter().all(|b| b.corrected_holds(1e-8)) as usize;
        for (n, (c, b)) in orbit.certificates.iter().zip(&orbit.bounds).enumerate() {
            cone_rows.push(vec![
                i as f64,
                n as f64,
                c.in_cone as u8 as f64,
                b.variation,
                b.sup_norm,
                b.stated_bound,
                b.corrected_bound,
            ]);
        }
    }
    let mut out = Outcome::default();
    out.put("uniform_constant", ub.constant);
    out.put("uniform_bounds", ub);
    out.put("c_sup", ob.c_sup);
    out.put("c_alpha", ob.c_alpha);
    out.put("max_slope", ob.max_slope());
    out.put("per_r", &ob.per_r);
    out.put("cone_instances", e.cone_instances);
    out.put("cone_embeddings_in_cone", embeds);
    out.put("cone_orbits_in_cone", images);
    out.put("variation_bound_stated_holds", stated);
    out.put("variation_bound_corrected_holds", corrected);
    out.check("operator_no_growth", ob.max_slope() <= 0.01);
    out.check("operator_within_bounds", ob.within_bounds(1e-9));
    out.check("cone_embeddings", embeds == e.cone_instances);
    out.check("cone_images", images == e.cone_instances);
    out.check("variation_bound", corrected == e.cone_instances);
    if stated < e.cone_instances {
        out.warnings.push(format!(
            "the xi^alpha-weighted variation bound fails on {} of {} orbits",
            e.cone_instances - stated,
            e.cone_instances
        ));
    }
    out.csv(
        "bounds.csv",
        &["r", "n", "sup_ratio", "alpha_ratio"],
        ob.rows
            .iter()
            .map(|r| vec![r.r, r.n as f64, r.sup_ratio, r.alpha_ratio]),
    );
    out.csv(
        "cone.csv",
        &[
            "instance",
            "n",
            "in_cone",
            "variation",
            "sup_norm",
            "stated_bound",
            "corrected_bound",
        ],
        cone_rows,
    );
    Ok(out)
}

fn encoding(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.encoding;
    let sampler = ctx.sampler()?;
    let mut rows = Vec::new();
    for d in 0..e.draws as u64 {
        let mut rng = stream_rng(derive_seed(ctx.seed(), R_ENCODING), d);
        let n = rng.random_range(1..=e.n_max.max(1));
        let r: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-e.r_max..=e.r_max))
            .collect();
        rows.push(encoding_check(
            &ctx.engine,
            sampler,
            &r,
            ctx.cfg.numerics.eps0,
            e.n_base_samples,
            derive_seed(ctx.seed(), d),
        )?);
    }
    // deterministic identity for the perturbed iterates, against the preimage-tree oracle
    let bank = ctx.engine.bank();
    let g = &ctx.spec.observable;
    let u = |z: f64| Complex64::new(1.0 + 0.3 * (TAU * z).sin(), 0.2 * (TAU * z).cos());
    let mut identity = Vec::new();
    for d in 0..e.draws as u64 {
        let mut rng = stream_rng(derive_seed(ctx.seed(), R_IDENTITY), d);
        let n = rng.random_range(1..=e.n_max.max(1));
        let r: Vec<f64> = (0..n)
            .map(|_| rng.random_range(-e.r_max..=e.r_max))
            .collect();
        let x = sample_base(&ctx.spec.base, derive_seed(ctx.seed(), X_IDENTITY), d)?;
        let chain = ctx.engine.chain(&x, 0, n as i64)?;
        identity.push(perturbed_chain_identity_check(
            bank,
            &x,
            &u,
            &r,
            chain.lambdas_from(0),
            g,
        )?);
    }
    let grid_max = identity.iter().map(|c| c.discrepancy).fold(0.0, f64::max);
    let oracle_max = identity
        .iter()
        .map(|c| c.oracle_discrepancy)
        .fold(0.0, f64::max);
    let mut out = Outcome::default();
    out.put("identity", &identity);
    out.put("identity_grid_discrepancy", grid_max);
    out.put("identity_oracle_discrepancy", oracle_max);
    out.check("identity_exact_routes", oracle_max <= 1e-8);
    // 1e-8 at N = 1024, scaled by the interpolation order
    let budget = 1e-8 * (1024.0 / bank.n_points() as f64).powf(bank.interp().order());
    out.put("identity_grid_budget", budget);
    out.check(
        "identity_grid_within_interpolation_budget",
        grid_max <= budget,
    );
    let modulus_ok = rows
        .iter()
        .all(|r| r.lhs.modulus() <= 1.0 + 1e-12 && r.rhs.modulus() <= 1.0 + 1e-9);
    out.check("identity_within_error", rows.iter().all(|r| r.within));
    out.check("modulus_at_most_one", modulus_ok);
    out.csv(
        "encoding.csv",
        &[
            "draw",
            "n",
            "lhs_re",
            "lhs_im",
            "rhs_re",
            "rhs_im",
            "difference",
            "combined_std_err",
        ],
        rows.iter().enumerate().map(|(d, r)| {
            vec![
                d as f64,
                r.r.len() as f64,
                r.lhs.re,
                r.lhs.im,
                r.rhs.re,
                r.rhs.im,
                r.difference,
                r.combined_std_err,
            ]
        }),
    );
    out.put("draws", &rows);
    Ok(out)
}

fn condition_h(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.condition_h;
    let eps0 = ctx.cfg.numerics.eps0;
    let rep = condition_h_check(
        &ctx.engine,
        &e.block,
        &e.k_list,
        eps0,
        e.n_base_samples,
        ctx.seed(),
    )?;
    let zero = BlockConfig {
        frequencies: vec![0.0; e.block.frequencies.len()],
        ..e.block.clone()
    };
    let control = condition_h_check(
        &ctx.engine,
        &zero,
        &e.k_list,
        eps0,
        (e.n_base_samples / 10).max(20),
        ctx.seed(),
    )?;
    let zero_max = control
        .rows
        .iter()
        .map(|r| r.difference)
        .fold(0.0, f64::max);
    // reference rate from the spectral gap fit
    let g = &ctx.cfg.experiment.gap;
    let xs = ctx.points(X_GAP, g.instances)?;
    let mut rng = stream_rng(derive_seed(ctx.seed(), U_GAP), 0);
    let us: Vec<TestFunction> = (0..g.instances)
        .map(|_| TestFunction::PiecewiseLinear(PiecewiseLinear::random(&mut rng, g.knots)))
        .collect();
    let kappa = gap_estimate(&ctx.engine, &xs, &us, g.n_max)?.kappa;
    let mut out = Outcome::default();
    let fitted = rep.fit_source != FitSource::None && rep.c_hat.is_finite();
    out.put("c_hat", fitted.then_some(rep.c_hat));
    out.put("r_squared", fitted.then_some(rep.r_squared));
    out.put("fit_source", rep.fit_source);
    out.put("noise_dominated", rep.noise_dominated);
    out.put("gap_rate", -kappa.ln());
    out.put(
        "c_hat_over_gap_rate",
        fitted.then(|| rep.c_hat / -kappa.ln()),
    );
    out.put("zero_frequency_max_difference", zero_max);
    out.put("block", &e.block);
    out.put("n_base_samples", e.n_base_samples);
    out.check("c_hat_positive", fitted && rep.c_hat > 0.0);
    out.check("zero_frequencies_exact", zero_max <= 1e-12);
    out.check(
        "difference_at_most_two",
        rep.rows.iter().all(|r| r.difference <= 2.0),
    );
    if rep.noise_dominated {
        out.warnings
            .push("all differences are within two standard errors of zero".into());
    }
    out.csv(
        "condition_h.csv",
        &[
            "k",
            "difference",
            "std_err",
            "gap_component",
            "base_component",
        ],
        rep.rows.iter().map(|r| {
            vec![
                r.k as f64,
                r.difference,
                r.std_err,
                r.gap_component,
                r.base_component,
            ]
        }),
    );
    Ok(out)
}

fn assumption6(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.assumption6;
    let p = Assumption6Params {
        n_list: e.n_list.clone(),
        n_draws: e.n_draws,
        r_max: e.r_max,
        n_pairs: e.n_pairs,
        max_depth: e.max_depth,
        beta: e.beta,
        eps0: ctx.cfg.numerics.eps0,
        seed: ctx.seed(),
    };
    let rep = assumption6_check(&ctx.engine, &p)?;
    let mut out = Outcome::default();
    out.put("spread", &rep.spread);
    out.put("max_spread", rep.max_spread);
    out.put("slope", rep.slope);
    out.put("two_sided_slope", rep.two_sided_slope);
    out.check("uniform_within_factor_two", rep.uniform_within(2.0));
    out.check(
        "modulus_at_most_one",
        rep.rows.iter().all(|r| r.sup_norm <= 1.0 + 1e-9),
    );
    out.csv(
        "assumption6.csv",
        &[
            "n",
            "draw",
            "sup_norm",
            "variation",
            "holder_norm",
            "two_sided_variation",
        ],
        rep.rows.iter().map(|r| {
            vec![
                r.n as f64,
                r.draw as f64,
                r.sup_norm,
                r.variation,
                r.holder_norm,
                r.two_sided_variation,
            ]
        }),
    );
    Ok(out)
}

fn decay_base(ctx: &Context) -> Result<Outcome, CliError> {
    let e = &ctx.cfg.experiment.decay_base;
    if e.window < 1 {
        return Err(CliError::Config(
            "experiment.decay_base.window must be at least 1".into(),
        ));
    }
    let block = || {
        BaseObservable::new(0, e.window - 1, 1.0, |w| {
            w.iter().all(|&s| s == 0) as u8 as f64
        })
    };
    let table = base_correlation_check(
        &ctx.spec.base,
        &block(),
        &block(),
        &e.lags,
        e.n_samples,
        derive_seed(ctx.seed(), DECAY),
    )?;
    let disjoint: Vec<_> = table.rows.iter().filter(|r| r.n >= e.window).collect();
    let mut out = Outcome::default();
    out.put("rows", &table.rows);
    out.put("noise_dominated", table.noise_dominated);
    out.put("window", e.window);
    out.check(
        "disjoint_windows_uncorrelated",
        disjoint.iter().all(|r| r.estimate.abs() <= 3.0 * r.std_err),
    );
    out.csv(
        "decay.csv",
        &["n", "estimate", "std_err"],
        table
            .rows
            .iter()
            .map(|r| vec![r.n as f64, r.estimate, r.std_err]),
    );
    Ok(out)
}

fn sigma2(ctx: &Context) -> Result<Outcome, CliError> {
    let sampler = ctx.sampler()?;
    let g = &ctx.spec.observable;
    let st = &ctx.cfg.statistics;
    let v = sigma2_estimate(&ctx.engine, sampler, g, &ctx.variance_params())?;
    let cov = covariance_sequence(
        &ctx.engine,
        sampler,
        g,
        10,
        st.n_base_samples,
        10 * st.trials,
        st.seed,
    )?;
    let stat = stationarity_check(
        &ctx.engine,
        sampler,
        g,
        &[0, 5, 20],
        &[0, 1, 3],
        10 * st.trials,
        st.seed,
    )?;
    let mut out = Outcome::default();
    out.put("sigma2_series", v.sigma2_series);
    out.put("sigma2_series_std_err", v.sigma2_series_std_err);
    out.put("sigma2_mc", v.sigma2_mc);
    out.put("sigma2_mc_std_err", v.sigma2_mc_std_err);
    out.put("agreement", v.agreement);
    out.put("m", v.m);
    out.put("tail", v.tail);
    out.put("truncated", v.truncated);
    out.put("mu_hat", v.mu_hat);
    out.put("n_var", v.n_var);
    out.put("trials", v.trials);
    out.put("covariance_decay_rate", cov.decay_rate);
    out.put("stationarity", &stat.rows);
    out.check("agreement", v.agreement);
    out.check("s0_nonnegative", v.s[0] >= 0.0);
    out.check("routes_agree", cov.all_agree);
    out.check("stationarity", stat.consistent);
    if v.truncated {
        out.warnings.push(format!(
            "|s_M| = {} at M = {} is above the tail tolerance",
            v.tail, v.m
        ));
    }
    out.csv(
        "series.csv",
        &["m", "s", "std_err"],
        v.s.iter()
            .zip(&v.s_std_err)
            .enumerate()
            .map(|(m, (s, e))| vec![m as f64, *s, *e]),
    );
    out.csv(
        "covariances.csv",
        &[
            "m",
            "route_a",
            "route_a_std_err",
            "route_b",
            "route_b_std_err",
        ],
        cov.rows.iter().map(|r| {
            vec![
                r.m as f64,
                r.route_a,
                r.route_a_std_err,
                r.route_b,
                r.route_b_std_err,
            ]
        }),
    );
    Ok(out)
}

fn clt(ctx: &Context) -> Result<Outcome, CliError> {
    let sampler = ctx.sampler()?;
    let g = &ctx.spec.observable;
    let st = &ctx.cfg.statistics;
    let floor = ctx.cfg.numerics.sigma2_floor;
    let vp = ctx.variance_params();
    let a = sigma2_series(&ctx.engine, g, &vp)?;
    let center = ctx.center(g, a.mu_hat);
    let rep = clt_test(
        &ctx.engine,
        sampler,
        g,
        a.sigma2,
        center,
        st.n,
        st.trials,
        floor,
        st.seed,
    )?;
    let g2 = g.scaled(2.0);
    let a2 = sigma2_series(&ctx.engine, &g2, &vp)?;
    let rep2 = clt_test(
        &ctx.engine,
        sampler,
        &g2,
        a2.sigma2,
        ctx.center(&g2, a2.mu_hat),
        st.n,
        st.trials,
        floor,
        st.seed,
    )?;
    let ratio = a2.sigma2 / a.sigma2;
    let mut out = Outcome::default();
    out.put("sigma2", a.sigma2);
    out.put("sigma2_std_err", a.sigma2_std_err);
    out.put("mu_hat", center);
    out.put("status", rep.status);
    out.put("ks_stat", rep.ks_stat);
    out.put("p_value", rep.p_value);
    out.put("n", st.n);
    out.put("trials", st.trials);
    out.put("sample_mean", rep.sample_mean);
    out.put("sample_variance", rep.sample_variance);
    out.put("skewness", rep.skewness);
    out.put("excess_kurtosis", rep.excess_kurtosis);
    out.put("birkhoff_mean", rep.birkhoff_mean);
    out.put("birkhoff_mean_std_err", rep.birkhoff_mean_std_err);
    out.put("scaled_sigma2_ratio", ratio.is_finite().then_some(ratio));
    out.put("scaled_p_value", rep2.p_value);
    match rep.status {
        CltStatus::Tested => {
            out.check("p_value_above_0_01", rep.p_value.is_some_and(|p| p > 0.01));
            out.check("scale_equivariance", (ratio - 4.0).abs() <= 0.4);
            out.check(
                "scaled_p_value_above_0_01",
                rep2.p_value.is_some_and(|p| p > 0.01),
            );
        }
        CltStatus::Degenerate => out.warnings.push(format!(
            "sigma2 = {} is at or below the floor {floor}; run the coboundary check instead",
            a.sigma2
        )),
    }
    out.csv(
        "samples.csv",
        &["trial", "value"],
        rep.samples
            .iter()
            .enumerate()
            .map(|(i, v)| vec![i as f64, *v]),
    );
    out.csv(
        "histogram.csv",
        &["bin_center", "empirical_density", "gaussian_density"],
        histogram(
            &rep.samples,
            a.sigma2.max(0.0),
            ctx.cfg.experiment.clt.histogram_bins,
        ),
    );
    Ok(out)
}

/// Density histogram of `samples` beside the `N(0, σ²)` density.
fn histogram(samples: &[f64], sigma2: f64, bins: usize) -> Vec<Vec<f64>> {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if bins == 0 || !(hi > lo) {
        return Vec::new();
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &s in samples {
        counts[(((s - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let total = samples.len() as f64;
    counts
        .iter()
        .enumerate()
        .map(|(b, &c)| {
            let z = lo + (b as f64 + 0.5) * width;
            let gauss = if sigma2 > 0.0 {
                (-z * z / (2.0 * sigma2)).exp() / (std::f64::consts::TAU * sigma2).sqrt()
            } else {
                0.0
            };
            vec![z, c as f64 / (total * width), gauss]
        })
        .collect()
}

fn lil(ctx: &Context) -> Result<Outcome, CliError> {
    let sampler = ctx.sampler()?;
    let g = &ctx.spec.observable;
    let e = &ctx.cfg.experiment.lil;
    let floor = ctx.cfg.numerics.sigma2_floor;
    let a = sigma2_series(&ctx.engine, g, &ctx.variance_params())?;
    let center = ctx.center(g, a.mu_hat);
    let rep = lil_probe(
        &ctx.engine,
        sampler,
        g,
        a.sigma2,
        center,
        e.n_max,
        e.trials,
        floor,
        ctx.seed(),
    )?;
    let mut out = Outcome::default();
    out.put("sigma2", a.sigma2);
    out.put("mu_hat", center);
    out.put("terminal_median", rep.terminal_median);
    out.put("k_min", rep.k_min);
    out.put("n_max", e.n_max);
    out.put("trials", e.trials);
    if a.sigma2 > floor {
        out.check(
            "terminal_median_in_range",
            (0.5..=1.5).contains(&rep.terminal_median),
        );
    } else {
        out.warnings
            .push("sigma2 below the floor; the normalization uses the floor".into());
    }
    out.csv(
        "lil.csv",
        &["n", "median_running_max", "median_statistic"],
        rep.checkpoints
            .iter()
            .zip(rep.median.iter().zip(&rep.pointwise_median))
            .map(|(n, (m, p))| vec![*n as f64, *m, *p]),
    );
    Ok(out)
}

fn coboundary(ctx: &Context) -> Result<Outcome, CliError> {
    let sampler = ctx.sampler()?;
    let e = &ctx.cfg.experiment.coboundary;
    let floor = ctx.cfg.numerics.sigma2_floor;
    let vp = ctx.variance_params();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let cases = [
        ("coboundary", Observable::coboundary(e.value)),
        ("system", ctx.spec.observable.clone()),
    ];
    for (label, g) in &cases {
        let a = sigma2_series(&ctx.engine, g, &vp)?;
        let center = ctx.center(g, a.mu_hat);
        let rep = coboundary_check(
            &ctx.engine,
            sampler,
            g,
            center,
            &e.n_list,
            e.trials,
            ctx.seed(),
        )?;
        for r in &rep.rows {
            rows.push((label.to_string(), r.n, r.l2_norm, r.quarter_ratio));
        }
        let expected = if a.sigma2 <= floor {
            Verdict::CoboundaryConsistent
        } else {
            Verdict::NotCoboundary
        };
        out.put(
            label,
            json!({
                "sigma2": a.sigma2,
                "center": center,
                "verdict": rep.verdict,
                "sup_l2": rep.sup_l2,
                "l2_slope": rep.l2_slope,
                "quarter_slope": rep.quarter_slope,
            }),
        );
        out.check(
            &format!("{label}_verdict_matches_sigma2"),
            rep.verdict == expected,
        );
        if *label == "coboundary" {
            out.check("coboundary_sigma2_small", a.sigma2 <= 0.01);
        }
    }
    out.put("n_list", &e.n_list);
    out.put("trials", e.trials);
    let mut text = String::from("observable,n,l2_norm,quarter_ratio\n");
    for (l, n, a, b) in rows {
        text.push_str(&format!("{l},{n},{a},{b}\n"));
    }
    out.csvs.push(("coboundary.csv".into(), text));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_integrates_to_one() {
        let samples: Vec<f64> = (0..1000).map(|i| (i as f64 / 999.0) - 0.5).collect();
        let h = histogram(&samples, 0.1, 10);
        let width = h[1][0] - h[0][0];
        let mass: f64 = h.iter().map(|r| r[1] * width).sum();
        assert!((mass - 1.0).abs() < 1e-12);
        assert!(histogram(&[1.0, 1.0], 0.1, 10).is_empty());
    }

    #[test]
    fn unknown_subcommand_is_an_error() {
        let mut cfg = ExperimentConfig::default();
        cfg.numerics.grid_points = 32;
        let ctx = Context::new(cfg).unwrap();
        assert!(run_subcommand(&ctx, "nope").is_err());
    }
}
