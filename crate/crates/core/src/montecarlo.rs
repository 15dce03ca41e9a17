//! Monte Carlo experiments: estimator comparison, bootstrap inference
//! accuracy, size and power of the portmanteau test, and the efficiency of
//! the weighted quantile regression.
//!
//! Replicate `i` simulates from `derive_seed(spec.seed, i)`; every method and
//! every weight law inside a replicate sees the same series. Failed
//! replicates are logged and replaced by the next index until `reps`
//! successes are collected.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{forecast_with, Method, MethodOptions};
use crate::bootstrap::{summarize, Bootstrapper, WeightLaw};
use crate::diagnostics::{portmanteau_test, DEFAULT_MAX_LAG};
use crate::error::{Error, Result};
use crate::garch::{simulate_path, GarchParams, InnovationLaw, Orders, SimulatedPath, DEFAULT_BURN_IN};
use crate::hybrid::fit_hybrid_with_qmle;
use crate::qmle::{self, QmleOptions};
use crate::rng::{derive_seed, stream_rng};
use crate::series::transform;
use crate::stats;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub params: GarchParams,
    pub innovation: InnovationLaw,
    pub n: usize,
    pub reps: usize,
    pub tau: f64,
    pub methods: Vec<Method>,
    /// Bootstrap replicates per Monte Carlo replicate.
    pub b: usize,
    pub laws: Vec<WeightLaw>,
    pub max_lag: usize,
    pub seed: u64,
    pub burn_in: usize,
    /// Orders of the fitted model (may differ from the simulated one).
    pub fit_orders: Orders,
    /// Nominal level of the portmanteau test.
    pub level: f64,
    pub method_options: MethodOptions,
}

impl ExperimentSpec {
    /// Desk-scale defaults: 200 replicates, B = 300, all three weight laws,
    /// K = 6, GARCH(1,1) fit.
    pub fn new(params: GarchParams, innovation: InnovationLaw, n: usize, tau: f64) -> Self {
        ExperimentSpec {
            params,
            innovation,
            n,
            reps: 200,
            tau,
            methods: Method::COMPARISON.to_vec(),
            b: 300,
            laws: WeightLaw::ALL.to_vec(),
            max_lag: DEFAULT_MAX_LAG,
            seed: 20_240_601,
            burn_in: DEFAULT_BURN_IN,
            fit_orders: Orders::garch11(),
            level: 0.05,
            method_options: MethodOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 {
            return Err(Error::InvalidInput("reps must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau = {} must lie in (0, 1)", self.tau)));
        }
        if self.n < 2 {
            return Err(Error::InvalidInput(format!("n = {} is too small", self.n)));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::InvalidInput(format!("level = {} must lie in (0, 1)", self.level)));
        }
        Ok(())
    }

    fn simulate(&self, seed: u64) -> Result<SimulatedPath> {
        simulate_path(&self.params, self.innovation, self.n, self.burn_in, &mut stream_rng(seed, 0))
    }

    /// True `theta_tau = T(Q_eta(tau)) * theta`, defined when the fitted and
    /// simulated orders agree.
    pub fn true_theta_tau(&self) -> Option<Vec<f64>> {
        (self.params.orders() == self.fit_orders).then(|| {
            let b = transform(self.innovation.quantile(self.tau));
            self.params.to_vec().iter().map(|v| b * v).collect()
        })
    }
}

/// Model 1: `(0.1, 0.8, 0.15)`, large volatility.
pub fn model1() -> GarchParams {
    GarchParams::garch11(0.1, 0.8, 0.15).expect("valid")
}

/// Model 2: `(0.1, 0.15, 0.8)`, persistent volatility.
pub fn model2() -> GarchParams {
    GarchParams::garch11(0.1, 0.15, 0.8).expect("valid")
}

/// `h_t = 0.4 + 0.2 x^2_{t-1} + d x^2_{t-4} + 0.2 h_{t-1}`.
pub fn departure_dgp(d: f64) -> Result<GarchParams> {
    if !(d >= 0.0) {
        return Err(Error::InvalidInput(format!("departure d = {d} must be non-negative")));
    }
    GarchParams::new(0.4, vec![0.2, 0.0, 0.0, d], vec![0.2])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplicate {
    pub index: usize,
    pub seed: u64,
    pub error: String,
}

/// Runs `f(index, seed)` until `reps` successes, in index order.
fn run_replicates<T, F>(spec: &ExperimentSpec, f: F) -> Result<(Vec<T>, Vec<FailedReplicate>)>
where
    T: Send,
    F: Fn(usize, u64) -> Result<T> + Sync,
{
    spec.validate()?;
    let max_attempts = 2 * spec.reps + 20;
    let mut done = Vec::with_capacity(spec.reps);
    let mut failures = Vec::new();
    let mut next = 0usize;
    while done.len() < spec.reps && next < max_attempts {
        let batch = (spec.reps - done.len()).min(max_attempts - next);
        let results: Vec<(usize, u64, Result<T>)> = (next..next + batch)
            .into_par_iter()
            .map(|i| {
                let seed = derive_seed(spec.seed, i as u64);
                (i, seed, f(i, seed))
            })
            .collect();
        next += batch;
        for (index, seed, r) in results {
            match r {
                Ok(v) => done.push(v),
                Err(e) => failures.push(FailedReplicate {
                    index,
                    seed,
                    error: e.to_string(),
                }),
            }
        }
    }
    if done.len() < spec.reps {
        return Err(Error::ExperimentFailure {
            succeeded: done.len(),
            wanted: spec.reps,
            attempted: next,
            first: failures.first().map(|f| f.error.clone()).unwrap_or_default(),
        });
    }
    Ok((done, failures))
}

// ---------------------------------------------------------------- comparison

/// Error summaries for one method. Biases and MSEs are averaged over time
/// points within a replicate, then over replicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub bias_in: f64,
    pub mse_in: f64,
    /// Population variance of all pooled in-sample errors.
    pub var_in: f64,
    pub bias_out: f64,
    pub mse_out: f64,
    pub var_out: f64,
    /// Replicate-level in-sample MSEs (for spread diagnostics).
    pub mse_in_by_rep: Vec<f64>,
    pub out_errors: Vec<f64>,
    /// Replicates where an iterative optimiser hit its budget.
    pub unconverged: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub spec: ExperimentSpec,
    pub stats: Vec<MethodStats>,
    pub failures: Vec<FailedReplicate>,
    pub elapsed_secs: f64,
}

impl ComparisonResult {
    pub fn method(&self, m: Method) -> Option<&MethodStats> {
        self.stats.iter().find(|s| s.method == m)
    }
}

struct ReplicateErrors {
    in_errors: Vec<Vec<f64>>,
    out_error: Vec<f64>,
    converged: Vec<bool>,
}

pub fn run_comparison(spec: &ExperimentSpec) -> Result<ComparisonResult> {
    if spec.methods.is_empty() {
        return Err(Error::InvalidInput("no methods to compare".into()));
    }
    let start = Instant::now();
    let q_eta = spec.innovation.quantile(spec.tau);
    let (reps, failures) = run_replicates(spec, |_, seed| {
        let path = spec.simulate(seed)?;
        let truth: Vec<f64> = path.h.iter().map(|h| q_eta * h.sqrt()).collect();
        let truth_next = q_eta * path.h_next.sqrt();
        let mut options = spec.method_options;
        options.orders.get_or_insert(spec.fit_orders);
        options.caviar.seed = derive_seed(seed, 1);
        let mut out = ReplicateErrors {
            in_errors: Vec::new(),
            out_error: Vec::new(),
            converged: Vec::new(),
        };
        for &m in &spec.methods {
            let f = forecast_with(m, &path.series, spec.tau, &options).map_err(|e| {
                Error::InvalidInput(format!("{m}: {e}"))
            })?;
            out.in_errors.push(f.in_sample_q.iter().zip(&truth).map(|(a, b)| a - b).collect());
            out.out_error.push(f.next_q - truth_next);
            out.converged.push(f.converged);
        }
        Ok(out)
    })?;

    let stats = spec
        .methods
        .iter()
        .enumerate()
        .map(|(k, &method)| {
            let mse_in_by_rep: Vec<f64> = reps.iter().map(|r| mean_square(&r.in_errors[k])).collect();
            let bias_in = stats::mean(&reps.iter().map(|r| stats::mean(&r.in_errors[k])).collect::<Vec<_>>());
            let pooled: Vec<f64> = reps.iter().flat_map(|r| r.in_errors[k].iter().copied()).collect();
            let out_errors: Vec<f64> = reps.iter().map(|r| r.out_error[k]).collect();
            MethodStats {
                method,
                bias_in,
                mse_in: stats::mean(&mse_in_by_rep),
                var_in: stats::variance_pop(&pooled),
                bias_out: stats::mean(&out_errors),
                mse_out: mean_square(&out_errors),
                var_out: stats::variance_pop(&out_errors),
                mse_in_by_rep,
                out_errors,
                unconverged: reps.iter().filter(|r| !r.converged[k]).count(),
            }
        })
        .collect();
    Ok(ComparisonResult {
        spec: spec.clone(),
        stats,
        failures,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

fn mean_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64
}

// ---------------------------------------------------------------- inference

/// Bias, empirical SD and bootstrap ("asymptotic") SD of one estimated
/// quantity; `asd[i]` belongs to `spec.laws[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentStats {
    pub name: String,
    #[serde(with = "crate::report::nonfinite")]
    pub truth: f64,
    #[serde(with = "crate::report::nonfinite")]
    pub bias: f64,
    pub esd: f64,
    pub asd: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub spec: ExperimentSpec,
    /// Components of `theta_tau`.
    pub params: Vec<ComponentStats>,
    /// Residual QACF at lags `1..=K` (truth 0).
    pub qacf: Vec<ComponentStats>,
    /// Coverage of the percentile CI for the next conditional quantile at
    /// `1 - level`, per law.
    pub next_q_coverage: Vec<f64>,
    pub failures: Vec<FailedReplicate>,
    pub elapsed_secs: f64,
}

struct InferenceReplicate {
    theta: Vec<f64>,
    r: Vec<f64>,
    asd_theta: Vec<Vec<f64>>,
    asd_r: Vec<Vec<f64>>,
    covered: Vec<bool>,
}

pub fn parameter_names(orders: Orders) -> Vec<String> {
    let mut names = vec!["alpha0".to_string()];
    names.extend((1..=orders.q).map(|i| format!("alpha{i}")));
    names.extend((1..=orders.p).map(|j| format!("beta{j}")));
    names
}

pub fn run_inference_study(spec: &ExperimentSpec) -> Result<InferenceResult> {
    if spec.laws.is_empty() {
        return Err(Error::InvalidInput("at least one weight law is required".into()));
    }
    let start = Instant::now();
    let q_eta = spec.innovation.quantile(spec.tau);
    let (reps, failures) = run_replicates(spec, |_, seed| {
        let path = spec.simulate(seed)?;
        let qfit = qmle::fit(&path.series, spec.fit_orders, &spec.method_options.bounds, &QmleOptions::default())?;
        let fit = fit_hybrid_with_qmle(&path.series, qfit, spec.tau, true)?;
        let boot = Bootstrapper::new(&path.series, &fit, spec.max_lag)?;
        let root_n = (spec.n as f64).sqrt();
        let truth_next = q_eta * path.h_next.sqrt();
        let mut rep = InferenceReplicate {
            theta: fit.qparams.theta_tau.clone(),
            r: boot.r().to_vec(),
            asd_theta: Vec::new(),
            asd_r: Vec::new(),
            covered: Vec::new(),
        };
        for (l, &law) in spec.laws.iter().enumerate() {
            let ens = boot.run_sequential(spec.b, law, derive_seed(seed, 10 + l as u64))?;
            let summary = summarize(&ens);
            let (lo, hi) = summary.next_quantile_ci(1.0 - spec.level);
            rep.covered.push(lo <= truth_next && truth_next <= hi);
            rep.asd_theta.push(summary.asd);
            rep.asd_r.push(
                (0..spec.max_lag)
                    .map(|k| {
                        let col: Vec<f64> = ens.replicates.iter().map(|x| x.t_stat[k]).collect();
                        stats::std_dev(&col) / root_n
                    })
                    .collect(),
            );
        }
        Ok(rep)
    })?;

    let truth = spec
        .true_theta_tau()
        .unwrap_or_else(|| vec![f64::NAN; spec.fit_orders.dim()]);
    let component = |name: String, truth: f64, values: Vec<f64>, asd: Vec<f64>| ComponentStats {
        name,
        truth,
        bias: stats::mean(&values) - truth,
        esd: stats::std_dev(&values),
        asd,
    };
    let nl = spec.laws.len();
    let params = parameter_names(spec.fit_orders)
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            let values = reps.iter().map(|r| r.theta[j]).collect();
            let asd = (0..nl)
                .map(|l| stats::mean(&reps.iter().map(|r| r.asd_theta[l][j]).collect::<Vec<_>>()))
                .collect();
            component(name, truth[j], values, asd)
        })
        .collect();
    let qacf = (0..spec.max_lag)
        .map(|k| {
            let values = reps.iter().map(|r| r.r[k]).collect();
            let asd = (0..nl)
                .map(|l| stats::mean(&reps.iter().map(|r| r.asd_r[l][k]).collect::<Vec<_>>()))
                .collect();
            component(format!("r{}", k + 1), 0.0, values, asd)
        })
        .collect();
    let next_q_coverage = (0..nl)
        .map(|l| reps.iter().filter(|r| r.covered[l]).count() as f64 / reps.len() as f64)
        .collect();
    Ok(InferenceResult {
        spec: spec.clone(),
        params,
        qacf,
        next_q_coverage,
        failures,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------- size/power

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub law: WeightLaw,
    pub rejections: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizePowerResult {
    pub spec: ExperimentSpec,
    pub rates: Vec<RejectionRate>,
    pub failures: Vec<FailedReplicate>,
    pub elapsed_secs: f64,
}

impl SizePowerResult {
    pub fn rate(&self, law: WeightLaw) -> Option<f64> {
        self.rates.iter().find(|r| r.law == law).map(|r| r.rate)
    }
}

/// Rejection rates of `Q(K)` at `spec.level`, fitting `spec.fit_orders`
/// whatever the simulated model.
pub fn run_size_power(spec: &ExperimentSpec) -> Result<SizePowerResult> {
    if spec.laws.is_empty() {
        return Err(Error::InvalidInput("at least one weight law is required".into()));
    }
    let start = Instant::now();
    let (reps, failures) = run_replicates(spec, |_, seed| {
        let path = spec.simulate(seed)?;
        let qfit = qmle::fit(&path.series, spec.fit_orders, &spec.method_options.bounds, &QmleOptions::default())?;
        let fit = fit_hybrid_with_qmle(&path.series, qfit, spec.tau, true)?;
        let boot = Bootstrapper::new(&path.series, &fit, spec.max_lag)?;
        spec.laws
            .iter()
            .enumerate()
            .map(|(l, &law)| {
                let ens = boot.run_sequential(spec.b, law, derive_seed(seed, 10 + l as u64))?;
                Ok(portmanteau_test(boot.r(), &ens)?.rejects(spec.level))
            })
            .collect::<Result<Vec<bool>>>()
    })?;
    let rates = spec
        .laws
        .iter()
        .enumerate()
        .map(|(l, &law)| {
            let rejections = reps.iter().filter(|r| r[l]).count();
            RejectionRate {
                law,
                rejections,
                rate: rejections as f64 / reps.len() as f64,
            }
        })
        .collect();
    Ok(SizePowerResult {
        spec: spec.clone(),
        rates,
        failures,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------- efficiency

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyResult {
    pub spec: ExperimentSpec,
    #[serde(with = "crate::report::nonfinite::vec")]
    pub truth: Vec<f64>,
    /// One row per replicate.
    pub weighted: Vec<Vec<f64>>,
    pub unweighted: Vec<Vec<f64>>,
    pub iqr_weighted: Vec<f64>,
    pub iqr_unweighted: Vec<f64>,
    pub median_weighted: Vec<f64>,
    pub median_unweighted: Vec<f64>,
    pub failures: Vec<FailedReplicate>,
    pub elapsed_secs: f64,
}

/// Weighted against unweighted quantile regression on a shared QMLE stage.
pub fn run_efficiency(spec: &ExperimentSpec) -> Result<EfficiencyResult> {
    let start = Instant::now();
    let (reps, failures) = run_replicates(spec, |_, seed| {
        let path = spec.simulate(seed)?;
        let qfit = qmle::fit(&path.series, spec.fit_orders, &spec.method_options.bounds, &QmleOptions::default())?;
        let w = fit_hybrid_with_qmle(&path.series, qfit.clone(), spec.tau, true)?;
        let u = fit_hybrid_with_qmle(&path.series, qfit, spec.tau, false)?;
        Ok((w.qparams.theta_tau, u.qparams.theta_tau))
    })?;
    let (weighted, unweighted): (Vec<_>, Vec<_>) = reps.into_iter().unzip();
    let d = spec.fit_orders.dim();
    let col = |rows: &[Vec<f64>], j: usize| rows.iter().map(|r| r[j]).collect::<Vec<_>>();
    let per = |rows: &[Vec<f64>], f: fn(&[f64]) -> f64| (0..d).map(|j| f(&col(rows, j))).collect::<Vec<_>>();
    let median = |xs: &[f64]| stats::quantile_type7(xs, 0.5);
    Ok(EfficiencyResult {
        truth: spec
            .true_theta_tau()
            .unwrap_or_else(|| vec![f64::NAN; d]),
        iqr_weighted: per(&weighted, stats::iqr),
        iqr_unweighted: per(&unweighted, stats::iqr),
        median_weighted: per(&weighted, median),
        median_unweighted: per(&unweighted, median),
        weighted,
        unweighted,
        spec: spec.clone(),
        failures,
        elapsed_secs: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------- presets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Table1a,
    Table1b,
    Table2,
    Table3,
    Table4,
    Fig3,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Table1a,
        Preset::Table1b,
        Preset::Table2,
        Preset::Table3,
        Preset::Table4,
        Preset::Fig3,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Preset::Table1a => "table1a",
            Preset::Table1b => "table1b",
            Preset::Table2 => "table2",
            Preset::Table3 => "table3",
            Preset::Table4 => "table4",
            Preset::Fig3 => "fig3",
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown preset '{s}'")))
    }
}

/// Overrides applied to a preset's designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetOptions {
    /// Multiplies the desk-scale replicate count (at least one replicate,
    /// two for studies that need a spread).
    pub scale: f64,
    pub b: Option<usize>,
    pub seed: u64,
    pub sizes: Option<Vec<usize>>,
    pub taus: Option<Vec<f64>>,
}

impl Default for PresetOptions {
    fn default() -> Self {
        PresetOptions {
            scale: 1.0,
            b: None,
            seed: 20_240_601,
            sizes: None,
            taus: None,
        }
    }
}

/// A delimiter-separated result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_delimited(&self, sep: char) -> String {
        let mut out = format!("# {}\n", self.title);
        let join = |cells: &[String]| cells.join(&sep.to_string());
        out.push_str(&join(&self.header));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&join(row));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetReport {
    pub preset: Preset,
    pub options: PresetOptions,
    pub tables: Vec<Table>,
    pub comparison: Vec<ComparisonResult>,
    pub inference: Vec<InferenceResult>,
    pub size_power: Vec<SizePowerResult>,
    pub efficiency: Vec<EfficiencyResult>,
}

fn innovations() -> Result<[(&'static str, InnovationLaw); 2]> {
    Ok([
        ("normal", InnovationLaw::StandardNormal),
        ("t5", InnovationLaw::student_t(5.0)?),
    ])
}

fn fmt3(x: f64) -> String {
    format!("{x:.3}")
}

pub fn run_preset(preset: Preset, options: &PresetOptions) -> Result<PresetReport> {
    if !(options.scale > 0.0 && options.scale.is_finite()) {
        return Err(Error::InvalidInput(format!("scale = {} must be positive", options.scale)));
    }
    let reps = |base: usize, min: usize| ((base as f64 * options.scale).round() as usize).max(min);
    let sizes = |default: &[usize]| options.sizes.clone().unwrap_or_else(|| default.to_vec());
    let taus = |default: &[f64]| options.taus.clone().unwrap_or_else(|| default.to_vec());
    let mut report = PresetReport {
        preset,
        options: options.clone(),
        tables: Vec::new(),
        comparison: Vec::new(),
        inference: Vec::new(),
        size_power: Vec::new(),
        efficiency: Vec::new(),
    };
    let base = |params: GarchParams, law: InnovationLaw, n: usize, tau: f64, r: usize, salt: u64| {
        let mut s = ExperimentSpec::new(params, law, n, tau);
        s.reps = r;
        s.seed = derive_seed(options.seed, salt);
        if let Some(b) = options.b {
            s.b = b;
        }
        s
    };

    match preset {
        Preset::Table1a | Preset::Table1b => {
            let params = if preset == Preset::Table1a { model1() } else { model2() };
            let mut table = Table {
                title: format!(
                    "{preset}: bias (x10) and MSE of conditional quantile estimates, tau = {}",
                    taus(&[0.05])[0]
                ),
                header: ["n", "innovation", "method", "bias_in_x10", "bias_out_x10", "mse_in", "mse_out"]
                    .map(String::from)
                    .to_vec(),
                rows: Vec::new(),
            };
            let mut salt = 0;
            for n in sizes(&[200, 500, 1000]) {
                for (lname, law) in innovations()? {
                    for tau in taus(&[0.05]) {
                        salt += 1;
                        let spec = base(params.clone(), law, n, tau, reps(200, 1), salt);
                        let res = run_comparison(&spec)?;
                        for s in &res.stats {
                            table.rows.push(vec![
                                n.to_string(),
                                lname.into(),
                                s.method.to_string(),
                                fmt3(10.0 * s.bias_in),
                                fmt3(10.0 * s.bias_out),
                                fmt3(s.mse_in),
                                fmt3(s.mse_out),
                            ]);
                        }
                        report.comparison.push(res);
                    }
                }
            }
            report.tables.push(table);
        }
        Preset::Table2 | Preset::Table3 => {
            let params = GarchParams::garch11(0.4, 0.4, 0.4)?;
            let laws = WeightLaw::ALL;
            let mut header: Vec<String> = ["n", "tau", "innovation", "quantity", "bias_x10", "esd"]
                .map(String::from)
                .to_vec();
            header.extend(laws.iter().map(|l| format!("asd_{}", l.short_name())));
            let title = if preset == Preset::Table2 {
                "table2: bias (x10), ESD and ASD of the weighted estimator"
            } else {
                "table3: bias (x10), ESD (x10) and ASD (x10) of the residual QACF"
            };
            let mut table = Table {
                title: title.into(),
                header,
                rows: Vec::new(),
            };
            let mut salt = 100;
            for n in sizes(&[500, 1000, 2000]) {
                for tau in taus(&[0.1, 0.25]) {
                    for (lname, law) in innovations()? {
                        salt += 1;
                        let mut spec = base(params.clone(), law, n, tau, reps(200, 2), salt);
                        spec.laws = laws.to_vec();
                        let res = run_inference_study(&spec)?;
                        let (rows, scale): (Vec<&ComponentStats>, f64) = if preset == Preset::Table2 {
                            (res.params.iter().collect(), 1.0)
                        } else {
                            (res.qacf.iter().filter(|c| matches!(c.name.as_str(), "r2" | "r4" | "r6")).collect(), 10.0)
                        };
                        for c in rows {
                            let mut row = vec![
                                n.to_string(),
                                tau.to_string(),
                                lname.into(),
                                c.name.clone(),
                                fmt3(10.0 * c.bias),
                                fmt3(scale * c.esd),
                            ];
                            row.extend(c.asd.iter().map(|a| fmt3(scale * a)));
                            table.rows.push(row);
                        }
                        report.inference.push(res);
                    }
                }
            }
            report.tables.push(table);
        }
        Preset::Table4 => {
            let laws = WeightLaw::ALL;
            let mut header: Vec<String> = ["n", "tau", "innovation", "d"].map(String::from).to_vec();
            header.extend(laws.iter().map(|l| format!("reject_pct_{}", l.short_name())));
            let mut table = Table {
                title: "table4: rejection rates (%) of Q(6) at the 5% level".into(),
                header,
                rows: Vec::new(),
            };
            let mut salt = 200;
            for n in sizes(&[500, 1000, 2000]) {
                for tau in taus(&[0.1, 0.25]) {
                    for (lname, law) in innovations()? {
                        for d in [0.0, 0.3, 0.6] {
                            salt += 1;
                            let spec = base(departure_dgp(d)?, law, n, tau, reps(200, 1), salt);
                            let res = run_size_power(&spec)?;
                            let mut row = vec![n.to_string(), tau.to_string(), lname.into(), d.to_string()];
                            row.extend(res.rates.iter().map(|r| format!("{:.1}", 100.0 * r.rate)));
                            table.rows.push(row);
                            report.size_power.push(res);
                        }
                    }
                }
            }
            report.tables.push(table);
        }
        Preset::Fig3 => {
            let models = [
                ("a", GarchParams::garch11(0.4, 0.2, 0.2)?),
                ("b", GarchParams::garch11(0.4, 0.2, 0.6)?),
            ];
            let mut table = Table {
                title: "fig3: weighted vs unweighted estimator (median and IQR)".into(),
                header: [
                    "model", "innovation", "tau", "component", "truth", "median_w", "iqr_w", "median_u", "iqr_u",
                ]
                .map(String::from)
                .to_vec(),
                rows: Vec::new(),
            };
            let mut salt = 300;
            for (mname, params) in models {
                for (lname, law) in innovations()? {
                    for tau in taus(&[0.1, 0.25]) {
                        salt += 1;
                        let n = sizes(&[2000])[0];
                        let spec = base(params.clone(), law, n, tau, reps(200, 2), salt);
                        let res = run_efficiency(&spec)?;
                        for (j, name) in parameter_names(spec.fit_orders).into_iter().enumerate() {
                            table.rows.push(vec![
                                mname.into(),
                                lname.into(),
                                tau.to_string(),
                                name,
                                fmt3(res.truth[j]),
                                fmt3(res.median_weighted[j]),
                                fmt3(res.iqr_weighted[j]),
                                fmt3(res.median_unweighted[j]),
                                fmt3(res.iqr_unweighted[j]),
                            ]);
                        }
                        report.efficiency.push(res);
                    }
                }
            }
            report.tables.push(table);
        }
    }
    Ok(report)
}

/// Box-plot data for the efficiency study: one row per replicate and
/// estimator, `(replicate, estimator, components...)`.
pub fn efficiency_plot_rows(res: &EfficiencyResult) -> Vec<(usize, &'static str, Vec<f64>)> {
    let mut rows = Vec::with_capacity(2 * res.weighted.len());
    for (i, (w, u)) in res.weighted.iter().zip(&res.unweighted).enumerate() {
        rows.push((i, "weighted", w.clone()));
        rows.push((i, "unweighted", u.clone()));
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(params: GarchParams, n: usize, reps: usize) -> ExperimentSpec {
        let mut s = ExperimentSpec::new(params, InnovationLaw::StandardNormal, n, 0.05);
        s.reps = reps;
        s.seed = 5;
        s
    }

    #[test]
    fn zero_replications_is_a_spec_error() {
        let s = small(model1(), 300, 0);
        assert!(matches!(run_comparison(&s), Err(Error::InvalidInput(_))));
        assert!(matches!(run_inference_study(&s), Err(Error::InvalidInput(_))));
        assert!(matches!(run_size_power(&s), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn single_replicate_is_reproducible() {
        let mut s = small(model2(), 300, 1);
        s.methods = vec![Method::Hybrid, Method::RiskMetrics, Method::QGarch1];
        let a = run_comparison(&s).unwrap();
        let b = run_comparison(&s).unwrap();
        assert_eq!(a.stats, b.stats);
        assert_eq!(a.failures, b.failures);
    }

    #[test]
    fn aggregation_identity_holds_per_cell() {
        let mut s = small(model1(), 400, 6);
        s.methods = vec![Method::Hybrid, Method::RiskMetrics, Method::QGarch2];
        let res = run_comparison(&s).unwrap();
        for c in &res.stats {
            assert!((c.mse_in - (c.bias_in * c.bias_in + c.var_in)).abs() < 1e-10 * (1.0 + c.mse_in));
            assert!((c.mse_out - (c.bias_out * c.bias_out + c.var_out)).abs() < 1e-10 * (1.0 + c.mse_out));
            assert_eq!(c.mse_in_by_rep.len(), 6);
        }
    }

    #[test]
    fn riskmetrics_cell_matches_direct_computation() {
        let mut s = small(model1(), 250, 3);
        s.methods = vec![Method::RiskMetrics];
        let res = run_comparison(&s).unwrap();
        let q = normal_q(0.05);
        let mut bias = 0.0;
        for i in 0..3u64 {
            let path = s.simulate(derive_seed(s.seed, i)).unwrap();
            let f = crate::baselines::riskmetrics(&path.series, 0.05).unwrap();
            let e: Vec<f64> = f.in_sample_q.iter().zip(&path.h).map(|(a, h)| a - q * h.sqrt()).collect();
            bias += stats::mean(&e) / 3.0;
        }
        assert!((res.stats[0].bias_in - bias).abs() < 1e-12);
    }

    fn normal_q(tau: f64) -> f64 {
        stats::normal_quantile(tau)
    }

    #[test]
    fn true_theta_tau_scales_parameters() {
        let s = small(GarchParams::garch11(0.4, 0.4, 0.4).unwrap(), 500, 1);
        let t = s.true_theta_tau().unwrap();
        let b = -normal_q(0.05).powi(2);
        assert!((t[0] - 0.4 * b).abs() < 1e-12 && (t[2] - 0.4 * b).abs() < 1e-12);
        let mut mis = small(departure_dgp(0.3).unwrap(), 500, 1);
        mis.fit_orders = Orders::garch11();
        assert!(mis.true_theta_tau().is_none());
    }

    #[test]
    fn departure_dgp_layout() {
        let p = departure_dgp(0.6).unwrap();
        assert_eq!(p.alpha, vec![0.2, 0.0, 0.0, 0.6]);
        assert_eq!(p.beta, vec![0.2]);
        assert!(departure_dgp(-0.1).is_err());
    }

    #[test]
    fn inference_and_size_runs_are_shaped() {
        let mut s = small(GarchParams::garch11(0.4, 0.4, 0.4).unwrap(), 400, 3);
        s.tau = 0.1;
        s.b = 30;
        let inf = run_inference_study(&s).unwrap();
        assert_eq!(inf.params.len(), 3);
        assert_eq!(inf.qacf.len(), 6);
        assert!(inf.params.iter().all(|c| c.asd.len() == 3 && c.asd.iter().all(|a| *a > 0.0)));
        assert_eq!(inf.next_q_coverage.len(), 3);

        let mut sp = s.clone();
        sp.params = departure_dgp(0.0).unwrap();
        sp.laws = vec![WeightLaw::Exponential];
        let res = run_size_power(&sp).unwrap();
        assert_eq!(res.rates.len(), 1);
        assert!(res.rates[0].rate >= 0.0 && res.rates[0].rate <= 1.0);
    }

    #[test]
    fn efficiency_records_both_estimators() {
        let mut s = small(GarchParams::garch11(0.4, 0.2, 0.2).unwrap(), 500, 4);
        s.tau = 0.25;
        let res = run_efficiency(&s).unwrap();
        assert_eq!(res.weighted.len(), 4);
        assert_eq!(res.iqr_unweighted.len(), 3);
        assert_eq!(efficiency_plot_rows(&res).len(), 8);
    }

    #[test]
    fn preset_names_and_tables() {
        for p in Preset::ALL {
            assert_eq!(p.name().parse::<Preset>().unwrap(), p);
        }
        let opts = PresetOptions {
            scale: 0.01,
            b: Some(20),
            sizes: Some(vec![300]),
            taus: Some(vec![0.1]),
            ..Default::default()
        };
        let rep = run_preset(Preset::Table4, &opts).unwrap();
        assert_eq!(rep.tables[0].rows.len(), 6);
        assert_eq!(rep.tables[0].header.len(), 7);
        let text = rep.tables[0].to_delimited(',');
        assert!(text.starts_with("# table4"));
        assert_eq!(text.lines().count(), 8);
    }
}
