//! Comparator conditional-quantile estimators: RiskMetrics, the sieve-based
//! QGARCH1/QGARCH2 estimators and the indirect-GARCH CAViaR.
//!
//! Every estimator returns forecasts on the same grid as the hybrid fit:
//! `in_sample_q[t]` estimates the quantile of `x_{t+1}` given the first `t`
//! observations and `next_q` the one-step-ahead quantile.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{Orders, ThetaBox};
use crate::hybrid::{fit_hybrid, quantile_stage};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::quantreg::{self, check_loss, dot, Design, QrProblem};
use crate::rng::stream_rng;
use crate::series::{inverse_transform, ReturnSeries};
use crate::stats::{normal_quantile, quantile_type7};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Hybrid,
    HybridUnweighted,
    QGarch1,
    QGarch2,
    Caviar,
    RiskMetrics,
}

impl Method {
    /// The five estimators of the comparison study, in table order.
    pub const COMPARISON: [Method; 5] = [
        Method::Hybrid,
        Method::QGarch1,
        Method::QGarch2,
        Method::Caviar,
        Method::RiskMetrics,
    ];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Hybrid => "Hybrid",
            Method::HybridUnweighted => "HybridUnweighted",
            Method::QGarch1 => "QGARCH1",
            Method::QGarch2 => "QGARCH2",
            Method::Caviar => "CAViaR",
            Method::RiskMetrics => "RiskM",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hybrid" => Ok(Method::Hybrid),
            "hybrid-unweighted" | "hybridunweighted" | "unweighted" => Ok(Method::HybridUnweighted),
            "qgarch1" => Ok(Method::QGarch1),
            "qgarch2" => Ok(Method::QGarch2),
            "caviar" => Ok(Method::Caviar),
            "riskm" | "riskmetrics" => Ok(Method::RiskMetrics),
            other => Err(Error::InvalidInput(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineForecast {
    pub method: Method,
    pub in_sample_q: Vec<f64>,
    pub next_q: f64,
    /// False when an iterative optimiser stopped on its budget.
    pub converged: bool,
    /// Method-specific fitted coefficients (empty for RiskMetrics).
    pub params: Vec<f64>,
}

// ---------------------------------------------------------------- RiskMetrics

pub const RISKMETRICS_ALPHA: f64 = 0.06;
pub const RISKMETRICS_BETA: f64 = 0.94;

/// Starting value of the RiskMetrics recursion.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum RiskMetricsInit {
    /// `h_1 = x_1^2`.
    #[default]
    FirstSquare,
    /// `h_1 = n^-1 sum x_t^2`.
    MeanSquare,
    Fixed(f64),
}

pub fn riskmetrics(series: &ReturnSeries, tau: f64) -> Result<BaselineForecast> {
    riskmetrics_with(series, tau, RiskMetricsInit::default())
}

pub fn riskmetrics_with(series: &ReturnSeries, tau: f64, init: RiskMetricsInit) -> Result<BaselineForecast> {
    check_tau(tau)?;
    let x = series.values();
    if x.len() < 2 {
        return Err(Error::InvalidInput("RiskMetrics needs at least 2 observations".into()));
    }
    let h1 = match init {
        RiskMetricsInit::FirstSquare => x[0] * x[0],
        RiskMetricsInit::MeanSquare => series.mean_square(),
        RiskMetricsInit::Fixed(v) if v.is_finite() && v >= 0.0 => v,
        RiskMetricsInit::Fixed(v) => {
            return Err(Error::InvalidInput(format!("initial variance {v} must be non-negative")))
        }
    };
    let z = normal_quantile(tau);
    let mut h = h1;
    let mut in_sample_q = Vec::with_capacity(x.len());
    for &xt in x {
        in_sample_q.push(h.sqrt() * z);
        h = RISKMETRICS_ALPHA * xt * xt + RISKMETRICS_BETA * h;
    }
    Ok(BaselineForecast {
        method: Method::RiskMetrics,
        in_sample_q,
        next_q: h.sqrt() * z,
        converged: true,
        params: Vec::new(),
    })
}

// ---------------------------------------------------------------- QGARCH

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SieveVariant {
    /// One sieve regression at the target level.
    SingleTau,
    /// Sieve regressions at `i/20`, `i = 1..19`, combined by minimum distance.
    MultiTau,
}

/// How the sieve output is turned into quantile forecasts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SieveMode {
    /// Sieve volatilities replace the QMLE step; the GARCH(1,1) quantile
    /// regression then runs on them.
    #[default]
    Proxy,
    /// Back-transform the sieve quantile regression of `y_t` directly.
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SieveConfig {
    /// Sieve order; `None` selects `ceil(3 n^{1/4})`.
    pub m: Option<usize>,
    pub mode: SieveMode,
    /// Lower bound on the scale-free (unit-mean) volatility proxy. A sieve
    /// predictor near zero would otherwise receive an enormous `1/h` weight.
    pub proxy_floor: f64,
    /// Quantile regression of the second stage uses `1/h` weights.
    pub weighted: bool,
}

impl Default for SieveConfig {
    fn default() -> Self {
        SieveConfig {
            m: None,
            mode: SieveMode::Proxy,
            proxy_floor: 0.1,
            weighted: true,
        }
    }
}

impl SieveConfig {
    pub fn with_order(m: usize) -> Self {
        SieveConfig {
            m: Some(m),
            ..Default::default()
        }
    }

    pub fn order_for(&self, n: usize) -> usize {
        self.m.unwrap_or_else(|| default_sieve_order(n))
    }
}

pub fn default_sieve_order(n: usize) -> usize {
    (3.0 * (n as f64).powf(0.25)).ceil() as usize
}

/// Design with rows `(1, x^2_{t-1}, ..., x^2_{t-m})`; pre-sample squares at
/// the sample mean of `x_t^2`. Row `n` is the one-step-ahead regressor.
pub fn sieve_design(series: &ReturnSeries, m: usize) -> (Design, Vec<f64>) {
    let x2 = series.squares();
    let init = series.mean_square();
    let n = x2.len();
    let row = |t: usize| -> Vec<f64> {
        let mut r = Vec::with_capacity(m + 1);
        r.push(1.0);
        for j in 1..=m {
            r.push(if t >= j { x2[t - j] } else { init });
        }
        r
    };
    let mut data = Vec::with_capacity(n * (m + 1));
    for t in 0..n {
        data.extend(row(t));
    }
    let design = Design::from_row_major(n, m + 1, data).expect("dimensions are consistent");
    (design, row(n))
}

fn sieve_qr(y: &[f64], design: &Design, tau: f64, m: usize, hint: &[usize]) -> Result<quantreg::QrSolution> {
    let problem = QrProblem::unweighted(y.to_vec(), design.clone(), tau)?;
    quantreg::solve_from(&problem, hint).map_err(|e| match e {
        Error::RankDeficient { .. } | Error::Unbounded => Error::SingularSieve { m },
        other => other,
    })
}

/// Levels `i/20`, `i = 1..19`.
pub fn multi_tau_levels() -> Vec<f64> {
    (1..20).map(|i| i as f64 / 20.0).collect()
}

/// Minimum-distance fit of `theta_i = b_i gamma` under identity weighting:
/// `gamma` is the leading right singular vector of the stacked coefficient
/// matrix, signed so that its intercept is positive.
pub fn min_distance_direction(coefs: &[Vec<f64>]) -> Vec<f64> {
    let rows = coefs.len();
    let cols = coefs[0].len();
    let m = DMatrix::from_fn(rows, cols, |i, j| coefs[i][j]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let lead = svd
        .singular_values
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let mut gamma: Vec<f64> = (0..cols).map(|j| v_t[(lead, j)]).collect();
    let sign_ref = if gamma[0] != 0.0 { gamma[0] } else { gamma.iter().sum() };
    if sign_ref < 0.0 {
        gamma.iter_mut().for_each(|g| *g = -*g);
    }
    gamma
}

/// QGARCH1 (`SingleTau`) or QGARCH2 (`MultiTau`).
pub fn qgarch_sieve(series: &ReturnSeries, tau: f64, config: &SieveConfig, variant: SieveVariant) -> Result<BaselineForecast> {
    check_tau(tau)?;
    let n = series.len();
    let m = config.order_for(n);
    if n <= 4 * m || n < 2 {
        return Err(Error::InvalidInput(format!(
            "sieve order m = {m} needs more than {} observations, got {n}",
            4 * m
        )));
    }
    let method = match variant {
        SieveVariant::SingleTau => Method::QGarch1,
        SieveVariant::MultiTau => Method::QGarch2,
    };
    let y = series.transformed();
    let (design, next_row) = sieve_design(series, m);
    let target = sieve_qr(&y, &design, tau, m, &[])?;

    if m == 0 || config.mode == SieveMode::Direct {
        let coef = match variant {
            SieveVariant::SingleTau => target.coef.clone(),
            SieveVariant::MultiTau if m == 0 => target.coef.clone(),
            SieveVariant::MultiTau => {
                let gamma = multi_tau_direction(&y, &design, m, &target.active_basis)?;
                let b = dot(&target.coef, &gamma);
                gamma.iter().map(|g| b * g).collect()
            }
        };
        let in_sample_q = (0..n).map(|t| inverse_transform(dot(design.row(t), &coef))).collect();
        return Ok(BaselineForecast {
            method,
            in_sample_q,
            next_q: inverse_transform(dot(&next_row, &coef)),
            converged: true,
            params: coef,
        });
    }

    let predictor = match variant {
        SieveVariant::SingleTau => design.mul_vec(&target.coef),
        SieveVariant::MultiTau => design.mul_vec(&multi_tau_direction(&y, &design, m, &target.active_basis)?),
    };
    let scale = predictor.iter().sum::<f64>() / n as f64;
    if !scale.is_finite() || scale.abs() < 1e-12 * predictor.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE) {
        return Err(Error::SingularSieve { m });
    }
    let floor = config.proxy_floor;
    let proxy: Vec<f64> = predictor.iter().map(|p| (p / scale).max(floor)).collect();

    let orders = Orders::garch11();
    let stage = quantile_stage(series, orders, &proxy, series.mean_square(), 1.0, tau, config.weighted).map_err(|e| match e {
        Error::RankDeficient { .. } => Error::SingularSieve { m },
        other => other,
    })?;
    Ok(BaselineForecast {
        method,
        in_sample_q: stage.in_sample_q,
        next_q: stage.next_q,
        converged: true,
        params: stage.qparams.theta_tau,
    })
}

fn multi_tau_direction(y: &[f64], design: &Design, m: usize, hint: &[usize]) -> Result<Vec<f64>> {
    let mut coefs = Vec::with_capacity(19);
    let mut basis = hint.to_vec();
    for level in multi_tau_levels() {
        let sol = sieve_qr(y, design, level, m, &basis)?;
        basis = sol.active_basis.clone();
        coefs.push(sol.coef);
    }
    Ok(min_distance_direction(&coefs))
}

// ---------------------------------------------------------------- CAViaR

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaviarOptions {
    /// Random parameter vectors evaluated before the local search.
    pub screen_points: usize,
    /// Number of best screened points refined by Nelder–Mead.
    pub starts: usize,
    pub max_evals: usize,
    pub seed: u64,
}

impl Default for CaviarOptions {
    fn default() -> Self {
        CaviarOptions {
            screen_points: 10_000,
            starts: 5,
            max_evals: 3000,
            seed: 0x5eed_ca71,
        }
    }
}

pub const CAVIAR_MIN_LEN: usize = 200;

struct CaviarData<'a> {
    x: &'a [f64],
    tau: f64,
    sign: f64,
    q1: f64,
}

impl CaviarData<'_> {
    fn coefficients(v: &[f64]) -> [f64; 3] {
        [v[0].abs(), v[1].abs(), v[2].abs()]
    }

    /// Quantile path for `t = 1..=n+1`; `None` when `a_2 >= 1`.
    fn path(&self, v: &[f64]) -> Option<Vec<f64>> {
        let a = Self::coefficients(v);
        if a[2] >= 1.0 {
            return None;
        }
        let mut q = Vec::with_capacity(self.x.len() + 1);
        q.push(self.q1);
        for t in 0..self.x.len() {
            let prev = q[t];
            q.push(self.sign * (a[0] + a[1] * self.x[t] * self.x[t] + a[2] * prev * prev).sqrt());
        }
        Some(q)
    }

    fn objective(&self, v: &[f64]) -> f64 {
        let a = Self::coefficients(v);
        if a[2] >= 1.0 {
            return f64::INFINITY;
        }
        let mut q = self.q1;
        let mut total = check_loss(self.x[0] - q, self.tau);
        for t in 1..self.x.len() {
            let xp = self.x[t - 1];
            q = self.sign * (a[0] + a[1] * xp * xp + a[2] * q * q).sqrt();
            total += check_loss(self.x[t] - q, self.tau);
        }
        total
    }
}

/// Indirect-GARCH(1,1) CAViaR: `q_t = -sqrt(a0 + a1 x_{t-1}^2 + a2 q_{t-1}^2)`
/// for `tau < 0.5` (positive root otherwise), fitted by minimising the check
/// loss with a random screen followed by Nelder–Mead refinement.
pub fn caviar_indirect_garch(series: &ReturnSeries, tau: f64, options: &CaviarOptions) -> Result<BaselineForecast> {
    check_tau(tau)?;
    let x = series.values();
    if x.len() < CAVIAR_MIN_LEN {
        return Err(Error::InvalidInput(format!(
            "CAViaR needs at least {CAVIAR_MIN_LEN} observations, got {}",
            x.len()
        )));
    }
    if options.starts == 0 {
        return Err(Error::InvalidInput("CAViaR needs at least one start".into()));
    }
    let q1 = quantile_type7(&x[..x.len().min(300)], tau);
    let data = CaviarData {
        x,
        tau,
        sign: if tau < 0.5 { -1.0 } else { 1.0 },
        q1,
    };

    // Screen scale: q_t^2 behaves like h_t times the squared innovation
    // quantile, so a1 is drawn relative to q1^2 / mean(x^2).
    let msq = series.mean_square().max(f64::MIN_POSITIVE);
    let level = (q1 * q1).max(1e-6 * msq);
    let ratio = level / msq;
    let mut rng = stream_rng(options.seed, 0);
    let mut screened: Vec<(f64, [f64; 3])> = Vec::with_capacity(options.screen_points + 1);
    let mut push = |v: [f64; 3]| screened.push((data.objective(&v), v));
    push([0.05 * level, 0.1 * ratio, 0.85]);
    for _ in 0..options.screen_points {
        let a2: f64 = rng.random_range(0.0..0.999);
        let a1: f64 = rng.random_range(0.0..1.0) * ratio;
        let a0: f64 = rng.random_range(0.0..2.0) * level * (1.0 - a2);
        push([a0, a1, a2]);
    }
    screened.sort_by(|a, b| a.0.total_cmp(&b.0));

    let nm = NelderMeadOptions {
        max_evals: options.max_evals,
        ftol: 1e-10,
        xtol: 1e-9 * level.max(1.0),
    };
    let mut best: Option<(f64, Vec<f64>, bool)> = None;
    for (_, v0) in screened.iter().take(options.starts) {
        let step: Vec<f64> = v0.iter().map(|v| if *v != 0.0 { 0.1 * v } else { 0.01 }).collect();
        let min = nelder_mead(|v| data.objective(v), v0, &step, &nm);
        if best.as_ref().is_none_or(|b| min.f < b.0) {
            best = Some((min.f, min.x, min.converged));
        }
    }
    let (_, v, converged) = best.expect("at least one start");
    let a = CaviarData::coefficients(&v);
    let mut q = data.path(&v).expect("finite optimum has a2 < 1");
    let next_q = q.pop().expect("path has n+1 points");
    Ok(BaselineForecast {
        method: Method::Caviar,
        in_sample_q: q,
        next_q,
        converged,
        params: a.to_vec(),
    })
}

/// Check loss of the CAViaR model at coefficients `a` (entries are used in
/// absolute value), for comparison against the fitted optimum.
pub fn caviar_objective(series: &ReturnSeries, tau: f64, a: &[f64]) -> f64 {
    let x = series.values();
    let data = CaviarData {
        x,
        tau,
        sign: if tau < 0.5 { -1.0 } else { 1.0 },
        q1: quantile_type7(&x[..x.len().min(300)], tau),
    };
    data.objective(a)
}

// ---------------------------------------------------------------- dispatch

/// Settings shared by [`forecast_with`] across methods.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MethodOptions {
    pub orders: Option<Orders>,
    pub bounds: ThetaBox,
    pub sieve: SieveConfig,
    pub caviar: CaviarOptions,
    pub riskmetrics_init: RiskMetricsInit,
}

/// Runs one estimator and returns its forecasts in the common format.
pub fn forecast_with(method: Method, series: &ReturnSeries, tau: f64, options: &MethodOptions) -> Result<BaselineForecast> {
    match method {
        Method::Hybrid | Method::HybridUnweighted => {
            let weighted = method == Method::Hybrid;
            let orders = options.orders.unwrap_or_else(Orders::garch11);
            let fit = fit_hybrid(series, orders, tau, weighted, &options.bounds)?;
            Ok(BaselineForecast {
                method,
                in_sample_q: fit.in_sample_q,
                next_q: fit.next_q,
                converged: fit.qmle.converged,
                params: fit.qparams.theta_tau,
            })
        }
        Method::QGarch1 => qgarch_sieve(series, tau, &options.sieve, SieveVariant::SingleTau),
        Method::QGarch2 => qgarch_sieve(series, tau, &options.sieve, SieveVariant::MultiTau),
        Method::Caviar => caviar_indirect_garch(series, tau, &options.caviar),
        Method::RiskMetrics => riskmetrics_with(series, tau, options.riskmetrics_init),
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("tau = {tau} must lie in (0, 1)")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::{simulate_path, GarchParams, InnovationLaw};
    use crate::stats::kendall_tau;

    fn sim(params: &GarchParams, n: usize, seed: u64) -> crate::garch::SimulatedPath {
        simulate_path(params, InnovationLaw::StandardNormal, n, 500, &mut stream_rng(seed, 0)).unwrap()
    }

    #[test]
    fn riskmetrics_constant_returns_fixed_point() {
        let c = -0.7;
        let s = ReturnSeries::new(vec![c; 50]).unwrap();
        let f = riskmetrics(&s, 0.05).unwrap();
        let expect = c.abs() * normal_quantile(0.05);
        for q in f.in_sample_q.iter().chain([&f.next_q]) {
            assert!((q - expect).abs() < 1e-12);
        }
        assert!((RISKMETRICS_ALPHA / (1.0 - RISKMETRICS_BETA) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn riskmetrics_median_is_zero_and_recursion_is_fixed() {
        let s = ReturnSeries::new(vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let f = riskmetrics(&s, 0.5).unwrap();
        assert!(f.in_sample_q.iter().all(|q| *q == 0.0) && f.next_q == 0.0);

        let g = riskmetrics(&s, 0.05).unwrap();
        let z = normal_quantile(0.05);
        let mut h: f64 = 1.0;
        let mut want = vec![];
        for x in [1.0, -2.0, 0.5, 3.0] {
            want.push(h.sqrt() * z);
            h = 0.06 * x * x + 0.94 * h;
        }
        for (a, b) in g.in_sample_q.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        assert!((g.next_q - h.sqrt() * z).abs() < 1e-14);
        assert_eq!(riskmetrics(&s, 0.05).unwrap(), g);
    }

    #[test]
    fn riskmetrics_init_options() {
        let s = ReturnSeries::new(vec![2.0, 0.0, 0.0]).unwrap();
        let first = riskmetrics_with(&s, 0.1, RiskMetricsInit::FirstSquare).unwrap();
        let mean = riskmetrics_with(&s, 0.1, RiskMetricsInit::MeanSquare).unwrap();
        let fixed = riskmetrics_with(&s, 0.1, RiskMetricsInit::Fixed(4.0)).unwrap();
        assert_eq!(first, fixed);
        assert!((mean.in_sample_q[0] - (4.0f64 / 3.0).sqrt() * normal_quantile(0.1)).abs() < 1e-12);
        assert!(riskmetrics_with(&s, 0.1, RiskMetricsInit::Fixed(-1.0)).is_err());
        assert!(riskmetrics(&ReturnSeries::new(vec![1.0]).unwrap(), 0.1).is_err());
    }

    #[test]
    fn sieve_order_rule() {
        assert_eq!(default_sieve_order(1000), 17);
        assert_eq!(default_sieve_order(500), 15);
        assert_eq!(default_sieve_order(200), 12);
        assert_eq!(default_sieve_order(2000), 21);
    }

    #[test]
    fn sieve_design_layout() {
        let s = ReturnSeries::new(vec![1.0, 2.0, 3.0]).unwrap();
        let (d, next) = sieve_design(&s, 2);
        let init = 14.0 / 3.0;
        assert_eq!(d.row(0), &[1.0, init, init]);
        assert_eq!(d.row(1), &[1.0, 1.0, init]);
        assert_eq!(d.row(2), &[1.0, 4.0, 1.0]);
        assert_eq!(next, vec![1.0, 9.0, 4.0]);
    }

    #[test]
    fn zero_order_sieve_is_empirical_quantile() {
        let p = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let path = sim(&p, 400, 3);
        let cfg = SieveConfig::with_order(0);
        for variant in [SieveVariant::SingleTau, SieveVariant::MultiTau] {
            let f = qgarch_sieve(&path.series, 0.1, &cfg, variant).unwrap();
            let y = path.series.transformed();
            let mut sorted = y.clone();
            sorted.sort_by(f64::total_cmp);
            let k = (0.1 * 400.0f64).ceil() as usize - 1;
            let want = inverse_transform(sorted[k]);
            assert!(f.in_sample_q.iter().all(|q| (q - want).abs() < 1e-12));
            assert!((f.next_q - want).abs() < 1e-12);
        }
    }

    #[test]
    fn sieve_rejects_short_series_and_median() {
        let p = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let path = sim(&p, 60, 4);
        let err = qgarch_sieve(&path.series, 0.05, &SieveConfig::with_order(15), SieveVariant::SingleTau);
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn min_distance_recovers_rank_one_structure() {
        let gamma = [0.6, 0.8, 0.0];
        let coefs: Vec<Vec<f64>> = [-1.5, -0.4, 0.2, 1.1]
            .iter()
            .map(|b| gamma.iter().map(|g| b * g).collect())
            .collect();
        let got = min_distance_direction(&coefs);
        for (a, b) in got.iter().zip(gamma) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    fn true_quantiles(path: &crate::garch::SimulatedPath, tau: f64) -> Vec<f64> {
        let z = normal_quantile(tau);
        path.h.iter().map(|h| h.sqrt() * z).collect()
    }

    #[test]
    fn sieve_ranks_arch1_quantiles() {
        let p = GarchParams::new(0.2, vec![0.5], vec![]).unwrap();
        let path = sim(&p, 2000, 11);
        let truth = true_quantiles(&path, 0.05);
        for variant in [SieveVariant::SingleTau, SieveVariant::MultiTau] {
            for mode in [SieveMode::Proxy, SieveMode::Direct] {
                let cfg = SieveConfig {
                    mode,
                    ..SieveConfig::with_order(3)
                };
                let f = qgarch_sieve(&path.series, 0.05, &cfg, variant).unwrap();
                let k = kendall_tau(&truth, &f.in_sample_q);
                assert!(k > 0.9, "{variant:?} {mode:?}: kendall {k}");
            }
        }
    }

    #[test]
    fn qgarch_default_order_runs_on_model1() {
        let p = GarchParams::garch11(0.1, 0.8, 0.15).unwrap();
        let path = sim(&p, 1000, 5);
        let truth = true_quantiles(&path, 0.05);
        for variant in [SieveVariant::SingleTau, SieveVariant::MultiTau] {
            let f = qgarch_sieve(&path.series, 0.05, &SieveConfig::default(), variant).unwrap();
            assert_eq!(f.in_sample_q.len(), 1000);
            assert!(f.in_sample_q.iter().all(|q| q.is_finite()));
            let mse = f.in_sample_q.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 1000.0;
            assert!(mse < 0.5, "{variant:?} mse {mse}");
        }
    }

    #[test]
    fn caviar_constant_magnitude_gives_location_quantile() {
        let x: Vec<f64> = (0..300).map(|t| if t % 3 == 0 { -1.0 } else { 1.0 }).collect();
        let s = ReturnSeries::new(x).unwrap();
        let opts = CaviarOptions {
            screen_points: 2000,
            ..Default::default()
        };
        let f = caviar_indirect_garch(&s, 0.25, &opts).unwrap();
        // any q in [-1, 1) with q below every +1 and above -1 is not optimal;
        // the best constant is -1 (the 0.25-quantile).
        let loss: f64 = f.in_sample_q.iter().zip(s.values()).map(|(q, x)| check_loss(x - q, 0.25)).sum();
        let best_const: f64 = s.values().iter().map(|x| check_loss(x + 1.0, 0.25)).sum();
        assert!(loss <= best_const + 1e-6, "{loss} vs {best_const}");
        assert!(f.in_sample_q.iter().skip(5).all(|q| (q + 1.0).abs() < 0.05));
    }

    #[test]
    fn caviar_beats_random_feasible_points() {
        let p = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let path = sim(&p, 500, 21);
        let f = caviar_indirect_garch(&path.series, 0.05, &CaviarOptions::default()).unwrap();
        let at_opt = caviar_objective(&path.series, 0.05, &f.params);
        let mut rng = stream_rng(99, 1);
        for _ in 0..50 {
            let a = [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..0.999)];
            assert!(at_opt <= caviar_objective(&path.series, 0.05, &a) + 1e-9);
        }
        assert!(f.in_sample_q.iter().all(|q| *q < 0.0) && f.next_q < 0.0);
    }

    #[test]
    fn caviar_requires_length_and_is_deterministic() {
        let p = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let short = sim(&p, 150, 1);
        assert!(caviar_indirect_garch(&short.series, 0.05, &CaviarOptions::default()).is_err());
        let path = sim(&p, 250, 2);
        let opts = CaviarOptions {
            screen_points: 500,
            ..Default::default()
        };
        let a = caviar_indirect_garch(&path.series, 0.95, &opts).unwrap();
        let b = caviar_indirect_garch(&path.series, 0.95, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.in_sample_q.iter().all(|q| *q > 0.0));
    }

    #[test]
    fn dispatch_shares_the_grid() {
        let p = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let path = sim(&p, 300, 8);
        let opts = MethodOptions {
            caviar: CaviarOptions {
                screen_points: 500,
                ..Default::default()
            },
            ..Default::default()
        };
        for m in Method::COMPARISON.iter().chain([&Method::HybridUnweighted]) {
            let f = forecast_with(*m, &path.series, 0.05, &opts).unwrap();
            assert_eq!(f.method, *m);
            assert_eq!(f.in_sample_q.len(), 300);
            assert!(f.next_q.is_finite());
        }
        assert_eq!("qgarch2".parse::<Method>().unwrap(), Method::QGarch2);
        assert!("nope".parse::<Method>().is_err());
    }
}
