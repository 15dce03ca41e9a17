//! Rolling one-step-ahead quantile forecasts and empirical coverage rates.
//!
//! The origin at position `t` (0-based) uses observations `..t` (expanding)
//! or the last `start_index` of them (fixed) and forecasts `x_t`. A violation
//! is `x_t < forecast`; the empirical coverage rate (ECR) is violations over
//! forecasts made. Origins whose fit fails are skipped and excluded from the
//! denominator.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{default_sieve_order, forecast_with, Method, MethodOptions, CAVIAR_MIN_LEN};
use crate::bootstrap::{summarize, Bootstrapper, WeightLaw};
use crate::diagnostics::DEFAULT_MAX_LAG;
use crate::error::{Error, Result};
use crate::garch::Orders;
use crate::hybrid::fit_hybrid;
use crate::rng::derive_seed;
use crate::series::ReturnSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Window {
    #[default]
    Expanding,
    /// Always the most recent `start_index` observations.
    Fixed,
}

impl FromStr for Window {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "expanding" => Ok(Window::Expanding),
            "fixed" | "rolling" => Ok(Window::Fixed),
            other => Err(Error::InvalidInput(format!("unknown window '{other}'"))),
        }
    }
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Expanding => "expanding",
            Window::Fixed => "fixed",
        })
    }
}

/// Inclusive ISO date range (`YYYY-MM-DD`, compared lexicographically).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subperiod {
    pub label: String,
    pub from: String,
    pub to: String,
}

impl Subperiod {
    pub fn new(label: &str, from: &str, to: &str) -> Self {
        Subperiod {
            label: label.into(),
            from: from.into(),
            to: to.into(),
        }
    }

    pub fn contains(&self, date: &str) -> bool {
        let d = date.get(..10).unwrap_or(date);
        self.from.as_str() <= d && d <= self.to.as_str()
    }
}

/// The four evaluation windows of the 2010–2016 index study.
pub fn default_subperiods() -> Vec<Subperiod> {
    vec![
        Subperiod::new("2010-2011", "2010-01-01", "2011-12-31"),
        Subperiod::new("2012-2013", "2012-01-01", "2013-12-31"),
        Subperiod::new("2014-2015", "2014-01-01", "2015-12-31"),
        Subperiod::new("2016", "2016-01-01", "9999-12-31"),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CiSpec {
    pub b: usize,
    pub law: WeightLaw,
    pub level: f64,
    pub seed: u64,
}

impl Default for CiSpec {
    fn default() -> Self {
        CiSpec {
            b: 300,
            law: WeightLaw::Exponential,
            level: 0.95,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestSpec {
    pub window: Window,
    /// Size of the first estimation sample; the first forecast is for
    /// position `start_index`.
    pub start_index: usize,
    pub tau: f64,
    pub method: Method,
    /// Bootstrap bands for the hybrid methods.
    pub ci: Option<CiSpec>,
    pub subperiods: Vec<Subperiod>,
    pub options: MethodOptions,
}

impl BacktestSpec {
    pub fn new(method: Method, tau: f64, start_index: usize) -> Self {
        BacktestSpec {
            window: Window::Expanding,
            start_index,
            tau,
            method,
            ci: None,
            subperiods: Vec::new(),
            options: MethodOptions::default(),
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau = {} must lie in (0, 1)", self.tau)));
        }
        let min = min_estimation_len(self.method, self.options.orders.unwrap_or_else(Orders::garch11));
        if self.start_index < min {
            return Err(Error::InvalidInput(format!(
                "start index {} is below the minimum estimation length {min} for {}",
                self.start_index, self.method
            )));
        }
        if self.start_index >= n {
            return Err(Error::InvalidInput(format!(
                "start index {} leaves no origin in a series of length {n}",
                self.start_index
            )));
        }
        if self.ci.is_some() && !matches!(self.method, Method::Hybrid | Method::HybridUnweighted) {
            return Err(Error::InvalidInput(format!("confidence bands are only available for the hybrid method, not {}", self.method)));
        }
        Ok(())
    }
}

/// Smallest estimation sample a method accepts.
pub fn min_estimation_len(method: Method, orders: Orders) -> usize {
    match method {
        Method::Hybrid | Method::HybridUnweighted => 10 * orders.dim() + 1,
        Method::QGarch1 | Method::QGarch2 => (2..).find(|&n| n > 4 * default_sieve_order(n)).expect("rule eventually holds"),
        Method::Caviar => CAVIAR_MIN_LEN,
        Method::RiskMetrics => 2,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OriginForecast {
    /// Position of the forecast observation.
    pub index: usize,
    pub date: Option<String>,
    pub forecast: f64,
    pub actual: f64,
    pub ci: Option<(f64, f64)>,
}

impl OriginForecast {
    pub fn violated(&self) -> bool {
        self.actual < self.forecast
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedOrigin {
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodEcr {
    pub label: String,
    pub forecasts: usize,
    pub violations: usize,
    #[serde(with = "crate::report::nonfinite")]
    pub ecr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacktestReport {
    pub spec: BacktestSpec,
    pub forecasts: Vec<OriginForecast>,
    pub skipped: Vec<SkippedOrigin>,
    /// Positions where the realised return fell below the forecast.
    pub violations: Vec<usize>,
    #[serde(with = "crate::report::nonfinite")]
    pub ecr: f64,
    pub subperiods: Vec<PeriodEcr>,
}

/// Violations over forecasts; `NaN` when nothing was forecast.
pub fn ecr(forecasts: &[f64], actual: &[f64]) -> f64 {
    let n = forecasts.len().min(actual.len());
    if n == 0 {
        return f64::NAN;
    }
    forecasts.iter().zip(actual).filter(|(f, x)| x < f).count() as f64 / n as f64
}

/// Runs the rolling protocol with `forecaster(window, t)` returning the
/// forecast for position `t` and an optional band.
pub fn backtest_with<F>(series: &ReturnSeries, spec: &BacktestSpec, forecaster: F) -> Result<BacktestReport>
where
    F: Fn(&ReturnSeries, usize) -> Result<(f64, Option<(f64, f64)>)> + Sync,
{
    let n = series.len();
    spec.validate(n)?;
    if !spec.subperiods.is_empty() && series.dates().is_none() {
        return Err(Error::InvalidInput("subperiods need a dated series".into()));
    }
    let x = series.values();
    let outcomes: Vec<(usize, Result<(f64, Option<(f64, f64)>)>)> = (spec.start_index..n)
        .into_par_iter()
        .map(|t| {
            let lo = match spec.window {
                Window::Expanding => 0,
                Window::Fixed => t - spec.start_index,
            };
            let result = series.slice(lo, t).and_then(|w| forecaster(&w, t)).and_then(|(f, ci)| {
                if f.is_finite() {
                    Ok((f, ci))
                } else {
                    Err(Error::InvalidInput("non-finite forecast".into()))
                }
            });
            (t, result)
        })
        .collect();

    let mut forecasts = Vec::new();
    let mut skipped = Vec::new();
    for (t, r) in outcomes {
        match r {
            Ok((forecast, ci)) => forecasts.push(OriginForecast {
                index: t,
                date: series.dates().map(|d| d[t].clone()),
                forecast,
                actual: x[t],
                ci,
            }),
            Err(e) => skipped.push(SkippedOrigin {
                index: t,
                error: e.to_string(),
            }),
        }
    }
    let violations: Vec<usize> = forecasts.iter().filter(|f| f.violated()).map(|f| f.index).collect();
    let overall = ratio(violations.len(), forecasts.len());
    let subperiods = spec
        .subperiods
        .iter()
        .map(|p| {
            let inside: Vec<&OriginForecast> = forecasts
                .iter()
                .filter(|f| f.date.as_deref().is_some_and(|d| p.contains(d)))
                .collect();
            let v = inside.iter().filter(|f| f.violated()).count();
            PeriodEcr {
                label: p.label.clone(),
                forecasts: inside.len(),
                violations: v,
                ecr: ratio(v, inside.len()),
            }
        })
        .collect();
    Ok(BacktestReport {
        spec: spec.clone(),
        forecasts,
        skipped,
        violations,
        ecr: overall,
        subperiods,
    })
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        f64::NAN
    } else {
        a as f64 / b as f64
    }
}

/// Refits `spec.method` at every origin.
pub fn backtest(series: &ReturnSeries, spec: &BacktestSpec) -> Result<BacktestReport> {
    let orders = spec.options.orders.unwrap_or_else(Orders::garch11);
    backtest_with(series, spec, |window, t| {
        let mut options = spec.options;
        options.caviar.seed = derive_seed(options.caviar.seed, t as u64);
        match spec.ci {
            Some(ci) => {
                let weighted = spec.method == Method::Hybrid;
                let fit = fit_hybrid(window, orders, spec.tau, weighted, &options.bounds)?;
                let boot = Bootstrapper::new(window, &fit, DEFAULT_MAX_LAG.min((window.len() - 1) / 4).max(1))?;
                let ens = boot.run_sequential(ci.b, ci.law, derive_seed(ci.seed, t as u64))?;
                Ok((fit.next_q, Some(summarize(&ens).next_quantile_ci(ci.level))))
            }
            None => Ok((forecast_with(spec.method, window, spec.tau, &options)?.next_q, None)),
        }
    })
}

/// How often each method attains the ECR closest to the nominal level,
/// over every report group (e.g. one per level and period). Ties credit
/// every tied method.
pub fn best_ecr_tally(groups: &[Vec<(Method, f64, f64)>]) -> Vec<(Method, usize)> {
    let mut tally: Vec<(Method, usize)> = Vec::new();
    for group in groups {
        let gaps: Vec<(Method, f64)> = group
            .iter()
            .filter(|(_, ecr, _)| ecr.is_finite())
            .map(|(m, ecr, tau)| (*m, (ecr - tau).abs()))
            .collect();
        let best = gaps.iter().map(|g| g.1).fold(f64::INFINITY, f64::min);
        for (m, _, _) in group {
            if !tally.iter().any(|(t, _)| t == m) {
                tally.push((*m, 0));
            }
        }
        for (m, gap) in gaps {
            if gap <= best + 1e-12 {
                if let Some(entry) = tally.iter_mut().find(|(t, _)| *t == m) {
                    entry.1 += 1;
                }
            }
        }
    }
    tally
}

/// Groups several reports into `(method, ecr, tau)` triples per level and
/// period (overall first, then each subperiod in order).
pub fn ecr_groups(reports: &[BacktestReport]) -> Vec<Vec<(Method, f64, f64)>> {
    let mut taus: Vec<f64> = reports.iter().map(|r| r.spec.tau).collect();
    taus.sort_by(f64::total_cmp);
    taus.dedup();
    let periods = reports.iter().map(|r| r.subperiods.len()).max().unwrap_or(0);
    let mut groups = Vec::new();
    for tau in taus {
        let same: Vec<&BacktestReport> = reports.iter().filter(|r| r.spec.tau == tau).collect();
        groups.push(same.iter().map(|r| (r.spec.method, r.ecr, tau)).collect());
        for p in 0..periods {
            groups.push(
                same.iter()
                    .filter_map(|r| r.subperiods.get(p).map(|s| (r.spec.method, s.ecr, tau)))
                    .collect(),
            );
        }
    }
    groups
}

/// Plot rows `(date or index, return, forecast, lower, upper)`.
pub fn plot_rows(report: &BacktestReport) -> Vec<(String, f64, f64, Option<(f64, f64)>)> {
    report
        .forecasts
        .iter()
        .map(|f| {
            (
                f.date.clone().unwrap_or_else(|| f.index.to_string()),
                f.actual,
                f.forecast,
                f.ci,
            )
        })
        .collect()
}
