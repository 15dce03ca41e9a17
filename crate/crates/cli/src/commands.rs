use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use hybridq_core::backtest::{backtest, default_subperiods, BacktestSpec, CiSpec, Subperiod, Window};
use hybridq_core::baselines::{forecast_with, MethodOptions};
use hybridq_core::bootstrap::{summarize, BootstrapEnsemble, Bootstrapper};
use hybridq_core::diagnostics::{portmanteau_test, qacf, weighted_residuals, DEFAULT_MAX_LAG};
use hybridq_core::garch::{simulate_path, GarchParams, InnovationLaw, Orders, ThetaBox};
use hybridq_core::hybrid::fit_hybrid;
use hybridq_core::montecarlo::{run_preset, Preset, PresetOptions};
use hybridq_core::quantreg::QrStatus;
use hybridq_core::report::{self, ResultKind};
use hybridq_core::rng::stream_rng;
use hybridq_core::series::{read_series_path, write_series, ReturnSeries};
use hybridq_core::{HybridFit, Method, WeightLaw};

use crate::config::{parse_delimiter, Config};
use crate::{
    BacktestArgs, BootArgs, BootstrapArgs, Cli, Command, DiagnoseArgs, FitArgs, ForecastArgs, InputArgs, ModelArgs,
    MonteCarloArgs, SimulateArgs,
};

const DEFAULT_SEED: u64 = 20_240_601;
const DEFAULT_TAU: f64 = 0.05;
const DEFAULT_LEVEL: f64 = 0.95;

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    let workers = match cli.workers {
        Some(w) => Some(w),
        None => cfg.get::<usize>("workers")?,
    };
    if let Some(w) = workers {
        if w == 0 {
            bail!("workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .context("cannot configure the worker pool")?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(&cfg, a),
        Command::Fit(a) => fit(&cfg, a),
        Command::Forecast(a) => forecast(&cfg, a),
        Command::Diagnose(a) => diagnose(&cfg, a),
        Command::Bootstrap(a) => bootstrap(&cfg, a),
        Command::Backtest(a) => run_backtest(&cfg, a),
        Command::Montecarlo(a) => montecarlo(&cfg, a),
    }
}

// ---------------------------------------------------------------- settings

fn delimiter(cfg: &Config, flag: Option<&str>) -> Result<u8> {
    match flag.or(cfg.raw("delimiter")) {
        Some(s) => parse_delimiter(s),
        None => Ok(b','),
    }
}

fn read_input(cfg: &Config, input: &InputArgs) -> Result<ReturnSeries> {
    let delim = delimiter(cfg, input.delimiter.as_deref())?;
    read_series_path(&input.input, delim).with_context(|| format!("reading {}", input.input.display()))
}

pub fn parse_orders(s: &str) -> Result<Orders> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [p, q] = parts.as_slice() else {
        bail!("orders must be given as p,q, got {s:?}");
    };
    let orders = Orders::new(p.parse().context("GARCH order p")?, q.parse().context("ARCH order q")?);
    if orders.q == 0 {
        bail!("the ARCH order q must be at least 1");
    }
    Ok(orders)
}

struct Model {
    orders: Orders,
    tau: f64,
    bounds: ThetaBox,
}

fn model(cfg: &Config, m: &ModelArgs) -> Result<Model> {
    let orders = match m.orders.as_deref().or(cfg.raw("orders")) {
        Some(s) => parse_orders(s)?,
        None => Orders::garch11(),
    };
    let tau = cfg.pick(m.tau, "tau", DEFAULT_TAU)?;
    if !(tau > 0.0 && tau < 1.0) {
        bail!("tau = {tau} must lie in (0, 1)");
    }
    let d = ThetaBox::default();
    let bounds = ThetaBox::new(
        cfg.pick(m.w_lo, "w_lo", d.w_lo)?,
        cfg.pick(m.w_hi, "w_hi", d.w_hi)?,
        cfg.pick(m.rho0, "rho0", d.rho0)?,
    )?;
    Ok(Model { orders, tau, bounds })
}

struct Boot {
    b: usize,
    law: WeightLaw,
    seed: u64,
}

fn boot(cfg: &Config, a: &BootArgs, default_b: usize) -> Result<Boot> {
    let b = cfg.pick(a.b, "B", default_b)?;
    if b < 2 {
        bail!("B must be at least 2");
    }
    let law = match a.weights.as_deref().or(cfg.raw("weights")) {
        Some(s) => s.parse()?,
        None => WeightLaw::Exponential,
    };
    Ok(Boot {
        b,
        law,
        seed: cfg.pick(a.seed, "seed", DEFAULT_SEED)?,
    })
}

fn level(cfg: &Config, flag: Option<f64>) -> Result<f64> {
    let level = cfg.pick(flag, "level", DEFAULT_LEVEL)?;
    if !(level > 0.0 && level < 1.0) {
        bail!("level = {level} must lie in (0, 1)");
    }
    Ok(level)
}

fn method(cfg: &Config, flag: Option<&str>) -> Result<Method> {
    match flag.or(cfg.raw("method")) {
        Some(s) => Ok(s.parse()?),
        None => Ok(Method::Hybrid),
    }
}

fn write<T: Serialize>(path: &Path, kind: ResultKind, data: &T) -> Result<()> {
    report::write_result(path, kind, data).with_context(|| format!("writing {}", path.display()))
}

// ---------------------------------------------------------------- commands

#[derive(Debug, Serialize)]
struct SimulationOutput {
    params: GarchParams,
    innovation: InnovationLaw,
    n: usize,
    burn_in: usize,
    seed: u64,
    returns: Vec<f64>,
    /// True conditional variances `h_1..h_n`.
    h: Vec<f64>,
    h_next: f64,
}

fn simulate(cfg: &Config, a: SimulateArgs) -> Result<()> {
    let params = GarchParams::new(a.alpha0, a.alpha, a.beta)?;
    let innovation = match a.innovation.to_ascii_lowercase().as_str() {
        "normal" => InnovationLaw::StandardNormal,
        "t" | "student-t" => InnovationLaw::student_t(a.df)?,
        other => bail!("unknown innovation law '{other}' (expected normal or t)"),
    };
    let seed = cfg.pick(a.seed, "seed", DEFAULT_SEED)?;
    let path = simulate_path(&params, innovation, a.n, a.burn_in, &mut stream_rng(seed, 0))?;
    write_series(&a.out, &path.series, b',').with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(result) = &a.result {
        let out = SimulationOutput {
            params,
            innovation,
            n: a.n,
            burn_in: a.burn_in,
            seed,
            returns: path.series.values().to_vec(),
            h: path.h,
            h_next: path.h_next,
        };
        write(result, ResultKind::Simulation, &out)?;
    }
    println!("simulated {} observations -> {}", a.n, a.out.display());
    Ok(())
}

#[derive(Debug, Serialize)]
struct FitOutput {
    orders: Orders,
    tau: f64,
    weighted: bool,
    n: usize,
    /// QMLE of the GARCH parameters.
    theta_tilde: Vec<f64>,
    #[serde(serialize_with = "finite_or_null")]
    std_errors: Vec<f64>,
    qmle_converged: bool,
    qmle_iterations: usize,
    qmle_objective: f64,
    /// Quantile-regression coefficients.
    theta_tau: Vec<f64>,
    qr_status: QrStatus,
    next_q: f64,
    /// Residual QACF at lags `1..=K`.
    qacf: Vec<f64>,
}

fn finite_or_null<S: serde::Serializer>(xs: &[f64], s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_seq(xs.iter().map(|x| x.is_finite().then_some(*x)))
}

fn fit_summary(fit: &HybridFit, n: usize, qacf: Vec<f64>) -> FitOutput {
    let qmle = &fit.qmle;
    FitOutput {
        orders: fit.orders,
        tau: fit.tau(),
        weighted: fit.qparams.weighted,
        n,
        theta_tilde: qmle.theta_hat.to_vec(),
        std_errors: qmle.std_errors.clone(),
        qmle_converged: qmle.converged,
        qmle_iterations: qmle.iterations,
        qmle_objective: qmle.objective,
        theta_tau: fit.qparams.theta_tau.clone(),
        qr_status: fit.solution.status,
        next_q: fit.next_q,
        qacf,
    }
}

fn fit(cfg: &Config, a: FitArgs) -> Result<()> {
    let series = read_input(cfg, &a.input)?;
    let m = model(cfg, &a.model)?;
    let k = cfg.pick(a.lags, "K", DEFAULT_MAX_LAG)?;
    let fit = fit_hybrid(&series, m.orders, m.tau, !a.unweighted, &m.bounds)?;
    let r = qacf(&weighted_residuals(&fit, &series)?, m.tau, k)?;
    let out = fit_summary(&fit, series.len(), r);
    write(&a.out, ResultKind::Fit, &out)?;
    println!(
        "{} tau={}: theta~ = {:?}, theta_tau = {:?}, next quantile {:.6}",
        m.orders, m.tau, out.theta_tilde, out.theta_tau, out.next_q
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct ForecastOutput {
    method: Method,
    tau: f64,
    n: usize,
    next_q: f64,
    params: Vec<f64>,
    converged: bool,
    ci: Option<(f64, f64)>,
    level: Option<f64>,
    in_sample_q: Option<Vec<f64>>,
}

fn forecast(cfg: &Config, a: ForecastArgs) -> Result<()> {
    let series = read_input(cfg, &a.input)?;
    let m = model(cfg, &a.model)?;
    let method = method(cfg, a.method.as_deref())?;
    let options = MethodOptions {
        orders: Some(m.orders),
        bounds: m.bounds,
        ..MethodOptions::default()
    };
    let f = forecast_with(method, &series, m.tau, &options)?;
    let (ci, lvl) = if a.ci {
        if !matches!(method, Method::Hybrid | Method::HybridUnweighted) {
            bail!("--ci is only available for the hybrid methods");
        }
        let bt = boot(cfg, &a.boot, 300)?;
        let level = level(cfg, a.level)?;
        let fit = fit_hybrid(&series, m.orders, m.tau, method == Method::Hybrid, &m.bounds)?;
        let ens = Bootstrapper::new(&series, &fit, DEFAULT_MAX_LAG)?.run(bt.b, bt.law, bt.seed)?;
        (Some(summarize(&ens).next_quantile_ci(level)), Some(level))
    } else {
        (None, None)
    };
    let out = ForecastOutput {
        method,
        tau: m.tau,
        n: series.len(),
        next_q: f.next_q,
        params: f.params,
        converged: f.converged,
        ci,
        level: lvl,
        in_sample_q: a.in_sample.then_some(f.in_sample_q),
    };
    write(&a.out, ResultKind::Forecast, &out)?;
    match out.ci {
        Some((lo, hi)) => println!("{method} tau={}: next quantile {:.6} [{lo:.6}, {hi:.6}]", m.tau, out.next_q),
        None => println!("{method} tau={}: next quantile {:.6}", m.tau, out.next_q),
    }
    Ok(())
}

fn diagnose(cfg: &Config, a: DiagnoseArgs) -> Result<()> {
    let series = read_input(cfg, &a.input)?;
    let m = model(cfg, &a.model)?;
    let bt = boot(cfg, &a.boot, 1000)?;
    let k = cfg.pick(a.lags, "K", DEFAULT_MAX_LAG)?;
    let fit = fit_hybrid(&series, m.orders, m.tau, true, &m.bounds)?;
    let boot = Bootstrapper::new(&series, &fit, k)?;
    let ens = boot.run(bt.b, bt.law, bt.seed)?;
    let rep = portmanteau_test(boot.r(), &ens)?;
    write(&a.out, ResultKind::Diagnose, &rep)?;
    if let Some(plot) = &a.plot {
        let delim = delimiter(cfg, a.input.delimiter.as_deref())?;
        report::write_qacf_plot(plot, &rep, delim).with_context(|| format!("writing {}", plot.display()))?;
    }
    let flagged: Vec<usize> = (0..k).filter(|&j| rep.lag_significant(j)).map(|j| j + 1).collect();
    println!(
        "Q({k}) = {:.4}, p-value {:.4} ({} weights, B = {}); lags outside the band: {flagged:?}",
        rep.q_stat, rep.p_value, bt.law, bt.b
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct BootstrapOutput {
    law: WeightLaw,
    b: usize,
    failed: usize,
    seed: u64,
    level: f64,
    theta_tau_hat: Vec<f64>,
    asd: Vec<f64>,
    param_ci: Vec<(f64, f64)>,
    next_q_hat: f64,
    next_q_ci: (f64, f64),
    ensemble: Option<BootstrapEnsemble>,
}

fn bootstrap(cfg: &Config, a: BootstrapArgs) -> Result<()> {
    let series = read_input(cfg, &a.input)?;
    let m = model(cfg, &a.model)?;
    let bt = boot(cfg, &a.boot, 300)?;
    let level = level(cfg, a.level)?;
    let k = cfg.pick(a.lags, "K", DEFAULT_MAX_LAG)?;
    let fit = fit_hybrid(&series, m.orders, m.tau, true, &m.bounds)?;
    let ens = Bootstrapper::new(&series, &fit, k)?.run(bt.b, bt.law, bt.seed)?;
    let s = summarize(&ens);
    let out = BootstrapOutput {
        law: bt.law,
        b: bt.b,
        failed: ens.failed,
        seed: bt.seed,
        level,
        param_ci: (0..s.theta_tau_hat.len()).map(|j| s.param_ci(j, level)).collect(),
        next_q_ci: s.next_quantile_ci(level),
        theta_tau_hat: s.theta_tau_hat.clone(),
        asd: s.asd.clone(),
        next_q_hat: s.next_q_hat,
        ensemble: a.replicates.then_some(ens),
    };
    write(&a.out, ResultKind::Bootstrap, &out)?;
    println!(
        "theta_tau = {:?}, bootstrap SE = {:?}, next quantile {:.6} [{:.6}, {:.6}]",
        out.theta_tau_hat, out.asd, out.next_q_hat, out.next_q_ci.0, out.next_q_ci.1
    );
    Ok(())
}

fn parse_subperiod(s: &str) -> Result<Subperiod> {
    let parts: Vec<&str> = s.split(':').collect();
    let [label, from, to] = parts.as_slice() else {
        bail!("subperiod must be label:from:to, got {s:?}");
    };
    Ok(Subperiod::new(label, from, to))
}

fn run_backtest(cfg: &Config, a: BacktestArgs) -> Result<()> {
    let series = read_input(cfg, &a.input)?;
    let m = model(cfg, &a.model)?;
    let method = method(cfg, a.method.as_deref())?;
    let start = match (a.start_index, &a.start_date) {
        (Some(i), _) => i,
        (None, Some(date)) => {
            let Some(dates) = series.dates() else {
                bail!("--start-date needs a dated (date,price) input");
            };
            dates
                .iter()
                .position(|d| d.as_str() >= date.as_str())
                .with_context(|| format!("no observation on or after {date}"))?
        }
        (None, None) => bail!("give --start-index or --start-date"),
    };
    let mut spec = BacktestSpec::new(method, m.tau, start);
    spec.window = a.window.parse::<Window>()?;
    spec.options = MethodOptions {
        orders: Some(m.orders),
        bounds: m.bounds,
        ..MethodOptions::default()
    };
    if a.ci {
        let bt = boot(cfg, &a.boot, 300)?;
        spec.ci = Some(CiSpec {
            b: bt.b,
            law: bt.law,
            level: level(cfg, a.level)?,
            seed: bt.seed,
        });
    }
    if a.index_periods {
        spec.subperiods = default_subperiods();
    }
    for s in &a.subperiods {
        spec.subperiods.push(parse_subperiod(s)?);
    }
    let rep = backtest(&series, &spec)?;
    write(&a.out, ResultKind::Backtest, &rep)?;
    if let Some(plot) = &a.plot {
        let delim = delimiter(cfg, a.input.delimiter.as_deref())?;
        report::write_backtest_plot(plot, &rep, delim).with_context(|| format!("writing {}", plot.display()))?;
    }
    println!(
        "{method} tau={}: ECR {:.2}% ({} violations in {} forecasts, {} origins skipped)",
        m.tau,
        100.0 * rep.ecr,
        rep.violations.len(),
        rep.forecasts.len(),
        rep.skipped.len()
    );
    for p in &rep.subperiods {
        println!("  {}: ECR {:.2}% ({} / {})", p.label, 100.0 * p.ecr, p.violations, p.forecasts);
    }
    Ok(())
}

fn montecarlo(cfg: &Config, a: MonteCarloArgs) -> Result<()> {
    let preset: Preset = a.preset.parse()?;
    let options = PresetOptions {
        scale: a.scale,
        b: match a.b {
            Some(b) => Some(b),
            None => cfg.get("B")?,
        },
        seed: cfg.pick(a.seed, "seed", PresetOptions::default().seed)?,
        sizes: a.sizes,
        taus: a.taus,
    };
    let rep = run_preset(preset, &options)?;
    write(&a.out, ResultKind::MonteCarlo, &rep)?;
    let delim = delimiter(cfg, a.delimiter.as_deref())?;
    for t in &rep.tables {
        print!("{}", t.to_delimited(delim as char));
    }
    if let Some(dir) = &a.tables {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, t) in rep.tables.iter().enumerate() {
            report::write_table(dir.join(format!("{preset}_{i}.csv")), t, delim)?;
        }
        for (i, e) in rep.efficiency.iter().enumerate() {
            report::write_efficiency_plot(dir.join(format!("{preset}_box_{i}.csv")), e, delim)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orders_and_subperiods_parse() {
        assert_eq!(parse_orders("1,2").unwrap(), Orders::new(1, 2));
        assert!(parse_orders("1").is_err());
        assert!(parse_orders("1,0").is_err());
        let s = parse_subperiod("crisis:2008-01-01:2009-12-31").unwrap();
        assert!(s.contains("2008-06-30"));
        assert!(parse_subperiod("2008").is_err());
    }
}
