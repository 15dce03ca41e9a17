mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Hybrid conditional quantile estimation for GARCH models.
#[derive(Debug, Parser)]
#[command(name = "hybridq", version, about)]
pub struct Cli {
    /// `key = value` configuration file; flags override its entries.
    #[arg(long, global = true, env = "HYBRIDQ_CONFIG")]
    pub config: Option<PathBuf>,

    /// Worker threads for parallel sections.
    #[arg(long, global = true, env = "HYBRIDQ_WORKERS")]
    pub workers: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate a GARCH series.
    Simulate(SimulateArgs),
    /// Fit the hybrid estimator and report parameters and residual QACF.
    Fit(FitArgs),
    /// One-step-ahead conditional quantile with any estimator.
    Forecast(ForecastArgs),
    /// Bootstrap portmanteau test on the residual QACF.
    Diagnose(DiagnoseArgs),
    /// Bootstrap standard errors and confidence intervals.
    Bootstrap(BootstrapArgs),
    /// Rolling VaR backtest with empirical coverage rates.
    Backtest(BacktestArgs),
    /// Monte Carlo study presets.
    Montecarlo(MonteCarloArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Returns (one column) or `date,price` rows.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Field delimiter: a single character or `tab`.
    #[arg(long)]
    pub delimiter: Option<String>,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// GARCH orders `p,q`.
    #[arg(long)]
    pub orders: Option<String>,
    /// Quantile level in (0, 1).
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub w_lo: Option<f64>,
    #[arg(long)]
    pub w_hi: Option<f64>,
    /// Bound on the sum of the beta coefficients.
    #[arg(long)]
    pub rho0: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BootArgs {
    /// Bootstrap replicates.
    #[arg(long = "B", visible_alias = "b")]
    pub b: Option<usize>,
    /// Weight law: exponential (W1), zero-two (W2) or mammen (W3).
    #[arg(long)]
    pub weights: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 0.4)]
    pub alpha0: f64,
    /// ARCH coefficients, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4])]
    pub alpha: Vec<f64>,
    /// GARCH coefficients, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = vec![0.4])]
    pub beta: Vec<f64>,
    /// `normal` or `t`.
    #[arg(long, default_value = "normal")]
    pub innovation: String,
    /// Degrees of freedom for `--innovation t`.
    #[arg(long, default_value_t = 5.0)]
    pub df: f64,
    #[arg(long, short, default_value_t = 1000)]
    pub n: usize,
    #[arg(long, default_value_t = 500)]
    pub burn_in: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output series (CSV with a `return` header).
    #[arg(long, short)]
    pub out: PathBuf,
    /// Optional result file with the true variances.
    #[arg(long)]
    pub result: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Unweighted quantile regression.
    #[arg(long)]
    pub unweighted: bool,
    /// QACF lags in the summary.
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ForecastArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// hybrid, hybrid-unweighted, qgarch1, qgarch2, caviar or riskm.
    #[arg(long)]
    pub method: Option<String>,
    /// Add a bootstrap interval (hybrid methods only).
    #[arg(long)]
    pub ci: bool,
    #[command(flatten)]
    pub boot: BootArgs,
    #[arg(long)]
    pub level: Option<f64>,
    /// Include the in-sample quantile path.
    #[arg(long)]
    pub in_sample: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub boot: BootArgs,
    /// Number of QACF lags K.
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// `lag, r, lower, upper` plot data.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub boot: BootArgs,
    #[arg(long)]
    pub level: Option<f64>,
    #[arg(long)]
    pub lags: Option<usize>,
    /// Store every replicate in the result file.
    #[arg(long)]
    pub replicates: bool,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BacktestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub method: Option<String>,
    /// Position of the first forecast (size of the first estimation sample).
    #[arg(long, conflicts_with = "start_date")]
    pub start_index: Option<usize>,
    /// First forecast date (`YYYY-MM-DD`); needs a dated series.
    #[arg(long)]
    pub start_date: Option<String>,
    /// `expanding` or `fixed`.
    #[arg(long, default_value = "expanding")]
    pub window: String,
    /// Bootstrap bands per origin (hybrid methods only).
    #[arg(long)]
    pub ci: bool,
    #[command(flatten)]
    pub boot: BootArgs,
    #[arg(long)]
    pub level: Option<f64>,
    /// Evaluation window `label:from:to`; repeatable.
    #[arg(long = "subperiod")]
    pub subperiods: Vec<String>,
    /// Use the 2010-2011, 2012-2013, 2014-2015 and 2016 windows.
    #[arg(long)]
    pub index_periods: bool,
    #[arg(long, short)]
    pub out: PathBuf,
    /// `date, return, forecast, lower, upper` plot data.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MonteCarloArgs {
    /// table1a, table1b, table2, table3, table4 or fig3.
    #[arg(long)]
    pub preset: String,
    /// Multiplier on the default replicate counts.
    #[arg(long, default_value_t = 1.0)]
    pub scale: f64,
    #[arg(long = "B", visible_alias = "b")]
    pub b: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
    /// Override the quantile levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub taus: Option<Vec<f64>>,
    #[arg(long, short)]
    pub out: PathBuf,
    /// Directory for table and plot-data files.
    #[arg(long)]
    pub tables: Option<PathBuf>,
    #[arg(long)]
    pub delimiter: Option<String>,
}

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<hybridq_core::Error>() {
        Some(e) if e.is_numerical() => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
