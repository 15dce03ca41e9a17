//! Hybrid conditional quantile estimation for GARCH(p, q) returns.

pub mod backtest;
pub mod baselines;
pub mod bootstrap;
pub mod diagnostics;
pub mod error;
pub mod garch;
pub mod hybrid;
pub mod montecarlo;
pub mod optim;
pub mod qmle;
pub mod quantreg;
pub mod report;
pub mod rng;
pub mod series;
pub mod stats;

pub use backtest::{BacktestReport, BacktestSpec};
pub use baselines::{BaselineForecast, Method, SieveConfig};
pub use bootstrap::{BootstrapEnsemble, BootstrapReplicate, Bootstrapper, WeightLaw};
pub use diagnostics::{QacfReport, WeightedResiduals};
pub use error::{Error, Result};
pub use garch::{GarchParams, InnovationLaw, Orders, ThetaBox, VolatilityPath};
pub use hybrid::{fit_hybrid, HybridFit, QuantileParams};
pub use montecarlo::{ExperimentSpec, Preset};
pub use qmle::{QmleFit, QmleOptions};
pub use quantreg::{check_loss, Design, QrProblem, QrSolution, QrStatus};
pub use series::{inverse_transform, transform, PricesInput, ReturnSeries};
