//! The three-step hybrid estimator: QMLE volatilities, weighted quantile
//! regression of `y_t = T(x_t)` on `z~_t`, and back-transformation of the
//! fitted quantiles.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{build_design, regressor_row, Orders, ThetaBox, VolatilityPath};
use crate::qmle::{self, QmleFit, QmleOptions};
use crate::quantreg::{self, dot, Design, QrProblem, QrSolution};
use crate::series::{inverse_transform, ReturnSeries};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileParams {
    /// Coefficients of the tau-quantile of `y_t` given `z~_t`.
    pub theta_tau: Vec<f64>,
    pub tau: f64,
    pub weighted: bool,
}

/// Output of the quantile-regression stage for a given volatility path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileStage {
    pub qparams: QuantileParams,
    pub design: Design,
    pub solution: QrSolution,
    /// `y_t = T(x_t)`.
    pub y: Vec<f64>,
    pub in_sample_q: Vec<f64>,
    pub next_q: f64,
    /// `z~_{n+1}`.
    pub next_regressor: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HybridFit {
    pub orders: Orders,
    pub qmle: QmleFit,
    pub qparams: QuantileParams,
    pub vol_path: VolatilityPath,
    pub in_sample_q: Vec<f64>,
    pub next_q: f64,
    pub design: Design,
    pub solution: QrSolution,
    pub next_regressor: Vec<f64>,
}

impl HybridFit {
    pub fn tau(&self) -> f64 {
        self.qparams.tau
    }

    pub fn len(&self) -> usize {
        self.in_sample_q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.in_sample_q.is_empty()
    }

    /// Residuals `y_t - theta_tau' z~_t`, exactly zero on the fitted basis.
    pub fn qr_residuals(&self, series: &ReturnSeries) -> Vec<f64> {
        let mut r: Vec<f64> = series
            .transformed()
            .iter()
            .enumerate()
            .map(|(t, y)| y - dot(self.design.row(t), &self.qparams.theta_tau))
            .collect();
        for &t in &self.solution.active_basis {
            r[t] = 0.0;
        }
        r
    }
}

/// Quantile-regression stage and forecast for a supplied volatility path
/// `h` (pre-sample squared returns at `x2_init`, pre-sample volatilities at
/// `h_init`).
pub fn quantile_stage(
    series: &ReturnSeries,
    orders: Orders,
    h: &[f64],
    x2_init: f64,
    h_init: f64,
    tau: f64,
    weighted: bool,
) -> Result<QuantileStage> {
    quantile_stage_from(series, orders, h, x2_init, h_init, tau, weighted, &[])
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn quantile_stage_from(
    series: &ReturnSeries,
    orders: Orders,
    h: &[f64],
    x2_init: f64,
    h_init: f64,
    tau: f64,
    weighted: bool,
    basis_hint: &[usize],
) -> Result<QuantileStage> {
    if h.len() != series.len() {
        return Err(Error::InvalidInput(format!(
            "volatility path has {} points, series has {}",
            h.len(),
            series.len()
        )));
    }
    if h.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidInput("volatilities must be positive and finite".into()));
    }
    let x2 = series.squares();
    let design = build_design(orders, &x2, h, x2_init, h_init);
    let y = series.transformed();
    let weights: Vec<f64> = if weighted {
        h.iter().map(|v| 1.0 / v).collect()
    } else {
        vec![1.0; h.len()]
    };
    let problem = QrProblem::new(y.clone(), design, weights, tau)?;
    let solution = quantreg::solve_from(&problem, basis_hint)?;
    let design = problem.design;
    let theta = solution.coef.clone();
    let in_sample_q = (0..series.len())
        .map(|t| inverse_transform(dot(design.row(t), &theta)))
        .collect();
    let mut next = vec![0.0; orders.dim()];
    regressor_row(orders, &x2, h, x2_init, h_init, series.len(), &mut next);
    let next_q = inverse_transform(dot(&next, &theta));
    Ok(QuantileStage {
        qparams: QuantileParams {
            theta_tau: theta,
            tau,
            weighted,
        },
        design,
        solution,
        y,
        in_sample_q,
        next_q,
        next_regressor: next,
    })
}

pub fn fit_hybrid(
    series: &ReturnSeries,
    orders: Orders,
    tau: f64,
    weighted: bool,
    bounds: &ThetaBox,
) -> Result<HybridFit> {
    let qmle = qmle::fit(series, orders, bounds, &QmleOptions::default())?;
    fit_hybrid_with_qmle(series, qmle, tau, weighted)
}

/// Second stage on top of an existing QMLE fit (lets several quantile levels
/// or both weighting schemes share one first stage).
pub fn fit_hybrid_with_qmle(series: &ReturnSeries, qmle: QmleFit, tau: f64, weighted: bool) -> Result<HybridFit> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::InvalidInput(format!("tau = {tau} must lie in (0, 1)")));
    }
    let orders = qmle.theta_hat.orders();
    let path = qmle.path.clone();
    let stage = quantile_stage(series, orders, &path.h, path.init, path.init, tau, weighted)?;
    Ok(HybridFit {
        orders,
        qmle,
        qparams: stage.qparams,
        vol_path: path,
        in_sample_q: stage.in_sample_q,
        next_q: stage.next_q,
        design: stage.design,
        solution: stage.solution,
        next_regressor: stage.next_regressor,
    })
}

/// `T^-1(theta_tau' z~_{n+1})`.
pub fn forecast_next(fit: &HybridFit, series: &ReturnSeries) -> f64 {
    let mut next = vec![0.0; fit.orders.dim()];
    regressor_row(
        fit.orders,
        &series.squares(),
        &fit.vol_path.h,
        fit.vol_path.init,
        fit.vol_path.init,
        series.len(),
        &mut next,
    );
    inverse_transform(dot(&next, &fit.qparams.theta_tau))
}
