//! Residual quantile autocorrelations and the bootstrap portmanteau test.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bootstrap::BootstrapEnsemble;
use crate::error::{Error, Result};
use crate::hybrid::HybridFit;
use crate::series::ReturnSeries;
use crate::stats;

pub const DEFAULT_MAX_LAG: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedResiduals {
    /// `(y_t - theta_tau' z~_t) / h~_t`.
    pub eps_hat: Vec<f64>,
    /// Mean of `|eps_hat|`.
    pub mu_a: f64,
    /// Variance (divisor `n`) of `|eps_hat|`.
    pub sigma2_a: f64,
}

impl WeightedResiduals {
    pub fn from_residuals(eps_hat: Vec<f64>) -> Result<Self> {
        let abs: Vec<f64> = eps_hat.iter().map(|e| e.abs()).collect();
        let mu_a = stats::mean(&abs);
        let sigma2_a = stats::variance_pop(&abs);
        if !(sigma2_a > 0.0 && sigma2_a.is_finite()) {
            return Err(Error::DegenerateResiduals(
                "absolute residuals have zero variance".into(),
            ));
        }
        Ok(Self {
            eps_hat,
            mu_a,
            sigma2_a,
        })
    }
}

pub fn weighted_residuals(fit: &HybridFit, series: &ReturnSeries) -> Result<WeightedResiduals> {
    let raw = fit.qr_residuals(series);
    let eps = raw.iter().zip(&fit.vol_path.h).map(|(r, h)| r / h).collect();
    WeightedResiduals::from_residuals(eps)
}

/// `psi_tau(u) = tau - 1{u < 0}`, so `psi_tau(0) = tau`.
pub fn psi(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        tau - 1.0
    } else {
        tau
    }
}

/// `r_k = [(tau - tau^2) sigma2]^{-1/2} n^-1 sum_{t>k} w_t psi(e_t) |e_{t-k}|`
/// for `k = 1..=max_lag`; unit multipliers when `weights` is `None`.
pub fn qacf_with(eps: &[f64], weights: Option<&[f64]>, tau: f64, sigma2_a: f64, max_lag: usize) -> Vec<f64> {
    let n = eps.len();
    let scale = 1.0 / (((tau - tau * tau) * sigma2_a).sqrt() * n as f64);
    (1..=max_lag)
        .map(|k| {
            let mut s = 0.0;
            for t in k..n {
                let w = weights.map_or(1.0, |w| w[t]);
                s += w * psi(eps[t], tau) * eps[t - k].abs();
            }
            s * scale
        })
        .collect()
}

pub fn qacf(res: &WeightedResiduals, tau: f64, max_lag: usize) -> Result<Vec<f64>> {
    check_lags(res.eps_hat.len(), max_lag)?;
    Ok(qacf_with(&res.eps_hat, None, tau, res.sigma2_a, max_lag))
}

/// Bootstrap counterpart: bootstrap residuals and multipliers with the
/// original `sigma2_a`.
pub fn weighted_qacf(eps_star: &[f64], weights: &[f64], tau: f64, sigma2_a: f64, max_lag: usize) -> Vec<f64> {
    qacf_with(eps_star, Some(weights), tau, sigma2_a, max_lag)
}

pub(crate) fn check_lags(n: usize, max_lag: usize) -> Result<()> {
    if max_lag == 0 || 4 * max_lag >= n {
        return Err(Error::InvalidInput(format!(
            "maximum lag K = {max_lag} must satisfy 1 <= K < n/4 (n = {n})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QacfReport {
    pub r: Vec<f64>,
    pub max_lag: usize,
    #[serde(with = "crate::report::nonfinite")]
    pub q_stat: f64,
    /// Row-major `K x K` sample covariance of the bootstrap T statistics.
    pub sigma3_star: Vec<f64>,
    #[serde(with = "crate::report::nonfinite")]
    pub p_value: f64,
    /// `(lower, upper)` per lag: 2.5th and 97.5th percentiles of `T_k / sqrt(n)`.
    pub per_lag_bounds: Vec<(f64, f64)>,
    /// Set when the covariance had to be ridge-regularised.
    pub ridge_applied: bool,
}

impl QacfReport {
    /// True when `r_k` lies outside its bootstrap band.
    pub fn lag_significant(&self, k: usize) -> bool {
        let (lo, hi) = self.per_lag_bounds[k];
        self.r[k] < lo || self.r[k] > hi
    }

    pub fn rejects(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// `Q(K) = n R' (Sigma3*)^-1 R` with `Sigma3*` the sample covariance of the
/// replicates' `T = sqrt(n) (R* - R)`.
pub fn portmanteau_test(r: &[f64], ensemble: &BootstrapEnsemble) -> Result<QacfReport> {
    let k = r.len();
    let t_stats: Vec<Vec<f64>> = ensemble.replicates.iter().map(|rep| rep.t_stat.clone()).collect();
    if t_stats.len() < 2 {
        return Err(Error::InvalidInput("portmanteau test needs at least 2 replicates".into()));
    }
    if t_stats.iter().any(|t| t.len() != k) {
        return Err(Error::InvalidInput(format!(
            "replicates carry T statistics of a different length than K = {k}"
        )));
    }
    portmanteau_from_t(r, &t_stats, ensemble.n)
}

pub fn portmanteau_from_t(r: &[f64], t_stats: &[Vec<f64>], n: usize) -> Result<QacfReport> {
    let k = r.len();
    let sigma = stats::sample_covariance(t_stats);
    let (q_stat, ridge_applied) = quadratic_form(r, &sigma, n as f64);
    let root_n = (n as f64).sqrt();
    let per_lag_bounds = (0..k)
        .map(|j| {
            let mut col: Vec<f64> = t_stats.iter().map(|t| t[j] / root_n).collect();
            col.sort_by(f64::total_cmp);
            (
                stats::quantile_type7_sorted(&col, 0.025),
                stats::quantile_type7_sorted(&col, 0.975),
            )
        })
        .collect();
    Ok(QacfReport {
        r: r.to_vec(),
        max_lag: k,
        q_stat,
        p_value: stats::chi2_sf(q_stat, k),
        sigma3_star: sigma,
        per_lag_bounds,
        ridge_applied,
    })
}

fn quadratic_form(r: &[f64], sigma: &[f64], n: f64) -> (f64, bool) {
    let k = r.len();
    if r.iter().all(|v| *v == 0.0) {
        return (0.0, false);
    }
    let m = DMatrix::from_row_slice(k, k, sigma);
    let rv = DVector::from_column_slice(r);
    let eig = m.clone().symmetric_eigenvalues();
    let emax = eig.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    let emin = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let well_posed = emax > 0.0 && emin > 1e-12 * emax;
    if well_posed {
        if let Some(ch) = m.clone().cholesky() {
            let x = ch.solve(&rv);
            return (n * rv.dot(&x), false);
        }
    }
    let trace: f64 = (0..k).map(|i| m[(i, i)]).sum();
    if trace <= 0.0 {
        return (f64::INFINITY, true);
    }
    let mut reg = m;
    for i in 0..k {
        reg[(i, i)] += 1e-8 * trace / k as f64;
    }
    match reg.cholesky() {
        Some(ch) => (n * rv.dot(&ch.solve(&rv)), true),
        None => (f64::INFINITY, true),
    }
}

/// Plot rows `(lag, r_k, lower, upper)`.
pub fn plot_rows(report: &QacfReport) -> Vec<[f64; 4]> {
    (0..report.max_lag)
        .map(|j| {
            let (lo, hi) = report.per_lag_bounds[j];
            [(j + 1) as f64, report.r[j], lo, hi]
        })
        .collect()
}
