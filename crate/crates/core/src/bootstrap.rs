//! Mixed multiplier bootstrap: random weights, the linearised update of the
//! QMLE, the randomly weighted quantile regression, and the E / Q / T
//! statistics used for standard errors, intervals and the portmanteau test.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diagnostics::{self, WeightedResiduals};
use crate::error::{Error, Result};
use crate::garch::{build_design, recursion, regressor_row, Orders, ThetaBox};
use crate::hybrid::HybridFit;
use crate::qmle::{self, QmleOptions};
use crate::quantreg::{self, dot, QrProblem};
use crate::rng::stream_rng;
use crate::series::{inverse_transform, ReturnSeries};
use crate::stats;

pub const DEFAULT_REPLICATES: usize = 1000;

/// Multiplier distributions, each with mean and variance one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightLaw {
    /// Standard exponential.
    Exponential,
    /// 0 or 2 with probability 1/2 each.
    ZeroTwo,
    /// Mammen's two-point law on `(3 -+ sqrt 5) / 2`.
    Mammen,
}

impl WeightLaw {
    pub const ALL: [WeightLaw; 3] = [WeightLaw::Exponential, WeightLaw::ZeroTwo, WeightLaw::Mammen];

    pub fn short_name(&self) -> &'static str {
        match self {
            WeightLaw::Exponential => "W1",
            WeightLaw::ZeroTwo => "W2",
            WeightLaw::Mammen => "W3",
        }
    }

    pub fn mammen_low() -> f64 {
        (3.0 - 5f64.sqrt()) / 2.0
    }

    pub fn mammen_high() -> f64 {
        (3.0 + 5f64.sqrt()) / 2.0
    }

    /// Probability of the lower Mammen atom, `(sqrt 5 + 1) / (2 sqrt 5)`.
    pub fn mammen_low_prob() -> f64 {
        (5f64.sqrt() + 1.0) / (2.0 * 5f64.sqrt())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            WeightLaw::Exponential => Exp1.sample(rng),
            WeightLaw::ZeroTwo => {
                if rng.random::<bool>() {
                    2.0
                } else {
                    0.0
                }
            }
            WeightLaw::Mammen => {
                if rng.random::<f64>() < Self::mammen_low_prob() {
                    Self::mammen_low()
                } else {
                    Self::mammen_high()
                }
            }
        }
    }
}

impl fmt::Display for WeightLaw {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short_name())
    }
}

impl FromStr for WeightLaw {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "w1" | "exp" | "exponential" => Ok(WeightLaw::Exponential),
            "w2" | "zero-two" | "0-2" => Ok(WeightLaw::ZeroTwo),
            "w3" | "mammen" => Ok(WeightLaw::Mammen),
            other => Err(Error::InvalidInput(format!(
                "unknown weight law '{other}' (expected w1, w2 or w3)"
            ))),
        }
    }
}

/// `n` i.i.d. multipliers from stream 0 of `seed`.
pub fn draw_weights(law: WeightLaw, n: usize, seed: u64) -> Vec<f64> {
    draw_weights_stream(law, n, seed, 0)
}

/// Multipliers for replicate `stream` under master `seed`.
pub fn draw_weights_stream(law: WeightLaw, n: usize, seed: u64, stream: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, stream);
    (0..n).map(|_| law.sample(&mut rng)).collect()
}

/// How the bootstrap QMLE is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaStarMode {
    /// One-step sample-averaging update around the QMLE.
    #[default]
    Linearized,
    /// Full weighted QMLE refit (validation only; much slower).
    FullRefit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReplicate {
    pub theta_star: Vec<f64>,
    pub theta_tau_star: Vec<f64>,
    /// `sqrt(n) (theta_tau* - theta_tau)`.
    pub e_stat: Vec<f64>,
    /// `T^-1(theta_tau*' z~*_{n+1})`.
    pub q_stat: f64,
    /// `sqrt(n) (R* - R)`.
    pub t_stat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapEnsemble {
    pub replicates: Vec<BootstrapReplicate>,
    /// Number of replicates requested.
    pub b: usize,
    pub seed: u64,
    pub law: WeightLaw,
    /// Replicates that failed and were dropped (at most 1% of `b`).
    pub failed: usize,
    pub n: usize,
    pub theta_tau_hat: Vec<f64>,
    pub next_q_hat: f64,
}

/// Everything a replicate needs, computed once from the original fit.
#[derive(Debug, Clone)]
pub struct Bootstrapper {
    series: ReturnSeries,
    orders: Orders,
    tau: f64,
    weighted: bool,
    max_lag: usize,
    mode: ThetaStarMode,
    bounds: ThetaBox,
    x2: Vec<f64>,
    y: Vec<f64>,
    init: f64,
    h: Vec<f64>,
    inv_h: Vec<f64>,
    theta_tilde: Vec<f64>,
    /// Row-major `J~^-1`.
    j_inv: Vec<f64>,
    score_path: Vec<f64>,
    theta_tau: Vec<f64>,
    basis: Vec<usize>,
    residuals: WeightedResiduals,
    r: Vec<f64>,
    next_q: f64,
}

impl Bootstrapper {
    pub fn new(series: &ReturnSeries, fit: &HybridFit, max_lag: usize) -> Result<Self> {
        let n = series.len();
        if fit.len() != n {
            return Err(Error::InvalidInput("fit does not match the series".into()));
        }
        diagnostics::check_lags(n, max_lag)?;
        let d = fit.orders.dim();
        let j = DMatrix::from_row_slice(d, d, &fit.qmle.j_tilde);
        let eig = j.clone().symmetric_eigenvalues();
        let emax = eig.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let emin = eig.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let condition = if emin > 0.0 { emax / emin } else { f64::INFINITY };
        if !(condition < 1e12) {
            return Err(Error::SingularInformation { condition });
        }
        let j_inv = j
            .try_inverse()
            .ok_or(Error::SingularInformation { condition })?;
        let residuals = diagnostics::weighted_residuals(fit, series)?;
        let r = diagnostics::qacf(&residuals, fit.tau(), max_lag)?;
        let h = fit.vol_path.h.clone();
        Ok(Self {
            series: series.clone(),
            orders: fit.orders,
            tau: fit.tau(),
            weighted: fit.qparams.weighted,
            max_lag,
            mode: ThetaStarMode::Linearized,
            bounds: ThetaBox::default(),
            x2: series.squares(),
            y: series.transformed(),
            init: fit.vol_path.init,
            inv_h: h.iter().map(|v| 1.0 / v).collect(),
            h,
            theta_tilde: fit.qmle.theta_hat.to_vec(),
            j_inv: (0..d * d).map(|i| j_inv[(i / d, i % d)]).collect(),
            score_path: fit.qmle.score_path.clone(),
            theta_tau: fit.qparams.theta_tau.clone(),
            basis: fit.solution.active_basis.clone(),
            residuals,
            r,
            next_q: fit.next_q,
        })
    }

    /// Switches to full weighted QMLE refits inside the box `bounds`.
    pub fn with_mode(mut self, mode: ThetaStarMode, bounds: ThetaBox) -> Self {
        self.mode = mode;
        self.bounds = bounds;
        self
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Original residual QACF `R`.
    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn residuals(&self) -> &WeightedResiduals {
        &self.residuals
    }

    /// `theta~* = theta~ - J~^-1 / n sum_t (w_t - 1) s_t`.
    pub fn theta_star_update(&self, weights: &[f64]) -> Vec<f64> {
        theta_star_update_raw(&self.theta_tilde, &self.j_inv, &self.score_path, weights)
    }

    fn theta_star(&self, weights: &[f64]) -> Result<Vec<f64>> {
        match self.mode {
            ThetaStarMode::Linearized => {
                // In short samples the one-step update can leave the box
                // (e.g. sum beta > 1), which makes h* explode.
                let mut theta = self.theta_star_update(weights);
                self.bounds.project(self.orders, &mut theta);
                Ok(theta)
            }
            ThetaStarMode::FullRefit => theta_star_full(&self.series, self.orders, &self.bounds, &self.theta_tilde, weights),
        }
    }

    /// One replicate for the given multipliers.
    pub fn replicate(&self, weights: &[f64]) -> Result<BootstrapReplicate> {
        let n = self.n();
        if weights.len() != n {
            return Err(Error::InvalidInput(format!(
                "{} multipliers for {n} observations",
                weights.len()
            )));
        }
        let theta_star = self.theta_star(weights)?;
        let (h_star, _) = recursion(self.orders, &theta_star, &self.x2, self.init, false);
        // Only a regressor here (weights and scaling use the original path),
        // so it need not be positive.
        if h_star.iter().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintViolation(
                "bootstrap volatility path is not finite".into(),
            ));
        }
        let design = build_design(self.orders, &self.x2, &h_star, self.init, self.init);
        let qr_weights: Vec<f64> = if self.weighted {
            weights.iter().zip(&self.inv_h).map(|(w, ih)| w * ih).collect()
        } else {
            weights.to_vec()
        };
        let problem = QrProblem::new(self.y.clone(), design, qr_weights, self.tau)?;
        let sol = quantreg::solve_from(&problem, &self.basis)?;
        let theta_tau_star = sol.coef.clone();

        let root_n = (n as f64).sqrt();
        let e_stat = theta_tau_star
            .iter()
            .zip(&self.theta_tau)
            .map(|(a, b)| root_n * (a - b))
            .collect();
        let mut next = vec![0.0; self.orders.dim()];
        regressor_row(self.orders, &self.x2, &h_star, self.init, self.init, n, &mut next);
        let q_stat = inverse_transform(dot(&next, &theta_tau_star));

        let mut eps_star: Vec<f64> = (0..n)
            .map(|t| (self.y[t] - dot(problem.design.row(t), &theta_tau_star)) / self.h[t])
            .collect();
        for &t in &sol.active_basis {
            eps_star[t] = 0.0;
        }
        let r_star = diagnostics::weighted_qacf(&eps_star, weights, self.tau, self.residuals.sigma2_a, self.max_lag);
        let t_stat = r_star.iter().zip(&self.r).map(|(a, b)| root_n * (a - b)).collect();
        Ok(BootstrapReplicate {
            theta_star,
            theta_tau_star,
            e_stat,
            q_stat,
            t_stat,
        })
    }

    /// `b` replicates with multipliers drawn from stream `i` of `seed` for
    /// replicate `i`. Runs on the current rayon pool; the output order is the
    /// replicate index regardless of scheduling.
    pub fn run(&self, b: usize, law: WeightLaw, seed: u64) -> Result<BootstrapEnsemble> {
        if b < 2 {
            return Err(Error::InvalidInput(format!("B = {b} must be at least 2")));
        }
        let n = self.n();
        let results: Vec<Result<BootstrapReplicate>> = (0..b)
            .into_par_iter()
            .map(|i| {
                let w = draw_weights_stream(law, n, seed, i as u64);
                self.replicate(&w).map_err(|e| Error::Replicate {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect();
        self.collect(results, b, law, seed)
    }

    /// Sequential variant, used when the caller already parallelises at a
    /// coarser level.
    pub fn run_sequential(&self, b: usize, law: WeightLaw, seed: u64) -> Result<BootstrapEnsemble> {
        if b < 2 {
            return Err(Error::InvalidInput(format!("B = {b} must be at least 2")));
        }
        let n = self.n();
        let results = (0..b)
            .map(|i| {
                let w = draw_weights_stream(law, n, seed, i as u64);
                self.replicate(&w).map_err(|e| Error::Replicate {
                    index: i,
                    source: Box::new(e),
                })
            })
            .collect();
        self.collect(results, b, law, seed)
    }

    fn collect(
        &self,
        results: Vec<Result<BootstrapReplicate>>,
        b: usize,
        law: WeightLaw,
        seed: u64,
    ) -> Result<BootstrapEnsemble> {
        let mut replicates = Vec::with_capacity(b);
        let mut failed = 0;
        let mut first = None;
        for r in results {
            match r {
                Ok(rep) => replicates.push(rep),
                Err(e) => {
                    failed += 1;
                    first.get_or_insert_with(|| e.to_string());
                }
            }
        }
        if failed * 100 > b || replicates.len() < 2 {
            return Err(Error::EnsembleFailure {
                failed,
                total: b,
                first: first.unwrap_or_default(),
            });
        }
        Ok(BootstrapEnsemble {
            replicates,
            b,
            seed,
            law,
            failed,
            n: self.n(),
            theta_tau_hat: self.theta_tau.clone(),
            next_q_hat: self.next_q,
        })
    }
}

pub(crate) fn theta_star_update_raw(theta: &[f64], j_inv: &[f64], score_path: &[f64], weights: &[f64]) -> Vec<f64> {
    let d = theta.len();
    let n = weights.len();
    let mut s = vec![0.0; d];
    for (t, w) in weights.iter().enumerate() {
        let c = w - 1.0;
        if c != 0.0 {
            for k in 0..d {
                s[k] += c * score_path[t * d + k];
            }
        }
    }
    (0..d)
        .map(|a| theta[a] - (0..d).map(|b| j_inv[a * d + b] * s[b]).sum::<f64>() / n as f64)
        .collect()
}

/// Full weighted QMLE, started from the original estimate.
pub fn theta_star_full(
    series: &ReturnSeries,
    orders: Orders,
    bounds: &ThetaBox,
    theta_tilde: &[f64],
    weights: &[f64],
) -> Result<Vec<f64>> {
    let fit = qmle::fit_from(
        series,
        orders,
        bounds,
        &QmleOptions::default(),
        Some(weights),
        &[theta_tilde.to_vec()],
    )?;
    Ok(fit.theta_hat.to_vec())
}

/// Convenience wrapper: build the replicate context and run `b` replicates.
pub fn run_ensemble(
    series: &ReturnSeries,
    fit: &HybridFit,
    b: usize,
    law: WeightLaw,
    max_lag: usize,
    seed: u64,
) -> Result<BootstrapEnsemble> {
    Bootstrapper::new(series, fit, max_lag)?.run(b, law, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    /// Row-major sample covariance of the E statistics.
    pub cov_matrix: Vec<f64>,
    /// `sqrt(diag(cov) / n)`: bootstrap standard errors of `theta_tau`.
    pub asd: Vec<f64>,
    pub theta_tau_hat: Vec<f64>,
    pub next_q_hat: f64,
    pub n: usize,
    e_sorted: Vec<Vec<f64>>,
    q_sorted: Vec<f64>,
}

impl BootstrapSummary {
    /// Percentile interval for component `j` of `theta_tau`:
    /// `theta_tau + q_{a/2}(E) / sqrt(n)` to `theta_tau + q_{1-a/2}(E) / sqrt(n)`.
    pub fn param_ci(&self, j: usize, level: f64) -> (f64, f64) {
        let a = (1.0 - level) / 2.0;
        let root_n = (self.n as f64).sqrt();
        let e = &self.e_sorted[j];
        (
            self.theta_tau_hat[j] + stats::quantile_type7_sorted(e, a) / root_n,
            self.theta_tau_hat[j] + stats::quantile_type7_sorted(e, 1.0 - a) / root_n,
        )
    }

    /// Percentile interval for the next conditional quantile from the Q
    /// statistics.
    pub fn next_quantile_ci(&self, level: f64) -> (f64, f64) {
        let a = (1.0 - level) / 2.0;
        (
            stats::quantile_type7_sorted(&self.q_sorted, a),
            stats::quantile_type7_sorted(&self.q_sorted, 1.0 - a),
        )
    }
}

pub fn summarize(ensemble: &BootstrapEnsemble) -> BootstrapSummary {
    let e: Vec<Vec<f64>> = ensemble.replicates.iter().map(|r| r.e_stat.clone()).collect();
    let d = ensemble.theta_tau_hat.len();
    let cov = stats::sample_covariance(&e);
    let cov_matrix = if cov.is_empty() { vec![0.0; d * d] } else { cov };
    let asd = (0..d)
        .map(|k| (cov_matrix[k * d + k].max(0.0) / ensemble.n as f64).sqrt())
        .collect();
    let e_sorted = (0..d)
        .map(|k| {
            let mut col: Vec<f64> = e.iter().map(|r| r[k]).collect();
            col.sort_by(f64::total_cmp);
            col
        })
        .collect();
    let mut q_sorted: Vec<f64> = ensemble.replicates.iter().map(|r| r.q_stat).collect();
    q_sorted.sort_by(f64::total_cmp);
    BootstrapSummary {
        cov_matrix,
        asd,
        theta_tau_hat: ensemble.theta_tau_hat.clone(),
        next_q_hat: ensemble.next_q_hat,
        n: ensemble.n,
        e_sorted,
        q_sorted,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::{simulate, GarchParams, InnovationLaw};
    use crate::hybrid::fit_hybrid;

    fn setup(n: usize, seed: u64) -> (ReturnSeries, HybridFit) {
        let truth = GarchParams::garch11(0.4, 0.4, 0.4).unwrap();
        let s = simulate(&truth, InnovationLaw::StandardNormal, n, 500, seed).unwrap();
        let fit = fit_hybrid(&s, Orders::garch11(), 0.1, true, &ThetaBox::default()).unwrap();
        (s, fit)
    }

    #[test]
    fn weight_law_supports_and_moments() {
        assert!(draw_weights(WeightLaw::ZeroTwo, 1000, 1).iter().all(|w| *w == 0.0 || *w == 2.0));
        let m = draw_weights(WeightLaw::Mammen, 1000, 1);
        assert!(m.iter().all(|w| *w == WeightLaw::mammen_low() || *w == WeightLaw::mammen_high()));
        assert!((WeightLaw::mammen_low_prob() - 0.723_606_797_749_979).abs() < 1e-12);
        // Two-point law moments by hand.
        let p = WeightLaw::mammen_low_prob();
        let (lo, hi) = (WeightLaw::mammen_low(), WeightLaw::mammen_high());
        let mean = p * lo + (1.0 - p) * hi;
        let var = p * (lo - 1.0).powi(2) + (1.0 - p) * (hi - 1.0).powi(2);
        assert!((mean - 1.0).abs() < 1e-12 && (var - 1.0).abs() < 1e-12);
        for law in WeightLaw::ALL {
            let w = draw_weights(law, 1_000_000, 17);
            let m = stats::mean(&w);
            let v = stats::variance(&w);
            assert!((m - 1.0).abs() < 0.01, "{law}: mean {m}");
            assert!((v - 1.0).abs() < 0.02, "{law}: var {v}");
        }
        assert_eq!(draw_weights(WeightLaw::Exponential, 5, 3), draw_weights(WeightLaw::Exponential, 5, 3));
    }

    #[test]
    fn law_names_parse() {
        assert_eq!("W2".parse::<WeightLaw>().unwrap(), WeightLaw::ZeroTwo);
        assert_eq!("mammen".parse::<WeightLaw>().unwrap(), WeightLaw::Mammen);
        assert!("w9".parse::<WeightLaw>().is_err());
    }

    #[test]
    fn five_point_update_by_hand() {
        let theta = vec![0.5, 0.2];
        let j_inv = vec![2.0, -0.5, -0.5, 4.0];
        let score = vec![0.1, -0.2, 0.3, 0.0, -0.4, 0.5, 0.2, 0.1, 0.0, -0.3];
        let w = vec![1.5, 0.2, 1.0, 2.0, 0.3];
        // sum (w-1) s = 0.5*(0.1,-0.2) - 0.8*(0.3,0) + 0 + 1*(0.2,0.1) - 0.7*(0,-0.3)
        let s = [0.05 - 0.24 + 0.2, -0.1 + 0.1 + 0.21];
        let expected = [
            0.5 - (2.0 * s[0] - 0.5 * s[1]) / 5.0,
            0.2 - (-0.5 * s[0] + 4.0 * s[1]) / 5.0,
        ];
        let got = theta_star_update_raw(&theta, &j_inv, &score, &w);
        assert!((got[0] - expected[0]).abs() < 1e-15);
        assert!((got[1] - expected[1]).abs() < 1e-15);
    }

    #[test]
    fn unit_weights_reproduce_the_fit() {
        let (s, fit) = setup(600, 1);
        let boot = Bootstrapper::new(&s, &fit, 6).unwrap();
        let rep = boot.replicate(&vec![1.0; s.len()]).unwrap();
        assert_eq!(rep.theta_star, fit.qmle.theta_hat.to_vec());
        assert_eq!(rep.theta_tau_star, fit.qparams.theta_tau);
        assert!(rep.e_stat.iter().all(|e| *e == 0.0));
        assert!(rep.t_stat.iter().all(|t| *t == 0.0));
        assert_eq!(rep.q_stat, fit.next_q);
    }

    #[test]
    fn zero_weight_rows_can_be_deleted() {
        let (s, fit) = setup(600, 2);
        let boot = Bootstrapper::new(&s, &fit, 6).unwrap();
        let w = draw_weights(WeightLaw::ZeroTwo, s.len(), 5);
        let rep = boot.replicate(&w).unwrap();

        // Rebuild the same QR problem with the zero-weight rows removed.
        let (h_star, _) = recursion(fit.orders, &rep.theta_star, &s.squares(), fit.vol_path.init, false);
        let design = build_design(fit.orders, &s.squares(), &h_star, fit.vol_path.init, fit.vol_path.init);
        let y = s.transformed();
        let keep: Vec<usize> = (0..s.len()).filter(|&t| w[t] > 0.0).collect();
        let rows: Vec<Vec<f64>> = keep.iter().map(|&t| design.row(t).to_vec()).collect();
        let problem = QrProblem::new(
            keep.iter().map(|&t| y[t]).collect(),
            crate::quantreg::Design::from_rows(&rows).unwrap(),
            keep.iter().map(|&t| w[t] / fit.vol_path.h[t]).collect(),
            0.1,
        )
        .unwrap();
        let direct = quantreg::solve(&problem).unwrap();
        for (a, b) in direct.coef.iter().zip(&rep.theta_tau_star) {
            assert!((a - b).abs() < 1e-10, "{:?} vs {:?}", direct.coef, rep.theta_tau_star);
        }
    }

    #[test]
    fn q_sign_matches_linear_predictor() {
        let (s, fit) = setup(500, 3);
        let ens = run_ensemble(&s, &fit, 50, WeightLaw::Exponential, 6, 9).unwrap();
        assert!(ens.replicates.iter().all(|r| r.q_stat < 0.0));
        assert_eq!(ens.replicates.len(), 50);
    }

    #[test]
    fn ensembles_are_deterministic() {
        let (s, fit) = setup(400, 4);
        let boot = Bootstrapper::new(&s, &fit, 6).unwrap();
        let a = boot.run(2, WeightLaw::Exponential, 11).unwrap();
        let b = boot.run(2, WeightLaw::Exponential, 11).unwrap();
        assert_eq!(a, b);
        let c = boot.run_sequential(2, WeightLaw::Exponential, 11).unwrap();
        assert_eq!(a.replicates, c.replicates);
        assert!(boot.run(1, WeightLaw::Exponential, 11).is_err());
    }

    #[test]
    fn update_is_centred() {
        let (s, fit) = setup(500, 5);
        let boot = Bootstrapper::new(&s, &fit, 6).unwrap();
        let b = 2000;
        let d = 3;
        let diffs: Vec<Vec<f64>> = (0..b)
            .map(|i| {
                let w = draw_weights_stream(WeightLaw::Exponential, s.len(), 21, i);
                let ts = boot.theta_star_update(&w);
                ts.iter().zip(fit.qmle.theta_hat.to_vec()).map(|(a, b)| a - b).collect()
            })
            .collect();
        for k in 0..d {
            let col: Vec<f64> = diffs.iter().map(|r| r[k]).collect();
            let se = stats::std_dev(&col) / (b as f64).sqrt();
            assert!(stats::mean(&col).abs() < 3.0 * se, "component {k}");
        }
    }

    #[test]
    fn weighted_qacf_is_nearly_centred() {
        // Interpolated (zero-residual) points take psi = tau, and heavily
        // weighted points are interpolated more often, so T carries an
        // O(d / sqrt(n)) bias; it must stay small against the spread.
        let sets = 6;
        let mut all = vec![Vec::new(); 6];
        for seed in 0..sets {
            let (s, fit) = setup(1000, 600 + seed);
            let ens = Bootstrapper::new(&s, &fit, 6).unwrap().run(100, WeightLaw::Exponential, seed).unwrap();
            for (k, col) in all.iter_mut().enumerate() {
                col.extend(ens.replicates.iter().map(|r| r.t_stat[k]));
            }
        }
        for (k, col) in all.iter().enumerate() {
            let (m, sd) = (stats::mean(col), stats::std_dev(col));
            assert!(m.abs() < 0.5 * sd, "lag {}: mean {m} sd {sd}", k + 1);
        }
    }

    #[test]
    fn summary_intervals_nest_and_degenerate_case() {
        let (s, fit) = setup(500, 7);
        let ens = run_ensemble(&s, &fit, 200, WeightLaw::Exponential, 6, 3).unwrap();
        let sum = summarize(&ens);
        let (a90, b90) = sum.next_quantile_ci(0.90);
        let (a95, b95) = sum.next_quantile_ci(0.95);
        assert!(a95 <= a90 && b90 <= b95);
        for j in 0..3 {
            let (lo90, hi90) = sum.param_ci(j, 0.9);
            let (lo95, hi95) = sum.param_ci(j, 0.95);
            assert!(lo95 <= lo90 && hi90 <= hi95);
        }

        let mut degenerate = ens.clone();
        for r in &mut degenerate.replicates {
            r.e_stat = vec![0.0; 3];
            r.q_stat = degenerate.next_q_hat;
        }
        let sd = summarize(&degenerate);
        assert!(sd.cov_matrix.iter().all(|v| *v == 0.0));
        let (lo, hi) = sd.param_ci(0, 0.95);
        assert_eq!(lo, hi);
        assert_eq!(sd.next_quantile_ci(0.95), (sd.next_q_hat, sd.next_q_hat));
    }

    #[test]
    fn full_refit_with_unit_weights_matches_qmle() {
        let (s, fit) = setup(500, 8);
        let t = theta_star_full(&s, fit.orders, &ThetaBox::default(), &fit.qmle.theta_hat.to_vec(), &vec![1.0; 500]).unwrap();
        for (a, b) in t.iter().zip(fit.qmle.theta_hat.to_vec()) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
