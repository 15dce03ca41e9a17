//! Gaussian quasi-maximum likelihood for GARCH(p, q), the information
//! matrix estimate `J~` and per-observation scores.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::garch::{recursion, GarchParams, Orders, ThetaBox, VolatilityPath};
use crate::series::ReturnSeries;

/// Optimiser settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QmleOptions {
    /// Stop when the relative objective change of a step falls below this.
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Default for QmleOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            max_iter: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QmleFit {
    pub theta_hat: GarchParams,
    /// `l_t = x_t^2 / h_t + log h_t` at the estimate.
    pub loglik_terms: Vec<f64>,
    /// `n^-1 sum h_t^-2 dh_t dh_t'`, row-major `d x d`.
    pub j_tilde: Vec<f64>,
    /// Row `t` is `(1 - x_t^2 / h_t) h_t^-1 dh_t`, row-major `n x d`.
    pub score_path: Vec<f64>,
    /// Volatility path (with gradient) at the estimate.
    pub path: VolatilityPath,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Sandwich standard errors `sqrt(diag(J^-1 I J^-1) / n)`; NaN when `J~`
    /// is singular.
    #[serde(with = "crate::report::nonfinite::vec")]
    pub std_errors: Vec<f64>,
}

impl QmleFit {
    pub fn dim(&self) -> usize {
        self.theta_hat.dim()
    }

    pub fn score_row(&self, t: usize) -> &[f64] {
        let d = self.dim();
        &self.score_path[t * d..(t + 1) * d]
    }
}

/// `sum_t l_t(theta)` with the pre-sample values set to the mean of `x^2`.
pub fn qmle_objective(params: &GarchParams, series: &ReturnSeries, bounds: &ThetaBox) -> Result<f64> {
    bounds.check(params)?;
    let x2 = series.squares();
    let (h, _) = recursion(params.orders(), &params.to_vec(), &x2, series.mean_square(), false);
    Ok(x2.iter().zip(&h).map(|(x, h)| x / h + h.ln()).sum())
}

pub fn fit(series: &ReturnSeries, orders: Orders, bounds: &ThetaBox, options: &QmleOptions) -> Result<QmleFit> {
    fit_weighted(series, orders, bounds, options, None)
}

/// Minimises `sum_t w_t l_t(theta)` (unit weights when `weights` is `None`).
pub fn fit_weighted(
    series: &ReturnSeries,
    orders: Orders,
    bounds: &ThetaBox,
    options: &QmleOptions,
    weights: Option<&[f64]>,
) -> Result<QmleFit> {
    fit_from(series, orders, bounds, options, weights, &[])
}

/// Like [`fit_weighted`], with extra starting points tried before the three
/// canonical ones.
pub fn fit_from(
    series: &ReturnSeries,
    orders: Orders,
    bounds: &ThetaBox,
    options: &QmleOptions,
    weights: Option<&[f64]>,
    extra_starts: &[Vec<f64>],
) -> Result<QmleFit> {
    let n = series.len();
    let d = orders.dim();
    if n <= 10 * d {
        return Err(Error::InvalidInput(format!(
            "{orders} needs more than {} observations, got {n}",
            10 * d
        )));
    }
    if !bounds.admits(orders) {
        return Err(Error::InvalidInput(format!(
            "parameter box is empty for {orders} (p * w_lo >= rho0)"
        )));
    }
    if let Some(w) = weights {
        if w.len() != n || w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput(
                "QMLE weights must be finite, nonnegative and one per observation".into(),
            ));
        }
    }
    let problem = Objective {
        orders,
        x2: series.squares(),
        init: series.mean_square(),
        weights,
        bounds: *bounds,
    };

    let mut starts: Vec<Vec<f64>> = extra_starts.iter().filter(|s| s.len() == d).cloned().collect();
    starts.extend(canonical_starts(orders, series));
    let mut best: Option<Run> = None;
    for mut s in starts {
        bounds.project(orders, &mut s);
        let run = problem.minimise(s, options);
        if best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let best = best.expect("at least one start");
    if !best.converged {
        return Err(Error::NonConvergence {
            iterations: best.iterations,
            best: best.theta,
            objective: best.f,
        });
    }
    assemble(series, orders, best)
}

fn canonical_starts(orders: Orders, series: &ReturnSeries) -> Vec<Vec<f64>> {
    let var = series.mean_square().max(1e-12);
    [(0.2, 0.3), (0.1, 0.8), (0.05, 0.94)]
        .iter()
        .map(|&(a, b)| {
            let (a_sum, b_sum) = match (orders.q, orders.p) {
                (0, 0) => (0.0, 0.0),
                (_, 0) => (a + b * 0.5, 0.0),
                (0, _) => (0.0, b),
                _ => (a, b),
            };
            let mut theta = vec![var * (1.0 - a_sum - b_sum)];
            theta.extend(std::iter::repeat_n(a_sum / orders.q.max(1) as f64, orders.q));
            theta.extend(std::iter::repeat_n(b_sum / orders.p.max(1) as f64, orders.p));
            theta
        })
        .collect()
}

fn assemble(series: &ReturnSeries, orders: Orders, run: Run) -> Result<QmleFit> {
    let n = series.len();
    let d = orders.dim();
    let x2 = series.squares();
    let init = series.mean_square();
    let (h, grad) = recursion(orders, &run.theta, &x2, init, true);
    let grad = grad.expect("gradient requested");

    let mut loglik_terms = Vec::with_capacity(n);
    let mut score_path = vec![0.0; n * d];
    let mut j = vec![0.0; d * d];
    let mut outer = vec![0.0; d * d];
    for t in 0..n {
        let ht = h[t];
        loglik_terms.push(x2[t] / ht + ht.ln());
        let g = &grad[t * d..(t + 1) * d];
        let c = (1.0 - x2[t] / ht) / ht;
        for k in 0..d {
            score_path[t * d + k] = c * g[k];
        }
        let s = &score_path[t * d..(t + 1) * d];
        for a in 0..d {
            for b in 0..d {
                j[a * d + b] += g[a] * g[b] / (ht * ht);
                outer[a * d + b] += s[a] * s[b];
            }
        }
    }
    for v in j.iter_mut().chain(outer.iter_mut()) {
        *v /= n as f64;
    }
    let std_errors = DMatrix::from_row_slice(d, d, &j)
        .try_inverse()
        .map(|ji| {
            let v = &ji * DMatrix::from_row_slice(d, d, &outer) * &ji;
            (0..d).map(|k| (v[(k, k)] / n as f64).max(0.0).sqrt()).collect()
        })
        .unwrap_or_else(|| vec![f64::NAN; d]);

    Ok(QmleFit {
        theta_hat: GarchParams::from_slice(orders, &run.theta)?,
        loglik_terms,
        j_tilde: j,
        score_path,
        path: VolatilityPath {
            h,
            gradient: Some(grad),
            dim: d,
            init,
        },
        objective: run.f,
        converged: run.converged,
        iterations: run.iterations,
        std_errors,
    })
}

struct Run {
    theta: Vec<f64>,
    f: f64,
    converged: bool,
    iterations: usize,
}

struct Objective<'a> {
    orders: Orders,
    x2: Vec<f64>,
    init: f64,
    weights: Option<&'a [f64]>,
    bounds: ThetaBox,
}

impl Objective<'_> {
    fn value(&self, theta: &[f64]) -> f64 {
        let (h, _) = recursion(self.orders, theta, &self.x2, self.init, false);
        let mut f = 0.0;
        for (t, (x, h)) in self.x2.iter().zip(&h).enumerate() {
            let w = self.weights.map_or(1.0, |w| w[t]);
            if w != 0.0 {
                f += w * (x / h + h.ln());
            }
        }
        if f.is_finite() {
            f
        } else {
            f64::INFINITY
        }
    }

    /// Objective, gradient and expected Hessian `sum w h^-2 dh dh'`, all in
    /// the log parameterisation `phi = ln theta`.
    fn local_model(&self, theta: &[f64]) -> (f64, Vec<f64>, DMatrix<f64>) {
        let d = theta.len();
        let (h, grad) = recursion(self.orders, theta, &self.x2, self.init, true);
        let grad = grad.expect("gradient requested");
        let mut f = 0.0;
        let mut g = vec![0.0; d];
        let mut info = DMatrix::<f64>::zeros(d, d);
        for t in 0..h.len() {
            let w = self.weights.map_or(1.0, |w| w[t]);
            if w == 0.0 {
                continue;
            }
            let ht = h[t];
            f += w * (self.x2[t] / ht + ht.ln());
            let row = &grad[t * d..(t + 1) * d];
            let c = w * (1.0 - self.x2[t] / ht) / ht;
            let e = w / (ht * ht);
            for a in 0..d {
                let ga = row[a] * theta[a];
                g[a] += c * ga;
                for b in a..d {
                    info[(a, b)] += e * ga * row[b] * theta[b];
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        (f, g, info)
    }

    fn project_log(&self, phi: &mut [f64]) {
        let mut theta: Vec<f64> = phi.iter().map(|p| p.exp()).collect();
        self.bounds.project(self.orders, &mut theta);
        for (p, t) in phi.iter_mut().zip(&theta) {
            *p = t.ln();
        }
    }

    /// Projected Fisher scoring in `phi = ln theta` with Armijo backtracking
    /// along the projection arc.
    fn minimise(&self, start: Vec<f64>, options: &QmleOptions) -> Run {
        let d = start.len();
        let lo = self.bounds.w_lo.ln();
        let hi = self.bounds.w_hi.ln();
        let mut phi: Vec<f64> = start.iter().map(|t| t.ln()).collect();
        self.project_log(&mut phi);
        let mut theta: Vec<f64> = phi.iter().map(|p| p.exp()).collect();
        let mut converged = false;
        let mut iterations = 0;
        let mut f_cur = self.value(&theta);
        let mut last_change = f64::INFINITY;

        while iterations < options.max_iter {
            iterations += 1;
            let (f, g, info) = self.local_model(&theta);
            f_cur = f;
            let edge = 1e-10;
            let free: Vec<usize> = (0..d)
                .filter(|&k| !((phi[k] <= lo + edge && g[k] > 0.0) || (phi[k] >= hi - edge && g[k] < 0.0)))
                .collect();
            if free.is_empty() {
                converged = true;
                break;
            }
            let m = free.len();
            let mut a = DMatrix::from_fn(m, m, |i, j| info[(free[i], free[j])]);
            let ridge = 1e-10 * (0..m).map(|i| a[(i, i)]).sum::<f64>() / m as f64 + 1e-300;
            for i in 0..m {
                a[(i, i)] += ridge;
            }
            let rhs = DVector::from_iterator(m, free.iter().map(|&k| -g[k]));
            let step = match a.clone().cholesky() {
                Some(ch) => ch.solve(&rhs),
                None => rhs.clone(),
            };
            let mut dir = vec![0.0; d];
            for (i, &k) in free.iter().enumerate() {
                dir[k] = step[i];
            }
            let decrement: f64 = -dir.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>();
            if decrement <= 1e-14 * (1.0 + f.abs()) {
                converged = true;
                break;
            }
            // Cap the log-step so a single iteration changes no parameter by
            // more than a factor of e^3.
            let dmax = dir.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let mut alpha = if dmax > 3.0 { 3.0 / dmax } else { 1.0 };
            let mut accepted = false;
            for _ in 0..60 {
                let mut trial: Vec<f64> = phi.iter().zip(&dir).map(|(p, s)| p + alpha * s).collect();
                self.project_log(&mut trial);
                let trial_theta: Vec<f64> = trial.iter().map(|p| p.exp()).collect();
                let ft = self.value(&trial_theta);
                let predicted: f64 = g.iter().zip(trial.iter().zip(&phi)).map(|(gk, (a, b))| gk * (a - b)).sum();
                if ft <= f + 1e-4 * predicted.min(0.0) && ft.is_finite() {
                    last_change = (f - ft).abs();
                    phi = trial;
                    theta = trial_theta;
                    f_cur = ft;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            let scale = 1.0 + f.abs();
            if !accepted {
                // No decrease along the scoring direction: stationary up to
                // rounding, or stuck.
                converged = decrement <= options.rel_tol * scale;
                break;
            }
            if decrement <= 1e-4 * options.rel_tol * scale {
                converged = true;
                break;
            }
        }
        if iterations >= options.max_iter && !converged {
            converged = last_change <= options.rel_tol * (1.0 + f_cur.abs());
        }
        Run {
            theta,
            f: f_cur,
            converged,
            iterations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::garch::{simulate, InnovationLaw};

    fn arch1_grid(series: &ReturnSeries, bounds: &ThetaBox) -> (f64, f64, f64) {
        let mut best = (f64::INFINITY, 0.0, 0.0);
        let n = 200;
        for i in 0..n {
            let a0 = 0.02 + 2.0 * i as f64 / n as f64;
            for j in 0..n {
                let a1 = 0.001 + 0.999 * j as f64 / n as f64;
                let p = GarchParams::new(a0, vec![a1], vec![]).unwrap();
                let f = qmle_objective(&p, series, bounds).unwrap();
                if f < best.0 {
                    best = (f, a0, a1);
                }
            }
        }
        best
    }

    #[test]
    fn constant_model_closed_form() {
        let s = simulate(
            &GarchParams::new(1.7, vec![], vec![]).unwrap(),
            InnovationLaw::StandardNormal,
            400,
            0,
            4,
        )
        .unwrap();
        let fit = fit(&s, Orders::new(0, 0), &ThetaBox::default(), &QmleOptions::default()).unwrap();
        assert!((fit.theta_hat.alpha0 - s.mean_square()).abs() < 1e-6 * s.mean_square());
        let p = GarchParams::new(1.7, vec![], vec![]).unwrap();
        let direct: f64 = s.squares().iter().map(|x| x / 1.7 + 1.7f64.ln()).sum();
        assert!((qmle_objective(&p, &s, &ThetaBox::default()).unwrap() - direct).abs() < 1e-9);
    }

    #[test]
    fn arch1_grid_oracle() {
        let b = ThetaBox::default();
        for (n, seed) in [(50usize, 1u64), (200, 2)] {
            let truth = GarchParams::new(0.5, vec![0.4], vec![]).unwrap();
            let s = simulate(&truth, InnovationLaw::StandardNormal, n, 100, seed).unwrap();
            let (fg, a0, a1) = arch1_grid(&s, &b);
            let fit = fit(&s, Orders::new(0, 1), &b, &QmleOptions::default()).unwrap();
            assert!(fit.objective <= fg + 1e-9, "optimiser worse than grid");
            // Within a couple of grid cells of the grid minimiser.
            assert!((fit.theta_hat.alpha0 - a0).abs() < 0.03, "{} vs {a0}", fit.theta_hat.alpha0);
            assert!((fit.theta_hat.alpha[0] - a1).abs() < 0.03, "{} vs {a1}", fit.theta_hat.alpha[0]);
        }
    }

    #[test]
    fn fifty_point_grid_minimum_is_consistent() {
        let b = ThetaBox::default();
        let truth = GarchParams::new(0.5, vec![0.4], vec![]).unwrap();
        let s = simulate(&truth, InnovationLaw::StandardNormal, 50, 100, 1).unwrap();
        let (fg, a0, a1) = arch1_grid(&s, &b);
        let p = GarchParams::new(a0, vec![a1], vec![]).unwrap();
        assert_eq!(qmle_objective(&p, &s, &b).unwrap(), fg);
        assert_eq!(qmle_objective(&p, &s, &b).unwrap(), qmle_objective(&p, &s, &b).unwrap());
    }

    #[test]
    fn objective_gradient_matches_finite_differences() {
        let truth = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let s = simulate(&truth, InnovationLaw::StandardNormal, 400, 200, 6).unwrap();
        let b = ThetaBox::default();
        let fit = fit(&s, Orders::garch11(), &b, &QmleOptions::default()).unwrap();
        let mut rng = crate::rng::stream_rng(9, 0);
        use rand::Rng;
        for _ in 0..20 {
            let theta = vec![
                rng.random_range(0.05..0.5),
                rng.random_range(0.05..0.4),
                rng.random_range(0.1..0.8),
            ];
            // score rows summed at an arbitrary point: reuse assemble.
            let run = Run {
                theta: theta.clone(),
                f: 0.0,
                converged: true,
                iterations: 0,
            };
            let at = assemble(&s, Orders::garch11(), run).unwrap();
            let grad: Vec<f64> = (0..3).map(|k| (0..s.len()).map(|t| at.score_row(t)[k]).sum()).collect();
            for k in 0..3 {
                let step = 1e-6 * theta[k];
                let mut up = theta.clone();
                let mut dn = theta.clone();
                up[k] += step;
                dn[k] -= step;
                let fu = qmle_objective(&GarchParams::from_slice(Orders::garch11(), &up).unwrap(), &s, &b).unwrap();
                let fd = qmle_objective(&GarchParams::from_slice(Orders::garch11(), &dn).unwrap(), &s, &b).unwrap();
                let num = (fu - fd) / (2.0 * step);
                assert!((num - grad[k]).abs() <= 1e-4 * num.abs().max(1.0), "k={k} {num} vs {}", grad[k]);
            }
        }
        let _ = fit;
    }

    #[test]
    fn fitted_point_properties() {
        let truth = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let b = ThetaBox::default();
        for seed in 0..10 {
            let s = simulate(&truth, InnovationLaw::StandardNormal, 1000, 500, seed).unwrap();
            let fit = fit(&s, Orders::garch11(), &b, &QmleOptions::default()).unwrap();
            b.check(&fit.theta_hat).unwrap();
            assert!(fit.objective <= qmle_objective(&truth, &s, &b).unwrap() + 1e-9);
            let j = DMatrix::from_row_slice(3, 3, &fit.j_tilde);
            assert!((&j - j.transpose()).abs().max() < 1e-12);
            assert!(j.symmetric_eigenvalues().iter().all(|&e| e >= -1e-10));
            assert!(fit.loglik_terms.iter().all(|v| v.is_finite()));
            // Interior stationarity of the objective.
            let grad: Vec<f64> = (0..3).map(|k| (0..s.len()).map(|t| fit.score_row(t)[k]).sum()).collect();
            let interior = fit.theta_hat.to_vec().iter().all(|&v| v > 1e-6);
            if interior {
                assert!(grad.iter().all(|g| g.abs() < 1e-2), "{grad:?}");
            }
        }
    }

    #[test]
    fn consistency_at_n5000() {
        let truth = GarchParams::garch11(0.1, 0.15, 0.8).unwrap();
        let b = ThetaBox::default();
        let reps = 100;
        let mut est = Vec::new();
        for seed in 0..reps {
            let s = simulate(&truth, InnovationLaw::StandardNormal, 5000, 500, 1000 + seed).unwrap();
            est.push(fit(&s, Orders::garch11(), &b, &QmleOptions::default()).unwrap().theta_hat.to_vec());
        }
        for (k, t) in truth.to_vec().iter().enumerate() {
            let col: Vec<f64> = est.iter().map(|e| e[k]).collect();
            let m = crate::stats::mean(&col);
            let se = crate::stats::std_dev(&col) / (reps as f64).sqrt();
            assert!((m - t).abs() < 3.0 * se + 1e-3, "k={k}: mean {m} truth {t} se {se}");
        }
    }

    #[test]
    fn weighted_fit_with_unit_weights_matches_plain_fit() {
        let truth = GarchParams::garch11(0.4, 0.4, 0.4).unwrap();
        let s = simulate(&truth, InnovationLaw::StandardNormal, 800, 500, 3).unwrap();
        let b = ThetaBox::default();
        let a = fit(&s, Orders::garch11(), &b, &QmleOptions::default()).unwrap();
        let w = vec![1.0; s.len()];
        let c = fit_weighted(&s, Orders::garch11(), &b, &QmleOptions::default(), Some(&w)).unwrap();
        for (x, y) in a.theta_hat.to_vec().iter().zip(c.theta_hat.to_vec()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn short_series_is_rejected() {
        let s = ReturnSeries::new(vec![0.1; 30]).unwrap();
        assert!(matches!(
            fit(&s, Orders::garch11(), &ThetaBox::default(), &QmleOptions::default()),
            Err(Error::InvalidInput(_))
        ));
    }
}
