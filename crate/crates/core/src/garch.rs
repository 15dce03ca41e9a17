//! GARCH(p, q) parameters, the admissible parameter box, the volatility
//! recursion with its analytic gradient, and simulation.
//!
//! Orders follow the `GARCH(p, q)` convention: `q` ARCH lags (`alpha`) and
//! `p` GARCH lags (`beta`). Parameter vectors are laid out as
//! `(alpha0, alpha_1..alpha_q, beta_1..beta_p)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::quantreg::Design;
use crate::rng::stream_rng;
use crate::series::ReturnSeries;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Orders {
    /// Number of lagged conditional variances.
    pub p: usize,
    /// Number of lagged squared returns.
    pub q: usize,
}

impl Orders {
    pub const fn new(p: usize, q: usize) -> Self {
        Self { p, q }
    }

    pub const fn garch11() -> Self {
        Self { p: 1, q: 1 }
    }

    /// Length of the parameter vector, `p + q + 1`.
    pub const fn dim(&self) -> usize {
        self.p + self.q + 1
    }
}

impl std::fmt::Display for Orders {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "GARCH({},{})", self.p, self.q)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GarchParams {
    pub alpha0: f64,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl GarchParams {
    /// Structural checks only (finite, `alpha0 > 0`, lag coefficients `>= 0`).
    /// Membership of the estimation box is checked by [`ThetaBox::check`].
    pub fn new(alpha0: f64, alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        let p = Self { alpha0, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn garch11(alpha0: f64, alpha1: f64, beta1: f64) -> Result<Self> {
        Self::new(alpha0, vec![alpha1], vec![beta1])
    }

    pub fn from_slice(orders: Orders, theta: &[f64]) -> Result<Self> {
        if theta.len() != orders.dim() {
            return Err(Error::InvalidInput(format!(
                "{orders} needs {} parameters, got {}",
                orders.dim(),
                theta.len()
            )));
        }
        Self::new(
            theta[0],
            theta[1..=orders.q].to_vec(),
            theta[orders.q + 1..].to_vec(),
        )
    }

    fn validate(&self) -> Result<()> {
        let all = std::iter::once(&self.alpha0).chain(&self.alpha).chain(&self.beta);
        if all.clone().any(|v| !v.is_finite()) {
            return Err(Error::ConstraintViolation("non-finite parameter".into()));
        }
        if self.alpha0 <= 0.0 {
            return Err(Error::ConstraintViolation(format!(
                "alpha0 = {} must be positive",
                self.alpha0
            )));
        }
        if self.alpha.iter().chain(&self.beta).any(|&v| v < 0.0) {
            return Err(Error::ConstraintViolation(
                "lag coefficients must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    pub fn orders(&self) -> Orders {
        Orders::new(self.beta.len(), self.alpha.len())
    }

    pub fn dim(&self) -> usize {
        1 + self.alpha.len() + self.beta.len()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.dim());
        v.push(self.alpha0);
        v.extend_from_slice(&self.alpha);
        v.extend_from_slice(&self.beta);
        v
    }

    pub fn persistence(&self) -> f64 {
        self.alpha.iter().sum::<f64>() + self.beta.iter().sum::<f64>()
    }

    /// `alpha0 / (1 - sum alpha - sum beta)` when the process is covariance
    /// stationary.
    pub fn unconditional_variance(&self) -> Option<f64> {
        let s = self.persistence();
        (s < 1.0).then(|| self.alpha0 / (1.0 - s))
    }
}

/// The compact estimation set: every coefficient in `[w_lo, w_hi]` and
/// `sum beta <= rho0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaBox {
    pub w_lo: f64,
    pub w_hi: f64,
    pub rho0: f64,
}

impl Default for ThetaBox {
    fn default() -> Self {
        Self {
            w_lo: 1e-8,
            w_hi: 10.0,
            rho0: 0.999,
        }
    }
}

impl ThetaBox {
    pub fn new(w_lo: f64, w_hi: f64, rho0: f64) -> Result<Self> {
        if !(w_lo > 0.0 && w_hi > w_lo && w_hi.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "box bounds must satisfy 0 < w_lo < w_hi (got {w_lo}, {w_hi})"
            )));
        }
        if !(rho0 > 0.0 && rho0 < 1.0) {
            return Err(Error::InvalidInput(format!("rho0 = {rho0} must lie in (0, 1)")));
        }
        Ok(Self { w_lo, w_hi, rho0 })
    }

    /// The box is non-empty for `p` GARCH lags iff `p * w_lo < rho0`.
    pub fn admits(&self, orders: Orders) -> bool {
        orders.p as f64 * self.w_lo < self.rho0
    }

    pub fn check(&self, params: &GarchParams) -> Result<()> {
        params.validate()?;
        let theta = params.to_vec();
        if let Some((i, v)) = theta
            .iter()
            .enumerate()
            .find(|(_, &v)| v < self.w_lo || v > self.w_hi)
        {
            return Err(Error::ConstraintViolation(format!(
                "component {i} = {v:e} outside [{:e}, {:e}]",
                self.w_lo, self.w_hi
            )));
        }
        let sb: f64 = params.beta.iter().sum();
        if sb > self.rho0 {
            return Err(Error::ConstraintViolation(format!(
                "sum of beta = {sb} exceeds rho0 = {}",
                self.rho0
            )));
        }
        Ok(())
    }

    /// Euclidean-ish projection used by the optimiser: clip into the box, then
    /// shrink the beta block proportionally if its sum exceeds `rho0`.
    pub fn project(&self, orders: Orders, theta: &mut [f64]) {
        for v in theta.iter_mut() {
            *v = v.clamp(self.w_lo, self.w_hi);
        }
        let betas = &mut theta[orders.q + 1..];
        let sb: f64 = betas.iter().sum();
        if sb > self.rho0 {
            let scale = self.rho0 / sb * (1.0 - 4.0 * f64::EPSILON);
            for b in betas.iter_mut() {
                *b = (*b * scale).max(self.w_lo);
            }
        }
    }
}

/// Fitted conditional variances `h_1..h_n` and optionally `dh_t / dtheta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolatilityPath {
    pub h: Vec<f64>,
    /// Row-major `n x dim` gradient matrix.
    pub gradient: Option<Vec<f64>>,
    pub dim: usize,
    /// Value used for every pre-sample `x^2` and `h`.
    pub init: f64,
}

impl VolatilityPath {
    pub fn len(&self) -> usize {
        self.h.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h.is_empty()
    }

    pub fn gradient_row(&self, t: usize) -> Option<&[f64]> {
        self.gradient
            .as_ref()
            .map(|g| &g[t * self.dim..(t + 1) * self.dim])
    }
}

/// Unchecked recursion `h_t = theta_0 + sum alpha_i x^2_{t-i} + sum beta_j h_{t-j}`
/// with every pre-sample value equal to `init` and zero pre-sample gradients.
pub(crate) fn recursion(
    orders: Orders,
    theta: &[f64],
    x2: &[f64],
    init: f64,
    want_gradient: bool,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let n = x2.len();
    let dim = orders.dim();
    let (q, p) = (orders.q, orders.p);
    let alpha = &theta[1..=q];
    let beta = &theta[q + 1..];
    let mut h = vec![0.0; n];
    let mut grad = want_gradient.then(|| vec![0.0; n * dim]);

    for t in 0..n {
        let mut ht = theta[0];
        for (i, a) in alpha.iter().enumerate() {
            ht += a * if t > i { x2[t - i - 1] } else { init };
        }
        for (j, b) in beta.iter().enumerate() {
            ht += b * if t > j { h[t - j - 1] } else { init };
        }
        h[t] = ht;

        if let Some(g) = grad.as_mut() {
            let (past, rest) = g.split_at_mut(t * dim);
            let row = &mut rest[..dim];
            row[0] = 1.0;
            for i in 0..q {
                row[1 + i] = if t > i { x2[t - i - 1] } else { init };
            }
            for j in 0..p {
                row[1 + q + j] = if t > j { h[t - j - 1] } else { init };
            }
            for (j, b) in beta.iter().enumerate() {
                if t > j {
                    let prev = &past[(t - j - 1) * dim..(t - j) * dim];
                    for (r, pv) in row.iter_mut().zip(prev) {
                        *r += b * pv;
                    }
                }
            }
        }
    }
    (h, grad)
}

/// `h~_t(theta)` for `t = 1..n` with all pre-sample values set to the sample
/// mean of `x_t^2`, plus the recursive gradient when requested.
pub fn volatility_path(
    params: &GarchParams,
    series: &ReturnSeries,
    bounds: &ThetaBox,
    want_gradient: bool,
) -> Result<VolatilityPath> {
    bounds.check(params)?;
    let x2 = series.squares();
    let init = series.mean_square();
    let orders = params.orders();
    let (h, gradient) = recursion(orders, &params.to_vec(), &x2, init, want_gradient);
    Ok(VolatilityPath {
        h,
        gradient,
        dim: orders.dim(),
        init,
    })
}

/// Regressor row `(1, x^2_{t-1..t-q}, h_{t-1..t-p})` for 0-based position `t`
/// (`t = n` gives the one-step-ahead row).
pub(crate) fn regressor_row(orders: Orders, x2: &[f64], h: &[f64], x2_init: f64, h_init: f64, t: usize, out: &mut [f64]) {
    out[0] = 1.0;
    for i in 0..orders.q {
        out[1 + i] = if t > i { x2[t - i - 1] } else { x2_init };
    }
    for j in 0..orders.p {
        out[1 + orders.q + j] = if t > j { h[t - j - 1] } else { h_init };
    }
}

pub(crate) fn build_design(orders: Orders, x2: &[f64], h: &[f64], x2_init: f64, h_init: f64) -> Design {
    let n = x2.len();
    let d = orders.dim();
    let mut data = vec![0.0; n * d];
    for t in 0..n {
        regressor_row(orders, x2, h, x2_init, h_init, t, &mut data[t * d..(t + 1) * d]);
    }
    Design::from_row_major(n, d, data).expect("dimensions are consistent")
}

/// Design matrix with rows `z~_t`, pre-sample entries at the path's
/// initialisation constant.
pub fn regressor_matrix(orders: Orders, path: &VolatilityPath, series: &ReturnSeries) -> Result<Design> {
    if path.len() != series.len() {
        return Err(Error::InvalidInput(format!(
            "volatility path has {} points, series has {}",
            path.len(),
            series.len()
        )));
    }
    Ok(build_design(orders, &series.squares(), &path.h, path.init, path.init))
}

/// `z~_{n+1}` assembled from the last `q` squared returns and last `p`
/// fitted variances.
pub fn next_regressor(orders: Orders, path: &VolatilityPath, series: &ReturnSeries) -> Vec<f64> {
    let mut out = vec![0.0; orders.dim()];
    regressor_row(orders, &series.squares(), &path.h, path.init, path.init, series.len(), &mut out);
    out
}

/// Distribution of the unit-variance innovations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InnovationLaw {
    StandardNormal,
    /// Student's t with `df > 2` degrees of freedom, scaled by
    /// `sqrt((df - 2) / df)` to unit variance.
    StandardizedStudentT { df: f64 },
}

impl InnovationLaw {
    pub fn student_t(df: f64) -> Result<Self> {
        if df > 2.0 && df.is_finite() {
            Ok(Self::StandardizedStudentT { df })
        } else {
            Err(Error::InvalidInput(format!(
                "standardized Student t needs df > 2, got {df}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::StandardNormal => StandardNormal.sample(rng),
            Self::StandardizedStudentT { df } => {
                let t: f64 = StudentT::new(df).expect("df validated").sample(rng);
                t * ((df - 2.0) / df).sqrt()
            }
        }
    }

    /// `Q_{tau, eta}`, the tau-quantile of the standardised innovation.
    pub fn quantile(&self, tau: f64) -> f64 {
        match *self {
            Self::StandardNormal => crate::stats::normal_quantile(tau),
            Self::StandardizedStudentT { df } => {
                StudentsT::new(0.0, 1.0, df)
                    .expect("df validated")
                    .inverse_cdf(tau)
                    * ((df - 2.0) / df).sqrt()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::StandardNormal => crate::stats::normal_cdf(x),
            Self::StandardizedStudentT { df } => StudentsT::new(0.0, 1.0, df)
                .expect("df validated")
                .cdf(x / ((df - 2.0) / df).sqrt()),
        }
    }
}

/// Simulated returns together with the true conditional variances.
#[derive(Debug, Clone)]
pub struct SimulatedPath {
    pub series: ReturnSeries,
    /// True `h_t` for the retained observations.
    pub h: Vec<f64>,
    /// True `h_{n+1}`, known once `x_n` is drawn.
    pub h_next: f64,
}

pub const DEFAULT_BURN_IN: usize = 500;

/// Simulates `burn_in + n` draws of the exact recursion and keeps the last `n`.
/// The recursion starts at the unconditional variance when it exists and at
/// `alpha0` otherwise.
pub fn simulate(
    params: &GarchParams,
    law: InnovationLaw,
    n: usize,
    burn_in: usize,
    seed: u64,
) -> Result<ReturnSeries> {
    Ok(simulate_path(params, law, n, burn_in, &mut stream_rng(seed, 0))?.series)
}

pub fn simulate_path<R: Rng + ?Sized>(
    params: &GarchParams,
    law: InnovationLaw,
    n: usize,
    burn_in: usize,
    rng: &mut R,
) -> Result<SimulatedPath> {
    params.validate()?;
    if n == 0 {
        return Err(Error::InvalidInput("cannot simulate an empty series".into()));
    }
    let start = params.unconditional_variance().unwrap_or(params.alpha0);
    let (q, p) = (params.alpha.len(), params.beta.len());
    let total = burn_in + n;
    // Ring-free buffers: the histories are short compared to `total`.
    let mut x2_hist = vec![start; q.max(1)];
    let mut h_hist = vec![start; p.max(1)];
    let mut xs = Vec::with_capacity(n);
    let mut hs = Vec::with_capacity(n);

    let next_h = |x2_hist: &[f64], h_hist: &[f64]| -> f64 {
        let mut h = params.alpha0;
        for (i, a) in params.alpha.iter().enumerate() {
            h += a * x2_hist[i];
        }
        for (j, b) in params.beta.iter().enumerate() {
            h += b * h_hist[j];
        }
        h
    };

    for t in 0..total {
        let h = next_h(&x2_hist, &h_hist);
        let x = h.sqrt() * law.sample(rng);
        if q > 0 {
            x2_hist.rotate_right(1);
            x2_hist[0] = x * x;
        }
        if p > 0 {
            h_hist.rotate_right(1);
            h_hist[0] = h;
        }
        if t >= burn_in {
            xs.push(x);
            hs.push(h);
        }
    }
    let h_next = next_h(&x2_hist, &h_hist);
    Ok(SimulatedPath {
        series: ReturnSeries::new(xs)?,
        h: hs,
        h_next,
    })
}
