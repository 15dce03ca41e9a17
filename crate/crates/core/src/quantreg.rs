//! Exact weighted linear quantile regression,
//! `min_b sum_t w_t rho_tau(y_t - x_t'b)`, by a Barrodale–Roberts style
//! simplex that walks between interpolating bases.
//!
//! Every solution is a basic one: `d` observations are fitted exactly and
//! their indices are reported in [`QrSolution::active_basis`]. When the
//! optimum is not unique the lexicographically smallest optimal vertex is
//! returned.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `rho_tau(u) = u (tau - 1{u < 0})`.
pub fn check_loss(u: f64, tau: f64) -> f64 {
    if u < 0.0 {
        u * (tau - 1.0)
    } else {
        u * tau
    }
}

/// Dense row-major `n x d` design matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Design {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Design {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "design data has {} entries, expected {rows} x {cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidInput("ragged design rows".into()));
        }
        Self::from_row_major(rows.len(), cols, rows.concat())
    }

    /// Single column of ones.
    pub fn intercept(n: usize) -> Self {
        Self {
            rows: n,
            cols: 1,
            data: vec![1.0; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, t: usize) -> &[f64] {
        &self.data[t * self.cols..(t + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|t| self.data[t * self.cols + j]).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `X b`.
    pub fn mul_vec(&self, b: &[f64]) -> Vec<f64> {
        (0..self.rows).map(|t| dot(self.row(t), b)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrProblem {
    pub y: Vec<f64>,
    pub design: Design,
    pub weights: Vec<f64>,
    pub tau: f64,
}

impl QrProblem {
    /// Weights must be finite and nonnegative; zero-weight rows are ignored
    /// by the solver, so multiplier-bootstrap laws with atoms at zero work.
    pub fn new(y: Vec<f64>, design: Design, weights: Vec<f64>, tau: f64) -> Result<Self> {
        if !(tau > 0.0 && tau < 1.0) {
            return Err(Error::InvalidInput(format!("tau = {tau} must lie in (0, 1)")));
        }
        let n = design.rows();
        if y.len() != n || weights.len() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {} responses, {} weights, {n} design rows",
                y.len(),
                weights.len()
            )));
        }
        if n < design.cols() || design.cols() == 0 {
            return Err(Error::InvalidInput(format!(
                "need n >= d >= 1 (n = {n}, d = {})",
                design.cols()
            )));
        }
        if y.iter().chain(design.as_slice()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite response or regressor".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::InvalidInput("weights must be finite and nonnegative".into()));
        }
        Ok(Self {
            y,
            design,
            weights,
            tau,
        })
    }

    pub fn unweighted(y: Vec<f64>, design: Design, tau: f64) -> Result<Self> {
        let n = y.len();
        Self::new(y, design, vec![1.0; n], tau)
    }

    pub fn objective(&self, coef: &[f64]) -> f64 {
        (0..self.y.len())
            .map(|t| {
                let w = self.weights[t];
                if w == 0.0 {
                    0.0
                } else {
                    w * check_loss(self.y[t] - dot(self.design.row(t), coef), self.tau)
                }
            })
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QrStatus {
    Optimal,
    /// Optimal, but the vertex has extra zero residuals or the optimum is not
    /// unique.
    DegenerateOptimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrSolution {
    pub coef: Vec<f64>,
    pub objective: f64,
    /// Indices (into the original problem) of the exactly fitted observations.
    pub active_basis: Vec<usize>,
    pub status: QrStatus,
    pub iterations: usize,
}

impl QrSolution {
    /// Residuals `y - X coef` with the basic residuals set to exactly zero.
    pub fn residuals(&self, problem: &QrProblem) -> Vec<f64> {
        let mut r: Vec<f64> = (0..problem.y.len())
            .map(|t| problem.y[t] - dot(problem.design.row(t), &self.coef))
            .collect();
        for &t in &self.active_basis {
            r[t] = 0.0;
        }
        r
    }
}

pub fn solve(problem: &QrProblem) -> Result<QrSolution> {
    solve_from(problem, &[])
}

/// Solves starting from a suggested basis (typically the optimum of a nearby
/// problem). Unusable or missing entries are completed automatically.
pub fn solve_from(problem: &QrProblem, basis_hint: &[usize]) -> Result<QrSolution> {
    let d = problem.design.cols();
    let keep: Vec<usize> = (0..problem.y.len())
        .filter(|&t| problem.weights[t] > 0.0)
        .collect();
    if keep.len() < d {
        return Err(Error::Unbounded);
    }
    let mut x = Vec::with_capacity(keep.len() * d);
    for &t in &keep {
        x.extend_from_slice(problem.design.row(t));
    }
    let y: Vec<f64> = keep.iter().map(|&t| problem.y[t]).collect();
    let w: Vec<f64> = keep.iter().map(|&t| problem.weights[t]).collect();
    let sub = Sub {
        x: &x,
        w: &w,
        n: keep.len(),
        d,
        tau: problem.tau,
    };
    check_rank(&sub)?;

    let mut position = vec![usize::MAX; problem.y.len()];
    for (i, &t) in keep.iter().enumerate() {
        position[t] = i;
    }
    let hint: Vec<usize> = basis_hint
        .iter()
        .filter_map(|&t| position.get(t).copied().filter(|&i| i != usize::MAX))
        .collect();
    let basis = initial_basis(&sub, &y, &hint);
    let (basis, coef, iterations, degenerate) = sub.run(&y, basis)?;

    let mut active_basis: Vec<usize> = basis.iter().map(|&i| keep[i]).collect();
    active_basis.sort_unstable();
    Ok(QrSolution {
        objective: problem.objective(&coef),
        coef,
        active_basis,
        status: if degenerate {
            QrStatus::DegenerateOptimal
        } else {
            QrStatus::Optimal
        },
        iterations,
    })
}

/// Per-column subgradient certificate: for every column `j` the sum
/// `sum_{u>0} w tau z_j - sum_{u<0} w (1 - tau) z_j` must be coverable by the
/// zero-residual observations, i.e. bounded in absolute value by
/// `sum_{u=0} w max(tau, 1 - tau) |z_j|` (up to `tol`).
pub fn subgradient_certificate(problem: &QrProblem, coef: &[f64], zero_tol: f64, tol: f64) -> bool {
    let d = problem.design.cols();
    let tau = problem.tau;
    let mut lhs = vec![0.0; d];
    let mut slack = vec![0.0; d];
    for t in 0..problem.y.len() {
        let w = problem.weights[t];
        let z = problem.design.row(t);
        let u = problem.y[t] - dot(z, coef);
        for j in 0..d {
            if u.abs() <= zero_tol {
                slack[j] += w * tau.max(1.0 - tau) * z[j].abs();
            } else if u > 0.0 {
                lhs[j] += w * tau * z[j];
            } else {
                lhs[j] -= w * (1.0 - tau) * z[j];
            }
        }
    }
    lhs.iter().zip(&slack).all(|(l, s)| l.abs() <= s + tol)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Positive-weight subproblem seen by the simplex.
struct Sub<'a> {
    x: &'a [f64],
    w: &'a [f64],
    n: usize,
    d: usize,
    tau: f64,
}

/// Outcome of examining every edge at a vertex.
struct Vertex {
    basis_inv: DMatrix<f64>,
    coef: Vec<f64>,
    residuals: Vec<f64>,
    /// `derivs[2j]` is the `+` direction of basic row `j`, `derivs[2j+1]` the `-`.
    derivs: Vec<f64>,
    zero_rows: Vec<usize>,
}

impl Sub<'_> {
    fn row(&self, t: usize) -> &[f64] {
        &self.x[t * self.d..(t + 1) * self.d]
    }

    fn scale(&self) -> f64 {
        (0..self.n)
            .map(|t| self.w[t] * self.row(t).iter().fold(0.0f64, |m, v| m.max(v.abs())))
            .sum::<f64>()
            .max(f64::MIN_POSITIVE)
    }

    fn run(&self, y: &[f64], mut basis: Vec<usize>) -> Result<(Vec<usize>, Vec<f64>, usize, bool)> {
        let tol = 1e-12 * self.scale();
        let max_iter = 50 * (self.n + self.d) + 1000;
        let mut iterations = 0;

        // Phase 1 on slightly perturbed responses: no ties, so every vertex is
        // nondegenerate and the edge test is exact.
        let ymax = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if ymax > 0.0 {
            let eps = 1e-9 * ymax;
            let y_pert: Vec<f64> = y
                .iter()
                .enumerate()
                .map(|(t, v)| v + eps * jitter(t as u64))
                .collect();
            iterations += self.descend(&y_pert, &mut basis, tol, max_iter, false)?;
        }
        // Phase 2 on the original responses, then the tie-breaking walk.
        iterations += self.descend(y, &mut basis, tol, max_iter, false)?;
        iterations += self.descend(y, &mut basis, tol, max_iter, true)?;

        let v = self.vertex(y, &basis)?;
        let flat = v.derivs.iter().any(|&dv| dv.abs() <= tol);
        Ok((basis, v.coef, iterations, flat || !v.zero_rows.is_empty()))
    }

    fn vertex(&self, y: &[f64], basis: &[usize]) -> Result<Vertex> {
        let d = self.d;
        let xh = DMatrix::from_fn(d, d, |k, j| self.row(basis[k])[j]);
        let basis_inv = xh.try_inverse().ok_or_else(|| Error::RankDeficient {
            column: d - 1,
            depends_on: (0..d - 1).collect(),
        })?;
        let yh = DVector::from_iterator(d, basis.iter().map(|&t| y[t]));
        let coef: Vec<f64> = (&basis_inv * yh).iter().copied().collect();

        let mut in_basis = vec![usize::MAX; self.n];
        for (k, &t) in basis.iter().enumerate() {
            in_basis[t] = k;
        }
        let mut residuals = vec![0.0; self.n];
        let mut g = vec![0.0; d];
        let mut zero_rows = Vec::new();
        for t in 0..self.n {
            if in_basis[t] != usize::MAX {
                continue;
            }
            let z = self.row(t);
            let fit = dot(z, &coef);
            let magnitude: f64 = z.iter().zip(&coef).map(|(a, b)| (a * b).abs()).sum();
            let r = y[t] - fit;
            if r.abs() <= 1e-12 * (y[t].abs() + magnitude) + 1e-300 {
                zero_rows.push(t);
                continue;
            }
            residuals[t] = r;
            let psi = if r < 0.0 { self.tau - 1.0 } else { self.tau };
            let s = self.w[t] * psi;
            for (gj, zj) in g.iter_mut().zip(z) {
                *gj += s * zj;
            }
        }
        let mut derivs = vec![0.0; 2 * d];
        for j in 0..d {
            let c: f64 = (0..d).map(|k| basis_inv[(k, j)] * g[k]).sum();
            let wh = self.w[basis[j]];
            let (mut zp, mut zm) = (0.0, 0.0);
            for &t in &zero_rows {
                let a: f64 = (0..d).map(|k| self.row(t)[k] * basis_inv[(k, j)]).sum();
                let up = self.tau * a.max(0.0) + (1.0 - self.tau) * (-a).max(0.0);
                let dn = self.tau * (-a).max(0.0) + (1.0 - self.tau) * a.max(0.0);
                zp += self.w[t] * up;
                zm += self.w[t] * dn;
            }
            derivs[2 * j] = c + wh * self.tau + zp;
            derivs[2 * j + 1] = -c + wh * (1.0 - self.tau) + zm;
        }
        Ok(Vertex {
            basis_inv,
            coef,
            residuals,
            derivs,
            zero_rows,
        })
    }

    /// Pivots until no edge improves the objective (or, with `lex`, until no
    /// objective-neutral edge decreases the coefficients lexicographically).
    fn descend(
        &self,
        y: &[f64],
        basis: &mut [usize],
        tol: f64,
        max_iter: usize,
        lex: bool,
    ) -> Result<usize> {
        let d = self.d;
        let mut iter = 0;
        loop {
            let v = self.vertex(y, basis)?;
            let choice = if lex {
                (0..2 * d).find(|&e| {
                    v.derivs[e].abs() <= tol && {
                        let sigma = if e % 2 == 0 { 1.0 } else { -1.0 };
                        lex_negative(&v.basis_inv, e / 2, sigma)
                    }
                })
            } else {
                let (e, &dmin) = v
                    .derivs
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(b.1))
                    .expect("d >= 1");
                (dmin < -tol).then_some(e)
            };
            let Some(edge) = choice else {
                return Ok(iter);
            };
            if iter >= max_iter {
                return Err(Error::NonConvergence {
                    iterations: iter,
                    best: v.coef,
                    objective: f64::NAN,
                });
            }
            let j = edge / 2;
            let sigma = if edge % 2 == 0 { 1.0 } else { -1.0 };
            let entering = self.ratio_test(&v, basis, j, sigma, v.derivs[edge], tol)?;
            basis[j] = entering;
            iter += 1;
        }
    }

    /// Weighted-median line search along edge `(j, sigma)`: walk breakpoints
    /// in order until the directional slope turns nonnegative.
    fn ratio_test(
        &self,
        v: &Vertex,
        basis: &[usize],
        j: usize,
        sigma: f64,
        slope0: f64,
        tol: f64,
    ) -> Result<usize> {
        let d = self.d;
        let u: Vec<f64> = (0..d).map(|k| v.basis_inv[(k, j)]).collect();
        let unorm = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let mut breaks: Vec<(f64, f64, usize)> = Vec::new();
        for t in 0..self.n {
            let r = v.residuals[t];
            if r == 0.0 || basis.contains(&t) {
                continue;
            }
            let z = self.row(t);
            let a = sigma * dot(z, &u);
            let znorm = z.iter().map(|x| x * x).sum::<f64>().sqrt();
            if a.abs() <= 1e-13 * znorm * unorm || r * a >= 0.0 {
                continue;
            }
            breaks.push((-r / a, self.w[t] * a.abs(), t));
        }
        breaks.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.2.cmp(&b.2)));
        let mut slope = slope0;
        for &(_, inc, t) in &breaks {
            slope += inc;
            if slope >= -tol {
                return Ok(t);
            }
        }
        Err(Error::Unbounded)
    }
}

/// True when moving along `delta = -sigma * u_j` decreases the coefficient
/// vector in lexicographic order.
fn lex_negative(basis_inv: &DMatrix<f64>, j: usize, sigma: f64) -> bool {
    let d = basis_inv.nrows();
    let scale = (0..d).fold(0.0f64, |m, k| m.max(basis_inv[(k, j)].abs()));
    for k in 0..d {
        let delta = -sigma * basis_inv[(k, j)];
        if delta.abs() > 1e-12 * scale {
            return delta < 0.0;
        }
    }
    false
}

/// Deterministic value in `(-1, 1)` per observation.
fn jitter(t: u64) -> f64 {
    let z = crate::rng::derive_seed(0x005E_ED0F_71E5, t);
    ((z >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
}

/// Gram–Schmidt on the columns of the positive-weight rows.
fn check_rank(sub: &Sub<'_>) -> Result<()> {
    let (n, d) = (sub.n, sub.d);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(d);
    for k in 0..d {
        let col: Vec<f64> = (0..n).map(|t| sub.x[t * d + k]).collect();
        let norm0 = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        let mut v = col.clone();
        for q in &ortho {
            let c = dot(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 || norm <= 1e-10 * norm0 {
            let depends_on = if k == 0 || norm0 == 0.0 {
                Vec::new()
            } else {
                let prev = DMatrix::from_fn(n, k, |t, j| sub.x[t * d + j]);
                let coeffs = prev
                    .svd(true, true)
                    .solve(&DVector::from_vec(col), 1e-12)
                    .map(|c| c.iter().copied().collect::<Vec<_>>())
                    .unwrap_or_default();
                let cmax = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
                (0..k).filter(|&j| coeffs[j].abs() > 1e-8 * cmax).collect()
            };
            return Err(Error::RankDeficient { column: k, depends_on });
        }
        for a in &mut v {
            *a /= norm;
        }
        ortho.push(v);
    }
    Ok(())
}

/// Keeps usable hinted rows, then completes the basis with linearly
/// independent rows closest to a weighted least-squares fit.
fn initial_basis(sub: &Sub<'_>, y: &[f64], hint: &[usize]) -> Vec<usize> {
    let d = sub.d;
    let mut chosen: Vec<usize> = Vec::with_capacity(d);
    let mut ortho: Vec<Vec<f64>> = Vec::with_capacity(d);
    let mut try_add = |t: usize, chosen: &mut Vec<usize>| {
        if chosen.len() == d || chosen.contains(&t) {
            return;
        }
        let z = sub.row(t);
        let norm0 = z.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm0 == 0.0 {
            return;
        }
        let mut v = z.to_vec();
        for q in &ortho {
            let c = dot(q, &v);
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= c * qi;
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 * norm0 {
            for a in &mut v {
                *a /= norm;
            }
            ortho.push(v);
            chosen.push(t);
        }
    };
    for &t in hint {
        try_add(t, &mut chosen);
    }
    if chosen.len() < d {
        let b = weighted_least_squares(sub, y);
        let mut order: Vec<(f64, usize)> = (0..sub.n)
            .map(|t| ((y[t] - dot(sub.row(t), &b)).abs(), t))
            .collect();
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for (_, t) in order {
            try_add(t, &mut chosen);
            if chosen.len() == d {
                break;
            }
        }
    }
    chosen
}

fn weighted_least_squares(sub: &Sub<'_>, y: &[f64]) -> Vec<f64> {
    let d = sub.d;
    let mut xtx = DMatrix::<f64>::zeros(d, d);
    let mut xty = DVector::<f64>::zeros(d);
    for t in 0..sub.n {
        let z = sub.row(t);
        let w = sub.w[t];
        for i in 0..d {
            xty[i] += w * z[i] * y[t];
            for j in 0..d {
                xtx[(i, j)] += w * z[i] * z[j];
            }
        }
    }
    xtx.clone()
        .cholesky()
        .map(|c| c.solve(&xty))
        .or_else(|| xtx.svd(true, true).solve(&xty, 1e-12).ok())
        .map(|b| b.iter().copied().collect())
        .unwrap_or_else(|| vec![0.0; d])
}
