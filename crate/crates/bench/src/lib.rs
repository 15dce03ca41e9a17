//! Shared fixtures for the benchmarks.

use hybridq_core::garch::{simulate, GarchParams, InnovationLaw};
use hybridq_core::quantreg::{Design, QrProblem};
use hybridq_core::rng::stream_rng;
use hybridq_core::ReturnSeries;
use rand::Rng;

pub fn garch_series(n: usize, seed: u64) -> ReturnSeries {
    let params = GarchParams::garch11(0.4, 0.4, 0.4).expect("valid parameters");
    simulate(&params, InnovationLaw::StandardNormal, n, 500, seed).expect("simulation succeeds")
}

/// Intercept plus `d - 1` uniform regressors, heavy-tailed responses.
pub fn qr_problem(n: usize, d: usize, tau: f64, seed: u64) -> QrProblem {
    let mut rng = stream_rng(seed, 0);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| std::iter::once(1.0).chain((1..d).map(|_| rng.random_range(0.0..2.0))).collect())
        .collect();
    let y = rows
        .iter()
        .map(|r| r.iter().sum::<f64>() + rng.random_range(-1.0f64..1.0).powi(3) * 4.0)
        .collect();
    QrProblem::unweighted(y, Design::from_rows(&rows).expect("rectangular"), tau).expect("valid problem")
}
