use proptest::prelude::*;

use hybridq_core::backtest::ecr;
use hybridq_core::bootstrap::{draw_weights, WeightLaw};
use hybridq_core::diagnostics::psi;
use hybridq_core::garch::{simulate_path, volatility_path, GarchParams, InnovationLaw, ThetaBox};
use hybridq_core::quantreg::{check_loss, solve, subgradient_certificate, Design, QrProblem};
use hybridq_core::report::{Envelope, ResultKind};
use hybridq_core::rng::stream_rng;
use hybridq_core::series::{inverse_transform, transform};
use hybridq_core::stats::{iqr, quantile_type7};

fn problem(rows: Vec<(f64, f64, f64)>, tau: f64) -> QrProblem {
    let design: Vec<Vec<f64>> = rows.iter().map(|r| vec![1.0, r.0]).collect();
    let y = rows.iter().map(|r| r.1).collect();
    let w = rows.iter().map(|r| r.2).collect();
    QrProblem::new(y, Design::from_rows(&design).unwrap(), w, tau).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn transform_inverts_and_is_monotone(x in -1e6f64..1e6, y in -1e6f64..1e6) {
        let back = inverse_transform(transform(x));
        prop_assert!((back - x).abs() <= 4.0 * f64::EPSILON * x.abs());
        if x < y {
            prop_assert!(transform(x) < transform(y));
        }
        prop_assert_eq!(transform(-x), -transform(x));
    }

    #[test]
    fn check_loss_and_psi_are_consistent(u in -50.0f64..50.0, tau in 0.01f64..0.99) {
        let rho = check_loss(u, tau);
        prop_assert!(rho >= 0.0);
        let below = if u < 0.0 { 1.0 } else { 0.0 };
        prop_assert!((rho - u * (tau - below)).abs() < 1e-12);
        let p = psi(u, tau);
        prop_assert!(p == tau || p == tau - 1.0);
    }

    #[test]
    fn variance_path_is_positive_inside_the_box(
        a0 in 0.01f64..2.0,
        a1 in 0.0f64..0.5,
        b1 in 0.0f64..0.95,
        seed in any::<u64>(),
    ) {
        let truth = GarchParams::garch11(0.2, 0.1, 0.8).unwrap();
        let series = simulate_path(&truth, InnovationLaw::StandardNormal, 120, 50, &mut stream_rng(seed, 0)).unwrap().series;
        let at = GarchParams::garch11(a0, a1.max(1e-6), b1.max(1e-6)).unwrap();
        let path = volatility_path(&at, &series, &ThetaBox::default(), true).unwrap();
        prop_assert!(path.h.iter().all(|h| *h >= a0 && h.is_finite()));
        prop_assert!(path.gradient.unwrap().iter().all(|g| g.is_finite() && *g >= 0.0));
    }

    #[test]
    fn quantile_regression_is_optimal(
        rows in prop::collection::vec((-3.0f64..3.0, -5.0f64..5.0, 0.1f64..4.0), 6..60),
        tau in 0.05f64..0.95,
        dirs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 8),
    ) {
        prop_assume!(rows.iter().any(|r| (r.0 - rows[0].0).abs() > 1e-3));
        let p = problem(rows, tau);
        let s = solve(&p).unwrap();
        prop_assert!(subgradient_certificate(&p, &s.coef, 1e-9, 1e-8));
        for (a, b) in dirs {
            let alt = [s.coef[0] + a, s.coef[1] + b];
            prop_assert!(s.objective <= p.objective(&alt) + 1e-9);
        }
    }

    #[test]
    fn quantile_regression_is_scale_equivariant(
        rows in prop::collection::vec((-3.0f64..3.0, -5.0f64..5.0, 0.1f64..4.0), 6..40),
        tau in 0.05f64..0.95,
        c in 0.1f64..10.0,
    ) {
        prop_assume!(rows.iter().any(|r| (r.0 - rows[0].0).abs() > 1e-3));
        let scaled: Vec<_> = rows.iter().map(|r| (r.0, c * r.1, r.2)).collect();
        let a = solve(&problem(rows, tau)).unwrap();
        let b = solve(&problem(scaled, tau)).unwrap();
        prop_assert!((b.objective - c * a.objective).abs() <= 1e-9 * (1.0 + b.objective.abs()));
    }

    #[test]
    fn weights_are_nonnegative_with_unit_mean(seed in any::<u64>(), law in prop::sample::select(WeightLaw::ALL.to_vec())) {
        let w = draw_weights(law, 4000, seed);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        // Every law has unit mean and unit variance, so 6 standard errors.
        prop_assert!((mean - 1.0).abs() < 6.0 / (w.len() as f64).sqrt());
        prop_assert_eq!(draw_weights(law, 4000, seed), w);
    }

    #[test]
    fn ecr_counts_violations(pairs in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0), 1..200)) {
        let f: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let x: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        let hits = pairs.iter().filter(|p| p.1 < p.0).count();
        prop_assert_eq!(ecr(&f, &x), hits as f64 / pairs.len() as f64);
    }

    #[test]
    fn result_envelope_round_trips_exactly(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 0..50)) {
        let env = Envelope::wrap(ResultKind::Simulation, &xs).unwrap();
        let text = serde_json::to_string(&env).unwrap();
        let back: Envelope = serde_json::from_str(&text).unwrap();
        let decoded: Vec<f64> = back.decode(ResultKind::Simulation).unwrap();
        prop_assert_eq!(decoded, xs);
    }

    #[test]
    fn sample_quantiles_are_ordered(xs in prop::collection::vec(-100.0f64..100.0, 2..100), p in 0.0f64..1.0, q in 0.0f64..1.0) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        prop_assert!(quantile_type7(&xs, lo) <= quantile_type7(&xs, hi));
        prop_assert!(iqr(&xs) >= 0.0);
    }
}
