use hybridq_core::backtest::{backtest, default_subperiods, BacktestSpec, CiSpec};
use hybridq_core::baselines::{forecast_with, Method, MethodOptions};
use hybridq_core::bootstrap::{summarize, Bootstrapper, WeightLaw};
use hybridq_core::diagnostics::portmanteau_test;
use hybridq_core::garch::{simulate, GarchParams, InnovationLaw, Orders, ThetaBox};
use hybridq_core::hybrid::{fit_hybrid, forecast_next};
use hybridq_core::report::{read_result, write_qacf_plot, write_result, ResultKind};
use hybridq_core::series::{read_series_path, write_series, ReturnSeries};
use hybridq_core::{BacktestReport, Error};

fn sample(n: usize, seed: u64) -> ReturnSeries {
    let params = GarchParams::garch11(0.4, 0.2, 0.5).unwrap();
    simulate(&params, InnovationLaw::StandardNormal, n, 500, seed).unwrap()
}

#[test]
fn fit_bootstrap_diagnose() {
    let series = sample(800, 3);
    let fit = fit_hybrid(&series, Orders::garch11(), 0.1, true, &ThetaBox::default()).unwrap();
    assert_eq!(fit.len(), 800);
    assert_eq!(forecast_next(&fit, &series), fit.next_q);
    assert!(fit.next_q < 0.0);

    let boot = Bootstrapper::new(&series, &fit, 6).unwrap();
    let ens = boot.run(200, WeightLaw::Exponential, 11).unwrap();
    assert_eq!(ens, boot.run_sequential(200, WeightLaw::Exponential, 11).unwrap());
    let summary = summarize(&ens);
    let (lo, hi) = summary.next_quantile_ci(0.95);
    assert!(lo < fit.next_q && fit.next_q < hi, "{lo} {} {hi}", fit.next_q);
    for j in 0..3 {
        let (a, b) = summary.param_ci(j, 0.9);
        assert!(a <= b);
        assert!(summary.asd[j] > 0.0);
    }

    let report = portmanteau_test(boot.r(), &ens).unwrap();
    assert_eq!(report.r.len(), 6);
    assert!((0.0..=1.0).contains(&report.p_value));

    let dir = tempfile::tempdir().unwrap();
    write_qacf_plot(dir.path().join("qacf.csv"), &report, b',').unwrap();
    let text = std::fs::read_to_string(dir.path().join("qacf.csv")).unwrap();
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn series_files_round_trip() {
    let series = sample(50, 5);
    let dated = ReturnSeries::with_dates(series.values().to_vec(), (0..50).map(|i| format!("2021-{:02}-{:02}", 3 + i / 25, i % 25 + 1)).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    for (name, s) in [("plain.csv", &series), ("dated.csv", &dated)] {
        let path = dir.path().join(name);
        write_series(&path, s, b',').unwrap();
        assert_eq!(&read_series_path(&path, b',').unwrap(), s);
    }

    let prices = dir.path().join("prices.tsv");
    std::fs::write(&prices, "date\tclose\n2020-01-02\t100\n2020-01-03\t101\n2020-01-06\t99.5\n").unwrap();
    let r = read_series_path(&prices, b'\t').unwrap();
    assert_eq!(r.len(), 2);
    assert!((r.values()[0] - (101.0f64 / 100.0).ln()).abs() < 1e-15);
    assert_eq!(r.dates().unwrap()[1], "2020-01-06");

    std::fs::write(dir.path().join("bad.csv"), "return\n0.1\nabc\n").unwrap();
    match read_series_path(dir.path().join("bad.csv"), b',') {
        Err(Error::Ingestion { line, .. }) => assert_eq!(line, 3),
        other => panic!("expected an ingestion error, got {other:?}"),
    }
}

#[test]
fn every_method_forecasts_the_same_series() {
    let series = sample(600, 8);
    let opts = MethodOptions::default();
    for m in Method::COMPARISON {
        let f = forecast_with(m, &series, 0.05, &opts).unwrap();
        assert_eq!(f.method, m);
        assert_eq!(f.in_sample_q.len(), series.len(), "{m}");
        assert!(f.next_q.is_finite(), "{m}");
    }
}

#[test]
fn backtest_with_bands_round_trips() {
    let base = sample(160, 21);
    let dates = (0..160).map(|i| format!("{}-{:02}-{:02}", 2009 + i / 24, 1 + (i / 2) % 12, 10 + i % 2)).collect();
    let series = ReturnSeries::with_dates(base.values().to_vec(), dates).unwrap();
    let mut spec = BacktestSpec::new(Method::Hybrid, 0.05, 140);
    spec.subperiods = default_subperiods();
    spec.ci = Some(CiSpec { b: 60, ..CiSpec::default() });
    let rep = backtest(&series, &spec).unwrap();
    assert_eq!(rep.forecasts.len(), 20);
    assert!(rep.skipped.is_empty());
    for f in &rep.forecasts {
        let (lo, hi) = f.ci.unwrap();
        assert!(lo <= hi);
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bt.json");
    write_result(&path, ResultKind::Backtest, &rep).unwrap();
    let back: BacktestReport = read_result(&path, ResultKind::Backtest).unwrap();
    // Empty subperiods carry NaN rates, so compare the serialised form.
    assert!(back.subperiods.iter().any(|p| p.ecr.is_nan()));
    assert_eq!(serde_json::to_string(&back).unwrap(), serde_json::to_string(&rep).unwrap());
}
