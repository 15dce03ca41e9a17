//! Self-describing result files and delimiter-separated plot data.
//!
//! A result file is a JSON object
//! `{"format": "hybridq-result", "version": 1, "kind": ..., "data": ...}`.
//! Floats are written with round-trip precision, so reading a file back
//! reproduces the in-memory value exactly.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backtest::BacktestReport;
use crate::diagnostics::QacfReport;
use crate::error::{Error, Result};
use crate::montecarlo::{EfficiencyResult, Table};

pub const FORMAT: &str = "hybridq-result";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResultKind {
    Simulation,
    Fit,
    Forecast,
    Diagnose,
    Bootstrap,
    Backtest,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub format: String,
    pub version: u32,
    pub kind: ResultKind,
    pub data: serde_json::Value,
}

impl Envelope {
    pub fn wrap<T: Serialize>(kind: ResultKind, data: &T) -> Result<Self> {
        Ok(Envelope {
            format: FORMAT.into(),
            version: VERSION,
            kind,
            data: serde_json::to_value(data)?,
        })
    }

    /// Decodes the payload, checking the header and the expected kind.
    pub fn decode<T: DeserializeOwned>(self, kind: ResultKind) -> Result<T> {
        if self.format != FORMAT {
            return Err(Error::Format(format!("not a result file (format '{}')", self.format)));
        }
        if self.version != VERSION {
            return Err(Error::Format(format!("unsupported result version {}", self.version)));
        }
        if self.kind != kind {
            return Err(Error::Format(format!("expected a {kind:?} result, found {:?}", self.kind)));
        }
        Ok(serde_json::from_value(self.data)?)
    }
}

pub fn to_json_string<T: Serialize>(kind: ResultKind, data: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(&Envelope::wrap(kind, data)?)?)
}

pub fn write_result<T: Serialize>(path: impl AsRef<Path>, kind: ResultKind, data: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &Envelope::wrap(kind, data)?)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_envelope(path: impl AsRef<Path>) -> Result<Envelope> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn read_result<T: DeserializeOwned>(path: impl AsRef<Path>, kind: ResultKind) -> Result<T> {
    read_envelope(path)?.decode(kind)
}

fn write_rows(path: impl AsRef<Path>, delimiter: u8, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::WriterBuilder::new().delimiter(delimiter).from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn num(x: f64) -> String {
    format!("{x}")
}

/// `lag, r, lower, upper` rows for a residual-QACF plot.
pub fn write_qacf_plot(path: impl AsRef<Path>, report: &QacfReport, delimiter: u8) -> Result<()> {
    let rows = crate::diagnostics::plot_rows(report)
        .into_iter()
        .map(|[lag, r, lo, hi]| vec![format!("{}", lag as usize), num(r), num(lo), num(hi)]);
    write_rows(path, delimiter, &["lag", "r", "lower", "upper"], rows)
}

/// `date, return, forecast, lower, upper` rows for a forecast plot; the band
/// columns are empty when no bands were computed.
pub fn write_backtest_plot(path: impl AsRef<Path>, report: &BacktestReport, delimiter: u8) -> Result<()> {
    let rows = crate::backtest::plot_rows(report).into_iter().map(|(date, x, f, ci)| {
        let (lo, hi) = ci.map(|(a, b)| (num(a), num(b))).unwrap_or_default();
        vec![date, num(x), num(f), lo, hi]
    });
    write_rows(path, delimiter, &["date", "return", "forecast", "lower", "upper"], rows)
}

/// Long-format box-plot data: `replicate, estimator, component, value`.
pub fn write_efficiency_plot(path: impl AsRef<Path>, res: &EfficiencyResult, delimiter: u8) -> Result<()> {
    let names = crate::montecarlo::parameter_names(res.spec.fit_orders);
    let mut rows = Vec::new();
    for (i, est, values) in crate::montecarlo::efficiency_plot_rows(res) {
        for (name, v) in names.iter().zip(values) {
            rows.push(vec![i.to_string(), est.to_string(), name.clone(), num(v)]);
        }
    }
    write_rows(path, delimiter, &["replicate", "estimator", "component", "value"], rows)
}

pub fn write_table(path: impl AsRef<Path>, table: &Table, delimiter: u8) -> Result<()> {
    let header: Vec<&str> = table.header.iter().map(String::as_str).collect();
    write_rows(path, delimiter, &header, table.rows.iter().cloned())
}

/// Serde adapters that keep non-finite floats (JSON has no literal for
/// them) by writing `"NaN"`, `"inf"` and `"-inf"` as strings.
pub(crate) mod nonfinite {
    use serde::de::{self, Deserializer};
    use serde::ser::Serializer;
    use serde::{Deserialize, Serialize};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    fn to_repr(x: f64) -> Repr {
        if x.is_finite() {
            Repr::Num(x)
        } else if x.is_nan() {
            Repr::Text("NaN".into())
        } else if x > 0.0 {
            Repr::Text("inf".into())
        } else {
            Repr::Text("-inf".into())
        }
    }

    fn from_repr<E: de::Error>(r: Repr) -> Result<f64, E> {
        match r {
            Repr::Num(x) => Ok(x),
            Repr::Text(s) => match s.as_str() {
                "NaN" => Ok(f64::NAN),
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("invalid float '{other}'"))),
            },
        }
    }

    pub fn serialize<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
        to_repr(*x).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(xs: &[f64], s: S) -> Result<S::Ok, S::Error> {
            s.collect_seq(xs.iter().map(|x| to_repr(*x)))
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?.into_iter().map(from_repr).collect()
        }
    }
}
