//! Return series container, price ingestion and the signed-square transform
//! `T(x) = x^2 sgn(x)` that maps GARCH quantiles onto a linear form.

use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Signed square, `x^2 sgn(x)`. Odd, continuous and strictly increasing.
#[inline]
pub fn transform(x: f64) -> f64 {
    x * x.abs()
}

/// Inverse of [`transform`]: `sqrt(|x|) sgn(x)`, with `T^-1(0) = 0`.
#[inline]
pub fn inverse_transform(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.abs().sqrt().copysign(x)
    }
}

/// Observed returns `x_1..x_n`, optionally labelled with dates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    dates: Option<Vec<String>>,
}

impl ReturnSeries {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("return series is empty".into()));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "return {} (index {i}) is not finite",
                values[i]
            )));
        }
        Ok(Self {
            values,
            dates: None,
        })
    }

    pub fn with_dates(values: Vec<f64>, dates: Vec<String>) -> Result<Self> {
        if dates.len() != values.len() {
            return Err(Error::InvalidInput(format!(
                "{} dates for {} returns",
                dates.len(),
                values.len()
            )));
        }
        let mut s = Self::new(values)?;
        s.dates = Some(dates);
        Ok(s)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dates(&self) -> Option<&[String]> {
        self.dates.as_deref()
    }

    /// `y_t = T(x_t)`.
    pub fn transformed(&self) -> Vec<f64> {
        self.values.iter().map(|&x| transform(x)).collect()
    }

    pub fn squares(&self) -> Vec<f64> {
        self.values.iter().map(|&x| x * x).collect()
    }

    /// `n^-1 sum x_t^2`, the pre-sample initialisation constant.
    pub fn mean_square(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum::<f64>() / self.values.len() as f64
    }

    /// Observations `start..end` (estimation windows of the backtest).
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::InvalidInput(format!(
                "invalid window [{start}, {end}) for series of length {}",
                self.len()
            )));
        }
        Ok(Self {
            values: self.values[start..end].to_vec(),
            dates: self.dates.as_ref().map(|d| d[start..end].to_vec()),
        })
    }
}

/// Dated price observations prior to differencing.
#[derive(Debug, Clone, PartialEq)]
pub struct PricesInput {
    timestamps: Vec<String>,
    prices: Vec<f64>,
    first_line: usize,
}

impl PricesInput {
    /// Timestamps must be strictly increasing in lexicographic order, which is
    /// chronological for ISO-8601 dates.
    pub fn new(timestamps: Vec<String>, prices: Vec<f64>) -> Result<Self> {
        Self::with_first_line(timestamps, prices, 1)
    }

    fn with_first_line(timestamps: Vec<String>, prices: Vec<f64>, first_line: usize) -> Result<Self> {
        if timestamps.len() != prices.len() {
            return Err(Error::InvalidInput(format!(
                "{} timestamps for {} prices",
                timestamps.len(),
                prices.len()
            )));
        }
        for (i, w) in timestamps.windows(2).enumerate() {
            if w[1] <= w[0] {
                return Err(Error::Ingestion {
                    line: first_line + i + 1,
                    message: format!(
                        "timestamp {:?} does not follow {:?} (timestamps must be strictly increasing)",
                        w[1], w[0]
                    ),
                });
            }
        }
        Ok(Self {
            timestamps,
            prices,
            first_line,
        })
    }

    pub fn timestamps(&self) -> &[String] {
        &self.timestamps
    }

    pub fn prices(&self) -> &[f64] {
        &self.prices
    }
}

/// `x_t = ln p_t - ln p_{t-1}`, dated by the later observation.
pub fn log_returns(input: &PricesInput) -> Result<ReturnSeries> {
    if input.prices.len() < 2 {
        return Err(Error::InvalidInput(
            "at least two prices are needed to form a return".into(),
        ));
    }
    for (i, &p) in input.prices.iter().enumerate() {
        if !(p > 0.0 && p.is_finite()) {
            return Err(Error::Ingestion {
                line: input.first_line + i,
                message: format!("price {p} at {:?} is not positive", input.timestamps[i]),
            });
        }
    }
    let values = input
        .prices
        .windows(2)
        .map(|w| w[1].ln() - w[0].ln())
        .collect();
    ReturnSeries::with_dates(values, input.timestamps[1..].to_vec())
}

/// Reads either a `(date, price)` two-column file, converted to log returns,
/// or a single column of returns. A header row is detected when its value
/// column does not parse as a number. A two-column file whose header names
/// the second column `return` (as written by [`write_series`]) holds dated
/// returns instead of prices.
pub fn read_series<R: Read>(reader: R, delimiter: u8) -> Result<ReturnSeries> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(reader);

    let mut rows: Vec<(usize, Vec<String>)> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((i + 1, rec.iter().map(str::to_owned).collect()));
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("input contains no rows".into()));
    }

    let width = rows[0].1.len();
    let header = rows[0].1.last().is_some_and(|f| f.parse::<f64>().is_err());
    let data = if header { &rows[1..] } else { &rows[..] };
    let dated_returns = header
        && width == 2
        && rows[0].1[1].to_ascii_lowercase().starts_with("ret");
    if data.is_empty() {
        return Err(Error::InvalidInput("input contains a header but no data".into()));
    }

    let parse = |line: usize, field: &str| -> Result<f64> {
        field.parse::<f64>().map_err(|_| Error::Ingestion {
            line,
            message: format!("cannot parse {field:?} as a number"),
        })
    };

    match width {
        1 => {
            let mut values = Vec::with_capacity(data.len());
            for (line, fields) in data {
                if fields.len() != 1 {
                    return Err(Error::Ingestion {
                        line: *line,
                        message: format!("expected 1 column, found {}", fields.len()),
                    });
                }
                values.push(parse(*line, &fields[0])?);
            }
            ReturnSeries::new(values)
        }
        2 => {
            let mut dates = Vec::with_capacity(data.len());
            let mut prices = Vec::with_capacity(data.len());
            for (line, fields) in data {
                if fields.len() != 2 {
                    return Err(Error::Ingestion {
                        line: *line,
                        message: format!("expected 2 columns, found {}", fields.len()),
                    });
                }
                dates.push(fields[0].clone());
                prices.push(parse(*line, &fields[1])?);
            }
            let input = PricesInput::with_first_line(dates, prices, data[0].0)?;
            if dated_returns {
                ReturnSeries::with_dates(input.prices, input.timestamps)
            } else {
                log_returns(&input)
            }
        }
        w => Err(Error::Ingestion {
            line: rows[0].0,
            message: format!("expected 1 (return) or 2 (date, price) columns, found {w}"),
        }),
    }
}

pub fn read_series_path(path: impl AsRef<Path>, delimiter: u8) -> Result<ReturnSeries> {
    let file = std::fs::File::open(path.as_ref())?;
    read_series(file, delimiter)
}

/// Writes returns as `return` or `date,return` rows with a header.
pub fn write_series(path: impl AsRef<Path>, series: &ReturnSeries, delimiter: u8) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .delimiter(delimiter)
        .from_path(path.as_ref())?;
    match series.dates() {
        Some(dates) => {
            w.write_record(["date", "return"])?;
            for (d, x) in dates.iter().zip(series.values()) {
                w.write_record([d.as_str(), &format!("{x:e}")])?;
            }
        }
        None => {
            w.write_record(["return"])?;
            for x in series.values() {
                w.write_record([format!("{x:e}")])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
