//! Plain-text `key = value` configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Recognised keys:
//!
//! | key         | meaning                                   |
//! |-------------|-------------------------------------------|
//! | `orders`    | GARCH orders as `p,q`                     |
//! | `tau`       | quantile level                            |
//! | `B`         | bootstrap replicates                      |
//! | `K`         | QACF lags                                 |
//! | `weights`   | weight law (`exponential`, `zero-two`, `mammen`) |
//! | `w_lo`, `w_hi`, `rho0` | parameter box                  |
//! | `seed`      | base seed                                 |
//! | `level`     | confidence level of intervals             |
//! | `method`    | estimator for `forecast` and `backtest`   |
//! | `delimiter` | input/plot delimiter (`,`, `;`, `tab`)    |
//! | `workers`   | worker threads                            |
//!
//! Command-line flags always win over the file.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};

pub const KEYS: [&str; 13] = [
    "orders", "tau", "B", "K", "weights", "w_lo", "w_hi", "rho0", "seed", "level", "method", "delimiter", "workers",
];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Config {
    values: BTreeMap<String, String>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("config line {}: expected key = value, found {line:?}", i + 1))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                bail!("config line {}: unknown key '{key}' (known: {})", i + 1, KEYS.join(", "));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(Config { values })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .map(|v| v.parse::<T>().map_err(|e| anyhow!("config key '{key}': cannot parse {v:?}: {e}")))
            .transpose()
    }

    /// Flag value if given, else the config entry, else `default`.
    pub fn pick<T>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: std::fmt::Display,
    {
        match flag {
            Some(v) => Ok(v),
            None => Ok(self.get(key)?.unwrap_or(default)),
        }
    }
}

pub fn parse_delimiter(s: &str) -> Result<u8> {
    match s {
        "tab" | "\\t" | "\t" => Ok(b'\t'),
        _ if s.len() == 1 && s.is_ascii() => Ok(s.as_bytes()[0]),
        _ => bail!("delimiter must be a single ASCII character or 'tab', got {s:?}"),
    }
}
