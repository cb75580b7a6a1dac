//! Market data: monthly return, currency and short-rate series, and the
//! adjusted moments (expected returns and covariance) the optimiser consumes.
//!
//! All values are decimal fractions per month (`0.01` is one percent).
//!
//! Adjusted series fold the cost of carry of FX forwards into the moments:
//! an asset's adjusted return is its local return minus the local short rate,
//! and a currency's adjusted return is its return against the base currency
//! plus the local short rate. The base currency's own return is identically
//! zero, so its adjusted series is the base short-rate series.

mod ingest;
mod moments;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{load_dataset, parse_dataset, DatasetSchema};
pub use moments::{adjust_series, estimate_moments, psd_repair, AdjustedMoments, AdjustedSeries, PsdRepair};

/// Calendar month stamp, `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month {
    pub year: i32,
    pub month: u32,
}

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Self> {
        if !(1..=12).contains(&month) {
            return Err(Error::Domain(format!("month {month} out of range 1..=12")));
        }
        Ok(Month { year, month })
    }

    pub fn succ(self) -> Month {
        if self.month == 12 {
            Month { year: self.year + 1, month: 1 }
        } else {
            Month { year: self.year, month: self.month + 1 }
        }
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year, self.month)
    }
}

impl FromStr for Month {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("invalid month stamp '{s}', expected YYYY-MM"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        let year = y.parse::<i32>().map_err(|_| bad())?;
        let month = m.parse::<u32>().map_err(|_| bad())?;
        Month::new(year, month).map_err(|_| bad())
    }
}

impl Serialize for Month {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeriesKind {
    Asset,
    Currency,
    Rate,
}

/// One aligned monthly series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReturnSeries {
    pub label: String,
    pub kind: SeriesKind,
    pub country: usize,
    pub asset_class: Option<usize>,
    pub values: Vec<f64>,
    pub period_start: Month,
    pub period_end: Month,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Country {
    pub code: String,
    pub currency: String,
}

/// Aligned raw series for `C` countries and `A` risky asset classes.
///
/// Country 0 is the base country. Series are stored in canonical order:
/// assets class-major (`i * C + j`), then one currency series per country,
/// then one rate series per country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketDataSet {
    pub countries: Vec<Country>,
    pub asset_classes: Vec<String>,
    pub series: Vec<ReturnSeries>,
    /// Expected monthly short rate per country, possibly estimated over a
    /// shorter window than the return moments.
    pub expected_rates: Vec<f64>,
}

impl MarketDataSet {
    pub fn num_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn num_classes(&self) -> usize {
        self.asset_classes.len()
    }

    pub fn num_observations(&self) -> usize {
        self.series.first().map_or(0, |s| s.values.len())
    }

    pub fn asset(&self, class: usize, country: usize) -> &ReturnSeries {
        &self.series[class * self.num_countries() + country]
    }

    pub fn currency(&self, country: usize) -> &ReturnSeries {
        &self.series[self.num_classes() * self.num_countries() + country]
    }

    pub fn rate(&self, country: usize) -> &ReturnSeries {
        &self.series[(self.num_classes() + 1) * self.num_countries() + country]
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.code == code)
    }

    /// Checks the structural invariants: canonical ordering, equal lengths,
    /// finite values and one expected rate per country.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_countries();
        let a = self.num_classes();
        if c == 0 {
            return Err(Error::Schema("dataset has no countries".into()));
        }
        let expected = (a + 2) * c;
        if self.series.len() != expected {
            return Err(Error::Schema(format!(
                "expected {expected} series for {a} classes and {c} countries, found {}",
                self.series.len()
            )));
        }
        let n = self.num_observations();
        if n == 0 {
            return Err(Error::Schema("series are empty".into()));
        }
        for (idx, s) in self.series.iter().enumerate() {
            let (kind, class, country) = if idx < a * c {
                (SeriesKind::Asset, Some(idx / c), idx % c)
            } else if idx < (a + 1) * c {
                (SeriesKind::Currency, None, idx - a * c)
            } else {
                (SeriesKind::Rate, None, idx - (a + 1) * c)
            };
            if s.kind != kind || s.asset_class != class || s.country != country {
                return Err(Error::Schema(format!("series '{}' is out of canonical order", s.label)));
            }
            if s.values.len() != n {
                return Err(Error::Alignment(format!(
                    "series '{}' has {} observations, expected {n}",
                    s.label,
                    s.values.len()
                )));
            }
            if let Some(v) = s.values.iter().find(|v| !v.is_finite()) {
                return Err(Error::Schema(format!("series '{}' contains non-finite value {v}", s.label)));
            }
        }
        if self.expected_rates.len() != c || self.expected_rates.iter().any(|r| !r.is_finite()) {
            return Err(Error::Schema("expected_rates must hold one finite rate per country".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn month_round_trip_and_successor() {
        let m: Month = "2011-12".parse().unwrap();
        assert_eq!(m.to_string(), "2011-12");
        assert_eq!(m.succ().to_string(), "2012-01");
        assert!("2011-13".parse::<Month>().is_err());
        assert!("11-01".parse::<Month>().is_err());
    }
}
