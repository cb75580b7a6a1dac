//! CSV ingestion.
//!
//! The first column is `month` (`YYYY-MM`); every other column is named
//! `asset:<class>:<country>`, `ccy:<currency>` or `rate:<country>`. Columns
//! naming countries or classes absent from the schema are ignored, so one
//! wide file can feed several schemas.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Country, MarketDataSet, Month, ReturnSeries, SeriesKind};
use crate::error::{Error, Result};

fn default_rate_window() -> usize {
    12
}

/// Column mapping for a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSchema {
    pub countries: Vec<Country>,
    pub asset_classes: Vec<String>,
    pub base_country: String,
    /// Number of trailing months averaged for the expected short rates.
    #[serde(default = "default_rate_window")]
    pub rate_window: usize,
    /// Explicit expected monthly rates by country code; overrides the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_rates: Option<BTreeMap<String, f64>>,
}

impl DatasetSchema {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Countries with the base country moved to index 0.
    fn ordered_countries(&self) -> Result<Vec<Country>> {
        if self.countries.is_empty() {
            return Err(Error::Schema("schema lists no countries".into()));
        }
        let base =
            self.countries.iter().position(|c| c.code == self.base_country).ok_or_else(|| {
                Error::Schema(format!("base country '{}' is not among the countries", self.base_country))
            })?;
        let mut out = vec![self.countries[base].clone()];
        out.extend(self.countries.iter().enumerate().filter(|(i, _)| *i != base).map(|(_, c)| c.clone()));
        for (i, c) in out.iter().enumerate() {
            if out[..i].iter().any(|o| o.code == c.code || o.currency == c.currency) {
                return Err(Error::Schema(format!("duplicate country or currency '{}'", c.code)));
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Slot {
    Asset(usize, usize),
    Currency(usize),
    Rate(usize),
}

fn classify_column(name: &str, countries: &[Country], classes: &[String]) -> Result<Option<Slot>> {
    let parts: Vec<&str> = name.split(':').collect();
    let country_by_code = |code: &str| countries.iter().position(|c| c.code == code);
    match parts.as_slice() {
        ["asset", class, country] => {
            Ok(classes.iter().position(|c| c == class).zip(country_by_code(country)).map(|(i, j)| Slot::Asset(i, j)))
        }
        ["ccy", currency] => Ok(countries.iter().position(|c| c.currency == *currency).map(Slot::Currency)),
        ["rate", country] => Ok(country_by_code(country).map(Slot::Rate)),
        _ => Err(Error::Schema(format!(
            "column '{name}' is not of the form asset:<class>:<country>, ccy:<currency> or rate:<country>"
        ))),
    }
}

/// Reads a dataset CSV file.
pub fn load_dataset(path: &Path, schema: &DatasetSchema) -> Result<MarketDataSet> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let file = std::fs::File::open(path).map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
    parse_dataset(file, schema)
}

/// Parses dataset CSV text from any reader.
pub fn parse_dataset<R: std::io::Read>(reader: R, schema: &DatasetSchema) -> Result<MarketDataSet> {
    let countries = schema.ordered_countries()?;
    let classes = schema.asset_classes.clone();
    let c = countries.len();
    let a = classes.len();

    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("month") {
        return Err(Error::Schema("first column must be 'month'".into()));
    }

    let mut slots: HashMap<Slot, usize> = HashMap::new();
    for (col, name) in headers.iter().enumerate().skip(1) {
        if let Some(slot) = classify_column(name, &countries, &classes)? {
            if slots.insert(slot, col).is_some() {
                return Err(Error::Schema(format!("duplicate column '{name}'")));
            }
        }
    }

    for i in 0..a {
        for j in 0..c {
            if !slots.contains_key(&Slot::Asset(i, j)) {
                return Err(Error::Schema(format!("missing asset series ({}, {})", classes[i], countries[j].code)));
            }
        }
    }
    for (j, country) in countries.iter().enumerate() {
        // The base currency has no return against itself; its column is optional.
        if j != 0 && !slots.contains_key(&Slot::Currency(j)) {
            return Err(Error::Schema(format!("missing currency series ({})", country.currency)));
        }
        if !slots.contains_key(&Slot::Rate(j)) {
            return Err(Error::Schema(format!("missing rate series ({})", country.code)));
        }
    }

    let mut months: Vec<Month> = Vec::new();
    let mut columns: HashMap<usize, Vec<f64>> = slots.values().map(|&col| (col, Vec::new())).collect();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2;
        let record = record.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { expected_len, len, .. } => {
                Error::Alignment(format!("row {line} has {len} fields, header has {expected_len}"))
            }
            _ => Error::Csv(e),
        })?;
        let month: Month = record[0].parse().map_err(|e: Error| Error::Parse {
            row: line,
            column: "month".into(),
            message: e.to_string(),
        })?;
        if let Some(prev) = months.last() {
            if month != prev.succ() {
                return Err(Error::Alignment(format!(
                    "row {line}: month {month} does not follow {prev}; series must be consecutive months"
                )));
            }
        }
        months.push(month);
        for (&col, values) in columns.iter_mut() {
            let cell = &record[col];
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                row: line,
                column: headers[col].to_string(),
                message: if cell.is_empty() {
                    "missing value".to_string()
                } else {
                    format!("'{cell}' is not a number")
                },
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    column: headers[col].to_string(),
                    message: format!("non-finite value '{cell}'"),
                });
            }
            values.push(value);
        }
    }
    let n = months.len();
    if n == 0 {
        return Err(Error::Schema("dataset has no data rows".into()));
    }
    let (start, end) = (months[0], months[n - 1]);

    let make = |label: String, kind, country, asset_class, values: Vec<f64>| ReturnSeries {
        label,
        kind,
        country,
        asset_class,
        values,
        period_start: start,
        period_end: end,
    };
    let mut series = Vec::with_capacity((a + 2) * c);
    for (i, class) in classes.iter().enumerate() {
        for (j, country) in countries.iter().enumerate() {
            let values = columns[&slots[&Slot::Asset(i, j)]].clone();
            series.push(make(format!("asset:{class}:{}", country.code), SeriesKind::Asset, j, Some(i), values));
        }
    }
    for (j, country) in countries.iter().enumerate() {
        let values = match slots.get(&Slot::Currency(j)) {
            Some(col) => columns[col].clone(),
            None => vec![0.0; n],
        };
        series.push(make(format!("ccy:{}", country.currency), SeriesKind::Currency, j, None, values));
    }
    for (j, country) in countries.iter().enumerate() {
        let values = columns[&slots[&Slot::Rate(j)]].clone();
        series.push(make(format!("rate:{}", country.code), SeriesKind::Rate, j, None, values));
    }

    let expected_rates = match &schema.expected_rates {
        Some(map) => countries
            .iter()
            .map(|country| {
                map.get(&country.code)
                    .copied()
                    .ok_or_else(|| Error::Schema(format!("expected_rates lacks country '{}'", country.code)))
            })
            .collect::<Result<Vec<_>>>()?,
        None => {
            let w = schema.rate_window;
            if w == 0 || w > n {
                return Err(Error::config("rate_window", format!("must be in 1..={n}, got {w}")));
            }
            (0..c)
                .map(|j| {
                    let rate = &series[(a + 1) * c + j].values;
                    rate[n - w..].iter().sum::<f64>() / w as f64
                })
                .collect()
        }
    };

    let data = MarketDataSet { countries, asset_classes: classes, series, expected_rates };
    data.validate()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(countries: &[(&str, &str)], classes: &[&str]) -> DatasetSchema {
        DatasetSchema {
            countries: countries
                .iter()
                .map(|(code, ccy)| Country { code: code.to_string(), currency: ccy.to_string() })
                .collect(),
            asset_classes: classes.iter().map(|s| s.to_string()).collect(),
            base_country: countries[0].0.to_string(),
            rate_window: 2,
            expected_rates: None,
        }
    }

    const TWO_COUNTRY: &str = "\
month,asset:bond:US,asset:bond:UK,ccy:GBP,rate:US,rate:UK
2000-01,0.01,0.02,0.005,0.001,0.002
2000-02,0.00,0.01,-0.01,0.001,0.003
2000-03,0.02,0.00,0.02,0.002,0.004
";

    #[test]
    fn parses_canonical_layout() {
        let ds = parse_dataset(TWO_COUNTRY.as_bytes(), &schema(&[("US", "USD"), ("UK", "GBP")], &["bond"])).unwrap();
        assert_eq!(ds.num_countries(), 2);
        assert_eq!(ds.num_observations(), 3);
        assert_eq!(ds.asset(0, 1).values, vec![0.02, 0.01, 0.0]);
        // base currency column synthesised as zeros
        assert_eq!(ds.currency(0).values, vec![0.0; 3]);
        assert_eq!(ds.currency(1).label, "ccy:GBP");
        // trailing two-month rate window
        assert!((ds.expected_rates[1] - 0.0035).abs() < 1e-15);
        assert_eq!(ds.asset(0, 0).period_end.to_string(), "2000-03");
    }

    #[test]
    fn base_country_is_moved_first() {
        let mut s = schema(&[("UK", "GBP"), ("US", "USD")], &["bond"]);
        s.base_country = "US".into();
        let ds = parse_dataset(TWO_COUNTRY.as_bytes(), &s).unwrap();
        assert_eq!(ds.countries[0].code, "US");
    }

    #[test]
    fn missing_asset_series_is_named() {
        let csv = TWO_COUNTRY.replace(",asset:bond:UK", ",asset:equity:UK");
        let err = parse_dataset(csv.as_bytes(), &schema(&[("US", "USD"), ("UK", "GBP")], &["bond"])).unwrap_err();
        assert_eq!(err.to_string(), "schema error: missing asset series (bond, UK)");
    }

    #[test]
    fn non_numeric_cell_reports_row_and_column() {
        let csv = TWO_COUNTRY.replace("2000-02,0.00,0.01", "2000-02,0.00,abc");
        let err = parse_dataset(csv.as_bytes(), &schema(&[("US", "USD"), ("UK", "GBP")], &["bond"])).unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "asset:bond:UK");
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ragged_rows_are_alignment_errors() {
        let csv = TWO_COUNTRY.replace("2000-03,0.02,0.00,0.02,0.002,0.004", "2000-03,0.02,0.00,0.02,0.002");
        let err = parse_dataset(csv.as_bytes(), &schema(&[("US", "USD"), ("UK", "GBP")], &["bond"])).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "{err}");
    }

    #[test]
    fn gaps_in_months_are_alignment_errors() {
        let csv = TWO_COUNTRY.replace("2000-03", "2000-05");
        let err = parse_dataset(csv.as_bytes(), &schema(&[("US", "USD"), ("UK", "GBP")], &["bond"])).unwrap_err();
        assert!(matches!(err, Error::Alignment(_)), "{err}");
    }

    #[test]
    fn single_country_dataset_is_valid() {
        let ds = parse_dataset(TWO_COUNTRY.as_bytes(), &schema(&[("US", "USD")], &["bond"])).unwrap();
        assert_eq!(ds.num_countries(), 1);
        assert_eq!(ds.series.len(), 3);
    }

    #[test]
    fn explicit_expected_rates_override_window() {
        let mut s = schema(&[("US", "USD"), ("UK", "GBP")], &["bond"]);
        s.expected_rates = Some([("US".to_string(), 0.1), ("UK".to_string(), 0.2)].into_iter().collect());
        let ds = parse_dataset(TWO_COUNTRY.as_bytes(), &s).unwrap();
        assert_eq!(ds.expected_rates, vec![0.1, 0.2]);
    }
}
