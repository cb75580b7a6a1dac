//! Synthetic four-country dataset shaped after published summary statistics.
//!
//! The original monthly series (US, Germany, UK and Japan government bonds
//! and stock indices, EUR/GBP/JPY against USD, one-month bill yields,
//! Jan 2000 to Jun 2012) are proprietary. The generator below produces 150
//! months whose adjusted moments match the published targets exactly:
//!
//! * adjusted expected returns and volatilities per series,
//! * average monthly yields over the final 12 months.
//!
//! Correlations come from a small factor model and are only plausible, not
//! calibrated. The bundled CSV under `data/` is the output of
//! [`generate_fixture_csv`] with [`FIXTURE_SEED`]; a test keeps the two in
//! sync.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::market_data::{
    adjust_series, estimate_moments, parse_dataset, AdjustedMoments, Country, DatasetSchema, MarketDataSet, Month,
};
use crate::overlay::parse_spread_table;

pub const FIXTURE_SEED: u64 = 20_120_630;
pub const FIXTURE_MONTHS: usize = 150;

pub const FIXTURE_CSV: &str = include_str!("../data/fixture_returns.csv");
pub const FIXTURE_SCHEMA: &str = include_str!("../data/fixture_schema.json");
pub const DEFAULT_SPREADS: &str = include_str!("../data/spreads.csv");

const CODES: [&str; 4] = ["US", "DE", "UK", "JP"];
const CURRENCIES: [&str; 4] = ["USD", "EUR", "GBP", "JPY"];
const CLASSES: [&str; 2] = ["bond", "equity"];

// percent per month
const TARGET_MEAN: [[f64; 4]; 3] =
    [[0.446, 0.408, 0.457, 0.132], [1.426, 0.948, 1.007, 0.752], [0.004, 0.902, 0.593, 0.018]];
const TARGET_VOL: [[f64; 4]; 3] =
    [[1.003, 0.833, 0.893, 0.478], [4.692, 6.714, 4.297, 5.828], [0.017, 3.203, 2.870, 2.567]];
const RECENT_RATE: [f64; 4] = [0.004, 0.012, 0.053, 0.008];
/// Monthly yield at the start of the sample, falling linearly to the recent level.
const START_RATE: [f64; 4] = [0.050, 0.060, 0.110, 0.012];

/// Factor loadings (rates, equity, dollar, risk-on) for the 11 generated
/// series: four bonds, four equities, then EUR, GBP and JPY.
const LOADINGS: [[f64; 4]; 11] = [
    [0.75, -0.10, 0.00, 0.00],
    [0.80, -0.10, 0.00, 0.05],
    [0.75, -0.05, 0.00, 0.00],
    [0.55, -0.05, 0.00, -0.05],
    [-0.10, 0.80, 0.00, 0.20],
    [-0.05, 0.75, 0.10, 0.30],
    [-0.05, 0.80, 0.05, 0.20],
    [0.00, 0.60, -0.10, 0.15],
    [0.10, 0.15, 0.80, 0.00],
    [0.05, 0.20, 0.70, 0.10],
    [0.20, -0.30, 0.50, -0.20],
];

pub fn fixture_schema() -> DatasetSchema {
    DatasetSchema {
        countries: CODES
            .iter()
            .zip(CURRENCIES)
            .map(|(c, y)| Country { code: c.to_string(), currency: y.to_string() })
            .collect(),
        asset_classes: CLASSES.iter().map(|c| c.to_string()).collect(),
        base_country: "US".into(),
        rate_window: 12,
        expected_rates: None,
    }
}

/// Regenerates the bundled fixture CSV text for `seed`.
pub fn generate_fixture_csv(seed: u64) -> String {
    let n = FIXTURE_MONTHS;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };

    // short rates: linear decline, small noise, last year pinned to the target average
    let mut rates = vec![vec![0.0; n]; 4];
    for j in 0..4 {
        let (start, end) = (START_RATE[j] / 100.0, RECENT_RATE[j] / 100.0);
        for t in 0..n {
            let w = (t as f64 / (n - 13) as f64).min(1.0);
            let level = start + (end - start) * w;
            rates[j][t] = (level + 0.000_02 * draw()).max(0.0);
        }
        let tail = &mut rates[j][n - 12..];
        let shift = end - tail.iter().sum::<f64>() / 12.0;
        tail.iter_mut().for_each(|v| *v += shift);
    }

    // correlated innovations from the factor model
    let mut z = DMatrix::zeros(n, 11);
    for t in 0..n {
        let f: Vec<f64> = (0..4).map(|_| draw()).collect();
        for (s, load) in LOADINGS.iter().enumerate() {
            let common: f64 = load.iter().zip(&f).map(|(l, x)| l * x).sum();
            let idio = (1.0 - load.iter().map(|l| l * l).sum::<f64>()).max(0.0).sqrt();
            z[(t, s)] = common + idio * draw();
        }
    }

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mut columns: Vec<(String, Vec<f64>)> = Vec::new();
    for s in 0..11 {
        let (row, j) = if s < 8 { (s / 4, s % 4) } else { (2, s - 7) };
        let col: Vec<f64> = z.column(s).iter().copied().collect();
        let m = mean(&col);
        let sd = (col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1) as f64).sqrt();
        let vol = TARGET_VOL[row][j] / 100.0;
        let rate_mean = mean(&rates[j]);
        let expected = RECENT_RATE[j] / 100.0;
        // adjusted mean that lands the raw-mean-based expected return on target
        let raw: Vec<f64> = if row < 2 {
            let adj_mean = TARGET_MEAN[row][j] / 100.0 - rate_mean + expected;
            (0..n).map(|t| adj_mean + vol * (col[t] - m) / sd + rates[j][t]).collect()
        } else {
            let adj_mean = TARGET_MEAN[row][j] / 100.0 + rate_mean - expected;
            (0..n).map(|t| adj_mean + vol * (col[t] - m) / sd - rates[j][t]).collect()
        };
        let name =
            if row < 2 { format!("asset:{}:{}", CLASSES[row], CODES[j]) } else { format!("ccy:{}", CURRENCIES[j]) };
        columns.push((name, raw));
    }
    columns.insert(8, ("ccy:USD".into(), vec![0.0; n]));
    for j in 0..4 {
        columns.push((format!("rate:{}", CODES[j]), rates[j].clone()));
    }

    let mut out = String::from("month");
    for (name, _) in &columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    let mut month = Month { year: 2000, month: 1 };
    for t in 0..n {
        out.push_str(&month.to_string());
        for (_, col) in &columns {
            out.push_str(&format!(",{:.10}", col[t]));
        }
        out.push('\n');
        month = month.succ();
    }
    out
}

pub fn fixture_dataset() -> Result<MarketDataSet> {
    let schema: DatasetSchema = serde_json::from_str(FIXTURE_SCHEMA)?;
    parse_dataset(FIXTURE_CSV.as_bytes(), &schema)
}

pub fn fixture_moments() -> Result<AdjustedMoments> {
    let data = fixture_dataset()?;
    estimate_moments(&adjust_series(&data)?, &data.expected_rates)
}

/// Bid-ask spreads of the six fixture contracts as fractions.
pub fn default_spreads() -> Result<Vec<f64>> {
    let currencies: Vec<String> = CURRENCIES.iter().map(|c| c.to_string()).collect();
    parse_spread_table(DEFAULT_SPREADS, &currencies)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_csv_matches_generator() {
        assert_eq!(generate_fixture_csv(FIXTURE_SEED), FIXTURE_CSV);
    }

    #[test]
    fn schema_file_matches_builder() {
        let schema: DatasetSchema = serde_json::from_str(FIXTURE_SCHEMA).unwrap();
        assert_eq!(schema, fixture_schema());
    }

    #[test]
    fn moments_hit_targets() {
        let m = fixture_moments().unwrap();
        for row in 0..3 {
            for j in 0..4 {
                let idx = row * 4 + j;
                assert!((m.r[idx] * 100.0 - TARGET_MEAN[row][j]).abs() < 1e-6, "mean {idx}");
                if row < 2 || j > 0 {
                    assert!((m.omega[(idx, idx)].sqrt() * 100.0 - TARGET_VOL[row][j]).abs() < 1e-6, "vol {idx}");
                }
            }
        }
        assert!(m.omega[(8, 8)] > 0.0);
        assert!(!m.repair.changed);
        let expected: Vec<f64> = RECENT_RATE.iter().map(|r| r / 100.0).collect();
        for (a, b) in m.expected_rates.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn spreads_are_fractions() {
        let s = default_spreads().unwrap();
        assert_eq!(s.len(), 6);
        assert!((s[0] - 0.000_036).abs() < 1e-15);
        assert!((s[5] - 0.000_122).abs() < 1e-15);
    }
}
