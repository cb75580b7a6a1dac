use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::{Country, MarketDataSet};
use crate::error::{Error, Result};

/// Largest tolerated `|Ω_ij − Ω_ji|`.
pub const ASYMMETRY_TOL: f64 = 1e-12;
/// Eigenvalues at or above `-PSD_TOL` are accepted without repair.
pub const PSD_TOL: f64 = 1e-10;

/// Adjusted series in canonical order: `A·C` asset columns then `C`
/// currency columns.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustedSeries {
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Mean of each column's unadjusted series over the full window.
    pub raw_means: Vec<f64>,
    pub countries: Vec<Country>,
    pub asset_classes: Vec<String>,
}

impl AdjustedSeries {
    pub fn num_observations(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Subtracts the local short rate from every asset series and adds it to
/// every currency series, month by month.
pub fn adjust_series(data: &MarketDataSet) -> Result<AdjustedSeries> {
    data.validate()?;
    let c = data.num_countries();
    let a = data.num_classes();
    let mut labels = Vec::with_capacity((a + 1) * c);
    let mut columns = Vec::with_capacity((a + 1) * c);
    let mut raw_means = Vec::with_capacity((a + 1) * c);
    for i in 0..a {
        for j in 0..c {
            let asset = data.asset(i, j);
            let rate = &data.rate(j).values;
            labels.push(asset.label.clone());
            columns.push(asset.values.iter().zip(rate).map(|(x, z)| x - z).collect());
            raw_means.push(mean(&asset.values));
        }
    }
    for j in 0..c {
        let ccy = data.currency(j);
        let rate = &data.rate(j).values;
        labels.push(ccy.label.clone());
        columns.push(ccy.values.iter().zip(rate).map(|(y, z)| y + z).collect());
        raw_means.push(mean(&ccy.values));
    }
    Ok(AdjustedSeries {
        labels,
        columns,
        raw_means,
        countries: data.countries.clone(),
        asset_classes: data.asset_classes.clone(),
    })
}

/// Outcome of [`psd_repair`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PsdRepair {
    pub changed: bool,
    pub min_eigenvalue: f64,
    /// Frobenius norm of the correction.
    pub frobenius_delta: f64,
}

/// Clips negative eigenvalues of a symmetric matrix to zero.
///
/// Matrices whose smallest eigenvalue is at least `-PSD_TOL` are returned
/// unchanged.
pub fn psd_repair(omega: &DMatrix<f64>) -> Result<(DMatrix<f64>, PsdRepair)> {
    if !omega.is_square() {
        return Err(Error::Contract(format!(
            "psd_repair needs a square matrix, got {}x{}",
            omega.nrows(),
            omega.ncols()
        )));
    }
    let n = omega.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let d = (omega[(i, j)] - omega[(j, i)]).abs();
            if d.is_nan() || d > ASYMMETRY_TOL {
                return Err(Error::Contract(format!("matrix is not symmetric at ({i},{j}): asymmetry {d:e}")));
            }
        }
    }
    if n == 0 {
        return Ok((omega.clone(), PsdRepair { changed: false, min_eigenvalue: 0.0, frobenius_delta: 0.0 }));
    }
    let eig = SymmetricEigen::new(omega.clone());
    let min_eigenvalue = eig.eigenvalues.min();
    if min_eigenvalue >= -PSD_TOL {
        return Ok((omega.clone(), PsdRepair { changed: false, min_eigenvalue, frobenius_delta: 0.0 }));
    }
    let clipped = eig.eigenvalues.map(|l| l.max(0.0));
    let v = &eig.eigenvectors;
    let mut repaired = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    // reassembly leaves rounding-level asymmetry
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (repaired[(i, j)] + repaired[(j, i)]);
            repaired[(i, j)] = avg;
            repaired[(j, i)] = avg;
        }
    }
    let frobenius_delta = (&repaired - omega).norm();
    Ok((repaired, PsdRepair { changed: true, min_eigenvalue, frobenius_delta }))
}

/// Adjusted expected returns `r` and covariance `Ω`, indexed assets
/// class-major (`i * C + j`) then currencies (`A * C + j`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedMoments {
    pub labels: Vec<String>,
    pub countries: Vec<Country>,
    pub asset_classes: Vec<String>,
    pub r: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub expected_rates: Vec<f64>,
    pub num_observations: usize,
    pub repair: PsdRepair,
}

impl AdjustedMoments {
    /// Builds moments directly, validating shapes, symmetry and PSD-ness.
    pub fn from_parts(
        countries: Vec<Country>,
        asset_classes: Vec<String>,
        r: DVector<f64>,
        omega: DMatrix<f64>,
        expected_rates: Vec<f64>,
    ) -> Result<Self> {
        let c = countries.len();
        let a = asset_classes.len();
        let dim = (a + 1) * c;
        if r.len() != dim || omega.nrows() != dim || omega.ncols() != dim {
            return Err(Error::Contract(format!(
                "moments for {a} classes and {c} countries need dimension {dim}, got r={} omega={}x{}",
                r.len(),
                omega.nrows(),
                omega.ncols()
            )));
        }
        if expected_rates.len() != c {
            return Err(Error::Contract("one expected rate per country required".into()));
        }
        let (omega, repair) = psd_repair(&omega)?;
        let mut labels = Vec::with_capacity(dim);
        for class in &asset_classes {
            for country in &countries {
                labels.push(format!("asset:{class}:{}", country.code));
            }
        }
        labels.extend(countries.iter().map(|country| format!("ccy:{}", country.currency)));
        Ok(AdjustedMoments { labels, countries, asset_classes, r, omega, expected_rates, num_observations: 0, repair })
    }

    pub fn num_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn num_classes(&self) -> usize {
        self.asset_classes.len()
    }

    pub fn dim(&self) -> usize {
        self.r.len()
    }

    pub fn asset_index(&self, class: usize, country: usize) -> usize {
        class * self.num_countries() + country
    }

    pub fn currency_index(&self, country: usize) -> usize {
        self.num_classes() * self.num_countries() + country
    }

    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// Variance `xᵀΩx` of an exposure vector.
    pub fn variance(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.omega * x)[(0, 0)]
    }
}

/// Sample moments of the adjusted series.
///
/// Expected returns use the full-window mean of the raw series shifted by
/// the separately estimated expected rates; the covariance uses the `n − 1`
/// divisor over the adjusted series and is then passed through [`psd_repair`].
pub fn estimate_moments(adjusted: &AdjustedSeries, expected_rates: &[f64]) -> Result<AdjustedMoments> {
    let c = adjusted.countries.len();
    let a = adjusted.asset_classes.len();
    let dim = (a + 1) * c;
    if adjusted.columns.len() != dim || expected_rates.len() != c {
        return Err(Error::Contract(format!(
            "expected {dim} adjusted columns and {c} rates, got {} and {}",
            adjusted.columns.len(),
            expected_rates.len()
        )));
    }
    let n = adjusted.num_observations();
    if n < 3 {
        return Err(Error::InsufficientData { observations: n, required: 3 });
    }
    if adjusted.columns.iter().any(|col| col.len() != n) {
        return Err(Error::Alignment("adjusted series differ in length".into()));
    }

    let r = DVector::from_iterator(
        dim,
        (0..dim).map(|k| {
            let j = k % c;
            if k < a * c {
                adjusted.raw_means[k] - expected_rates[j]
            } else {
                adjusted.raw_means[k] + expected_rates[j]
            }
        }),
    );

    let centered: Vec<Vec<f64>> = adjusted
        .columns
        .iter()
        .map(|col| {
            let m = mean(col);
            col.iter().map(|v| v - m).collect()
        })
        .collect();
    let mut omega = DMatrix::zeros(dim, dim);
    for p in 0..dim {
        for q in p..dim {
            let s: f64 = centered[p].iter().zip(&centered[q]).map(|(x, y)| x * y).sum();
            let cov = s / (n - 1) as f64;
            omega[(p, q)] = cov;
            omega[(q, p)] = cov;
        }
    }
    let (omega, repair) = psd_repair(&omega)?;

    Ok(AdjustedMoments {
        labels: adjusted.labels.clone(),
        countries: adjusted.countries.clone(),
        asset_classes: adjusted.asset_classes.clone(),
        r,
        omega,
        expected_rates: expected_rates.to_vec(),
        num_observations: n,
        repair,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    use crate::market_data::{parse_dataset, DatasetSchema};

    #[test]
    fn identity_is_unchanged() {
        let (m, rep) = psd_repair(&DMatrix::identity(4, 4)).unwrap();
        assert_eq!(m, DMatrix::identity(4, 4));
        assert!(!rep.changed);
    }

    #[test]
    fn indefinite_two_by_two_clips_to_rank_one() {
        // eigenvalues 3 and -1; clipping -1 leaves 3·vvᵀ with v = (1,1)/√2
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let (rep, info) = psd_repair(&m).unwrap();
        assert!(info.changed);
        assert_relative_eq!(info.min_eigenvalue, -1.0, epsilon = 1e-12);
        for v in rep.iter() {
            assert_relative_eq!(*v, 1.5, epsilon = 1e-12);
        }
        assert_relative_eq!(info.frobenius_delta, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rank_one_outer_product_is_unchanged() {
        let v = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let m = &v * v.transpose();
        let (out, info) = psd_repair(&m).unwrap();
        assert!(!info.changed);
        assert_eq!(out, m);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(matches!(psd_repair(&m), Err(Error::Contract(_))));
    }

    fn tiny_schema() -> DatasetSchema {
        serde_json::from_str(
            r#"{"countries":[{"code":"US","currency":"USD"},{"code":"UK","currency":"GBP"}],
                "asset_classes":["bond"],"base_country":"US","rate_window":3}"#,
        )
        .unwrap()
    }

    #[test]
    fn adjustment_subtracts_and_adds_rates() {
        let csv = "month,asset:bond:US,asset:bond:UK,ccy:GBP,rate:US,rate:UK\n\
                   2000-01,0.012,0.01,0.02,0.00004,0.001\n\
                   2000-02,0.012,0.01,0.02,0.00004,0.001\n\
                   2000-03,0.012,0.01,0.02,0.00004,0.001\n";
        let ds = parse_dataset(csv.as_bytes(), &tiny_schema()).unwrap();
        let adj = adjust_series(&ds).unwrap();
        assert_relative_eq!(adj.columns[0][0], 0.01196, epsilon = 1e-15);
        assert_relative_eq!(adj.columns[3][0], 0.021, epsilon = 1e-15);
        // base currency: adjusted series is the base rate
        assert_eq!(adj.columns[2], vec![0.00004; 3]);
    }

    #[test]
    fn constant_series_have_zero_variance() {
        let csv = "month,asset:bond:US,asset:bond:UK,ccy:GBP,rate:US,rate:UK\n\
                   2000-01,0.01,0.02,0.0,0,0\n2000-02,0.01,0.02,0.0,0,0\n2000-03,0.01,0.02,0.0,0,0\n";
        let ds = parse_dataset(csv.as_bytes(), &tiny_schema()).unwrap();
        let adj = adjust_series(&ds).unwrap();
        // zero rate series: adjusted equals input
        assert_eq!(adj.columns[0], ds.asset(0, 0).values);
        let m = estimate_moments(&adj, &[0.0, 0.0]).unwrap();
        assert_relative_eq!(m.r[0], 0.01, epsilon = 1e-15);
        assert_eq!(m.omega[(0, 0)], 0.0);
    }

    #[test]
    fn perfectly_correlated_series_have_unit_correlation() {
        let csv = "month,asset:bond:US,asset:bond:UK,ccy:GBP,rate:US,rate:UK\n\
                   2000-01,0.01,0.03,0.1,0,0\n2000-02,0.02,0.05,0.3,0,0\n\
                   2000-03,-0.01,-0.01,0.2,0,0\n2000-04,0.04,0.09,0.0,0,0\n";
        let ds = parse_dataset(csv.as_bytes(), &tiny_schema()).unwrap();
        let m = estimate_moments(&adjust_series(&ds).unwrap(), &[0.0, 0.0]).unwrap();
        let corr = m.omega[(0, 1)] / (m.omega[(0, 0)] * m.omega[(1, 1)]).sqrt();
        assert_relative_eq!(corr, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn too_few_observations() {
        let csv = "month,asset:bond:US,asset:bond:UK,ccy:GBP,rate:US,rate:UK\n\
                   2000-01,0.01,0.02,0.0,0,0\n2000-02,0.01,0.02,0.0,0,0\n";
        let mut schema = tiny_schema();
        schema.rate_window = 2;
        let ds = parse_dataset(csv.as_bytes(), &schema).unwrap();
        let err = estimate_moments(&adjust_series(&ds).unwrap(), &[0.0, 0.0]).unwrap_err();
        assert!(matches!(err, Error::InsufficientData { observations: 2, .. }));
    }
}
