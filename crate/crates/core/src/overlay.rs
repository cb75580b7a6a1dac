//! Forward-contract combinatorics and the overlay arithmetic built on them.
//!
//! For `C` currencies there are `K = C(C−1)/2` distinct forward contracts,
//! one per unordered pair, listed lexicographically. Contract `k` on pair
//! `(first, second)` with signed size `q_k` adds `+q_k` exposure to `first`
//! and `−q_k` to `second`: a positive size buys the first currency and sells
//! the second.
//!
//! Cost of carry is reported here for diagnostics only. The optimiser already
//! folds it into the adjusted moments, so adding it to portfolio return again
//! would count it twice.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported country count.
pub const MAX_COUNTRIES: usize = 12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayStructure {
    num_countries: usize,
    pairs: Vec<(usize, usize)>,
    /// Contract sizes as fractions of portfolio value.
    pub q: Vec<f64>,
}

/// `C(C−1)/2` contracts over `C` countries with zero sizes.
pub fn build_combinatorics(num_countries: usize) -> Result<OverlayStructure> {
    if num_countries < 2 {
        return Err(Error::Domain(format!("at least two countries are needed for forwards, got {num_countries}")));
    }
    if num_countries > MAX_COUNTRIES {
        return Err(Error::Domain(format!("at most {MAX_COUNTRIES} countries are supported, got {num_countries}")));
    }
    Ok(OverlayStructure::pairs_for(num_countries))
}

impl OverlayStructure {
    /// Pair enumeration without the `C ≥ 2` domain check; a single country
    /// yields an empty contract list.
    pub(crate) fn pairs_for(num_countries: usize) -> Self {
        let pairs: Vec<(usize, usize)> =
            (0..num_countries).flat_map(|a| ((a + 1)..num_countries).map(move |b| (a, b))).collect();
        let q = vec![0.0; pairs.len()];
        OverlayStructure { num_countries, pairs, q }
    }

    pub fn with_sizes(mut self, q: Vec<f64>) -> Result<Self> {
        if q.len() != self.pairs.len() {
            return Err(Error::Contract(format!("expected {} contract sizes, got {}", self.pairs.len(), q.len())));
        }
        self.q = q;
        Ok(self)
    }

    pub fn num_countries(&self) -> usize {
        self.num_countries
    }

    pub fn num_contracts(&self) -> usize {
        self.pairs.len()
    }

    /// `(buy, sell)` country indices for a positive size.
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn pair_index(&self, first: usize, second: usize) -> Option<usize> {
        let key = if first < second { (first, second) } else { (second, first) };
        self.pairs.iter().position(|&p| p == key)
    }

    /// Entry `T_kj` of the combinatorial matrix.
    pub fn t(&self, k: usize, j: usize) -> i8 {
        let (first, second) = self.pairs[k];
        if j == first {
            1
        } else if j == second {
            -1
        } else {
            0
        }
    }

    pub fn t_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.num_contracts(), self.num_countries, |k, j| f64::from(self.t(k, j)))
    }

    /// Per-country net forward position `Σ_k F_kj`.
    pub fn overlay(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.num_countries];
        for (&(first, second), &q) in self.pairs.iter().zip(&self.q) {
            v[first] += q;
            v[second] -= q;
        }
        v
    }

    /// Gross forward exposure `Σ_k |q_k|`.
    pub fn gross(&self) -> f64 {
        self.q.iter().map(|q| q.abs()).sum()
    }
}

/// `F = T ∘ (1ᵀ ⊗ q)`: row `k` carries `q_k` at its buy country and `−q_k`
/// at its sell country.
pub fn forward_exposure_matrix(s: &OverlayStructure) -> DMatrix<f64> {
    DMatrix::from_fn(s.num_contracts(), s.num_countries(), |k, j| f64::from(s.t(k, j)) * s.q[k])
}

/// Half the gross per-country overlay.
pub fn total_overlay(overlay: &[f64]) -> f64 {
    0.5 * overlay.iter().map(|v| v.abs()).sum::<f64>()
}

/// Asset, overlay and currency exposure per country.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExposureReport {
    pub asset_exposure: Vec<f64>,
    pub overlay: Vec<f64>,
    /// Operating cash, held in the base currency (country 0). It is part of
    /// the base currency exposure but not of the asset exposure row.
    pub cash: f64,
    pub currency_exposure: Vec<f64>,
    pub total_overlay: f64,
}

/// `a` is `A × C` (classes by countries).
pub fn exposure_report(a: &DMatrix<f64>, s: &OverlayStructure) -> Result<ExposureReport> {
    exposure_report_with_cash(a, 0.0, s)
}

pub fn exposure_report_with_cash(a: &DMatrix<f64>, cash: f64, s: &OverlayStructure) -> Result<ExposureReport> {
    if a.ncols() != s.num_countries() {
        return Err(Error::Contract(format!(
            "asset matrix has {} countries, overlay structure {}",
            a.ncols(),
            s.num_countries()
        )));
    }
    let asset_exposure: Vec<f64> = a.column_iter().map(|col| col.sum()).collect();
    let overlay = s.overlay();
    let currency_exposure = asset_exposure
        .iter()
        .zip(&overlay)
        .enumerate()
        .map(|(j, (x, v))| x + v + if j == 0 { cash } else { 0.0 })
        .collect();
    Ok(ExposureReport { total_overlay: total_overlay(&overlay), asset_exposure, overlay, cash, currency_exposure })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarryReport {
    pub per_contract: Vec<f64>,
    pub total: f64,
    /// `Σ_j overlay_j · rate_j`, which must equal `total`.
    pub via_overlay: f64,
}

/// Carry earned by each contract: `q_k · (rate_buy − rate_sell)`.
pub fn cost_of_carry(s: &OverlayStructure, rates: &[f64]) -> Result<CarryReport> {
    if rates.len() != s.num_countries() {
        return Err(Error::Contract(format!("expected {} rates, got {}", s.num_countries(), rates.len())));
    }
    let per_contract: Vec<f64> =
        s.pairs.iter().zip(&s.q).map(|(&(first, second), &q)| q * (rates[first] - rates[second])).collect();
    let total = per_contract.iter().sum();
    let via_overlay = s.overlay().iter().zip(rates).map(|(v, r)| v * r).sum();
    Ok(CarryReport { per_contract, total, via_overlay })
}

/// Outright forward price of one unit of foreign currency in base currency,
/// `spot · (1 + i_base) / (1 + i_foreign)`.
pub fn forward_rate(spot: f64, base_rate: f64, foreign_rate: f64) -> Result<f64> {
    if !(spot > 0.0) {
        return Err(Error::Domain(format!("spot must be positive, got {spot}")));
    }
    if !(base_rate > -1.0 && foreign_rate > -1.0) {
        return Err(Error::Domain("interest rates must exceed -100%".into()));
    }
    Ok(spot * (1.0 + base_rate) / (1.0 + foreign_rate))
}

/// Transaction cost parameters, all fractions of portfolio value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    /// Fixed operating cost per active contract (α).
    pub fixed_cost: f64,
    /// Proportional spread per contract (β_k), shared by buy and sell legs.
    pub spreads: Vec<f64>,
    /// Cash held per unit of gross forward exposure (M).
    pub margin: f64,
}

impl CostModel {
    pub fn validate(&self, num_contracts: usize) -> Result<()> {
        if !(self.fixed_cost >= 0.0 && self.fixed_cost.is_finite()) {
            return Err(Error::config("alpha", "must be a finite non-negative number"));
        }
        if self.spreads.len() != num_contracts {
            return Err(Error::config("beta", format!("expected {num_contracts} spreads, got {}", self.spreads.len())));
        }
        if self.spreads.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::config("beta", "spreads must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::config("M", format!("margin must lie in [0, 1], got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub per_contract: Vec<f64>,
    pub fixed: f64,
    pub variable: f64,
    pub total: f64,
}

/// `Σ_k active_k·α + β_k·|q_k|`.
pub fn transaction_cost(s: &OverlayStructure, active: &[bool], cm: &CostModel) -> Result<CostBreakdown> {
    let k = s.num_contracts();
    if active.len() != k || cm.spreads.len() != k {
        return Err(Error::Contract(format!("expected {k} activation flags and spreads")));
    }
    let mut per_contract = Vec::with_capacity(k);
    let (mut fixed, mut variable) = (0.0, 0.0);
    for idx in 0..k {
        let q = s.q[idx];
        if q != 0.0 && !active[idx] {
            return Err(Error::Contract(format!("contract {idx} has size {q} but is not active")));
        }
        let f = if active[idx] { cm.fixed_cost } else { 0.0 };
        let v = cm.spreads[idx] * q.abs();
        fixed += f;
        variable += v;
        per_contract.push(f + v);
    }
    Ok(CostBreakdown { per_contract, fixed, variable, total: fixed + variable })
}

/// Cash required as collateral: `M · Σ_k |q_k|`.
pub fn margin_cash(s: &OverlayStructure, margin: f64) -> f64 {
    margin * s.gross()
}

/// Contract sizes realising a zero-sum overlay with at most `C − 1` contracts,
/// all against the base currency (country 0).
pub fn represent_overlay(overlay: &[f64]) -> Result<OverlayStructure> {
    let c = overlay.len();
    let sum: f64 = overlay.iter().sum();
    let scale = overlay.iter().fold(1.0_f64, |m, v| m.max(v.abs()));
    if sum.abs() > 1e-12 * scale {
        return Err(Error::Domain(format!("overlay must sum to zero, sums to {sum:e}")));
    }
    let mut s = build_combinatorics(c)?;
    for j in 1..c {
        let k = s.pair_index(0, j).expect("pair exists");
        s.q[k] = -overlay[j];
    }
    Ok(s)
}

/// Reads a `pair,beta` spread table; pair names concatenate the two currency
/// codes in country order (`USDEUR`), though the reversed name is accepted.
pub fn load_spread_table(path: &Path, currencies: &[String]) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    parse_spread_table(&text, currencies)
}

pub fn parse_spread_table(text: &str, currencies: &[String]) -> Result<Vec<f64>> {
    let s = OverlayStructure::pairs_for(currencies.len());
    let mut spreads: Vec<Option<f64>> = vec![None; s.num_contracts()];
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "pair" || &headers[1] != "beta" {
        return Err(Error::Schema("spread table header must be 'pair,beta'".into()));
    }
    for (idx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = idx + 2;
        let name = &rec[0];
        let k = s.pairs().iter().position(|&(a, b)| {
            let fwd = format!("{}{}", currencies[a], currencies[b]);
            let rev = format!("{}{}", currencies[b], currencies[a]);
            name == fwd || name == rev
        });
        let Some(k) = k else { continue };
        let beta: f64 = rec[1].parse().map_err(|_| Error::Parse {
            row,
            column: "beta".into(),
            message: format!("'{}' is not a number", &rec[1]),
        })?;
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Parse { row, column: "beta".into(), message: "spread must be non-negative".into() });
        }
        spreads[k] = Some(beta);
    }
    spreads
        .iter()
        .enumerate()
        .map(|(k, b)| {
            b.ok_or_else(|| {
                let (a, c) = s.pairs()[k];
                Error::Schema(format!("spread table lacks pair {}{}", currencies[a], currencies[c]))
            })
        })
        .collect()
}
