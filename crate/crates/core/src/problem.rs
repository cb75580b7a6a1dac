//! Builds the mean-variance problem with an integrated currency overlay as a
//! mixed-binary convex QP.
//!
//! Variables, in order: asset weights `a` (class-major, `A·C`), operating
//! cash, the positive and negative parts `q⁺`, `q⁻` of every contract size,
//! one overlay auxiliary `t_j` per country, then the binaries: activation
//! `b_k` followed by sign `s_k`.
//!
//! Currency exposure is not a variable. It is the affine expression
//! `c_j = Σ_i a_ij + [j = base]·cash + Σ_k T_kj (q⁺_k − q⁻_k)`, and the
//! objective is the variance of the exposure vector `x = [a; c]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::market_data::AdjustedMoments;
use crate::overlay::{CostBreakdown, OverlayStructure};
use crate::solver::{solve_miqp_with, MiqpOptions, MiqpSolution, MiqpStatus, QpProblem};

/// Fixed operating cost per active contract, 0.0001% of portfolio value.
pub const DEFAULT_FIXED_COST: f64 = 0.000_001;
pub const DEFAULT_MARGIN: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    Unrestricted,
    FullyHedged,
    ForeignOnly,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::FullyHedged, Policy::ForeignOnly, Policy::Unrestricted];

    pub fn as_str(self) -> &'static str {
        match self {
            Policy::Unrestricted => "unrestricted",
            Policy::FullyHedged => "fully_hedged",
            Policy::ForeignOnly => "foreign_only",
        }
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrestricted" => Ok(Policy::Unrestricted),
            "fully_hedged" => Ok(Policy::FullyHedged),
            "foreign_only" => Ok(Policy::ForeignOnly),
            other => Err(Error::Domain(format!(
                "unknown policy '{other}' (expected unrestricted, fully_hedged or foreign_only)"
            ))),
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Unified,
    TwoStage,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Unified => "unified",
            Mode::TwoStage => "two_stage",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unified" => Ok(Mode::Unified),
            "two_stage" => Ok(Mode::TwoStage),
            other => Err(Error::Domain(format!("unknown mode '{other}' (expected unified or two_stage)"))),
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Constraint parameters of one optimisation. Returns and rates are monthly
/// decimals; every other quantity is a fraction of portfolio value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    /// Target monthly return net of transaction costs.
    pub mu: f64,
    /// Cap on the total overlay.
    #[serde(rename = "V_u")]
    pub v_u: f64,
    #[serde(rename = "E_l")]
    pub e_l: Vec<f64>,
    #[serde(rename = "E_u")]
    pub e_u: Vec<f64>,
    /// Per-contract size bounds, `l_k ≤ q_k ≤ u_k`.
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    /// Maximum number of active contracts.
    #[serde(rename = "G")]
    pub g: usize,
    #[serde(rename = "M")]
    pub margin: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub policy: Policy,
    pub mode: Mode,
    pub no_short_assets: bool,
    /// Forbid active contracts from closing a cycle of currencies.
    #[serde(default = "default_true")]
    pub acyclic: bool,
}

fn default_true() -> bool {
    true
}

impl ProblemSpec {
    /// Default parameters for `C` countries: full overlay allowed, exposures
    /// in `[0, 1]`, contract sizes in `[−1, 1]`, every contract usable and a
    /// 10% margin.
    pub fn defaults(num_countries: usize, spreads: Vec<f64>) -> Self {
        let k = num_countries * num_countries.saturating_sub(1) / 2;
        ProblemSpec {
            mu: 0.01,
            v_u: 1.0,
            e_l: vec![0.0; num_countries],
            e_u: vec![1.0; num_countries],
            l: vec![-1.0; k],
            u: vec![1.0; k],
            g: k,
            margin: DEFAULT_MARGIN,
            alpha: DEFAULT_FIXED_COST,
            beta: spreads,
            policy: Policy::Unrestricted,
            mode: Mode::Unified,
            no_short_assets: true,
            acyclic: true,
        }
    }

    pub fn num_countries(&self) -> usize {
        self.e_l.len()
    }

    pub fn num_contracts(&self) -> usize {
        self.l.len()
    }

    pub fn validate(&self, num_countries: usize) -> Result<()> {
        let k = num_countries * num_countries.saturating_sub(1) / 2;
        if !self.mu.is_finite() {
            return Err(Error::config("mu", "must be finite"));
        }
        if !(0.0..=1.0).contains(&self.v_u) {
            return Err(Error::config("V_u", format!("must lie in [0, 1], got {}", self.v_u)));
        }
        for (name, v, len) in [
            ("E_l", &self.e_l, num_countries),
            ("E_u", &self.e_u, num_countries),
            ("l", &self.l, k),
            ("u", &self.u, k),
            ("beta", &self.beta, k),
        ] {
            if v.len() != len {
                return Err(Error::config(name, format!("expected {len} entries, got {}", v.len())));
            }
            if v.iter().any(|x| x.is_nan()) {
                return Err(Error::config(name, "entries must not be NaN"));
            }
        }
        if let Some(j) = (0..num_countries).find(|&j| self.e_l[j] > self.e_u[j]) {
            return Err(Error::config("E_l", format!("lower exposure bound exceeds upper bound for country {j}")));
        }
        for kk in 0..k {
            if !(self.l[kk] <= 0.0 && self.u[kk] >= 0.0 && self.l[kk] >= -1.0 && self.u[kk] <= 1.0) {
                return Err(Error::config("l", format!("contract {kk} needs -1 <= l <= 0 <= u <= 1")));
            }
        }
        if self.g > k {
            return Err(Error::config("G", format!("must lie in 0..={k}, got {}", self.g)));
        }
        if !(0.0..=1.0).contains(&self.margin) {
            return Err(Error::config("M", format!("must lie in [0, 1], got {}", self.margin)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::config("alpha", "must be finite and non-negative"));
        }
        if self.beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::config("beta", "spreads must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &SpecOverrides) -> Result<()> {
        let c = self.e_l.len();
        let k = self.l.len();
        if let Some(v) = o.mu {
            self.mu = v;
        }
        if let Some(v) = o.v_u {
            self.v_u = v;
        }
        if let Some(v) = &o.e_l {
            self.e_l = v.expand("E_l", c)?;
        }
        if let Some(v) = &o.e_u {
            self.e_u = v.expand("E_u", c)?;
        }
        if let Some(v) = &o.l {
            self.l = v.expand("l", k)?;
        }
        if let Some(v) = &o.u {
            self.u = v.expand("u", k)?;
        }
        if let Some(v) = o.g {
            self.g = v;
        }
        if let Some(v) = o.margin {
            self.margin = v;
        }
        if let Some(v) = o.alpha {
            self.alpha = v;
        }
        if let Some(v) = &o.beta {
            self.beta = v.expand("beta", k)?;
        }
        if let Some(v) = o.policy {
            self.policy = v;
        }
        if let Some(v) = o.mode {
            self.mode = v;
        }
        if let Some(v) = o.no_short_assets {
            self.no_short_assets = v;
        }
        if let Some(v) = o.acyclic {
            self.acyclic = v;
        }
        Ok(())
    }
}

/// A number applied to every entry, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrList {
    Scalar(f64),
    List(Vec<f64>),
}

impl ScalarOrList {
    fn expand(&self, field: &str, len: usize) -> Result<Vec<f64>> {
        match self {
            ScalarOrList::Scalar(v) => Ok(vec![*v; len]),
            ScalarOrList::List(v) if v.len() == len => Ok(v.clone()),
            ScalarOrList::List(v) => Err(Error::config(field, format!("expected {len} entries, got {}", v.len()))),
        }
    }
}

/// Partial specification, as read from a JSON spec file or CLI flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecOverrides {
    pub mu: Option<f64>,
    #[serde(rename = "V_u")]
    pub v_u: Option<f64>,
    #[serde(rename = "E_l")]
    pub e_l: Option<ScalarOrList>,
    #[serde(rename = "E_u")]
    pub e_u: Option<ScalarOrList>,
    pub l: Option<ScalarOrList>,
    pub u: Option<ScalarOrList>,
    #[serde(rename = "G")]
    pub g: Option<usize>,
    #[serde(rename = "M")]
    pub margin: Option<f64>,
    pub alpha: Option<f64>,
    pub beta: Option<ScalarOrList>,
    pub policy: Option<Policy>,
    pub mode: Option<Mode>,
    pub no_short_assets: Option<bool>,
    pub acyclic: Option<bool>,
}

impl SpecOverrides {
    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        serde_json::from_str(&text).map_err(|e| Error::config("spec", e.to_string()))
    }
}

/// Index layout of the lifted variable vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VarMap {
    pub num_classes: usize,
    pub num_countries: usize,
    pub num_contracts: usize,
}

/// Values of every variable block, as split out of a variable vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarValues {
    /// Rows are asset classes, columns countries.
    pub a: DMatrix<f64>,
    pub cash: f64,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub t: Vec<f64>,
    pub b: Vec<f64>,
    pub s: Vec<f64>,
}

impl VarMap {
    pub fn new(num_classes: usize, num_countries: usize) -> Self {
        VarMap { num_classes, num_countries, num_contracts: num_countries * num_countries.saturating_sub(1) / 2 }
    }

    pub fn a(&self, class: usize, country: usize) -> usize {
        class * self.num_countries + country
    }
    pub fn cash(&self) -> usize {
        self.num_classes * self.num_countries
    }
    pub fn q_plus(&self, k: usize) -> usize {
        self.cash() + 1 + k
    }
    pub fn q_minus(&self, k: usize) -> usize {
        self.cash() + 1 + self.num_contracts + k
    }
    pub fn t(&self, j: usize) -> usize {
        self.cash() + 1 + 2 * self.num_contracts + j
    }
    pub fn b(&self, k: usize) -> usize {
        self.n_cont() + k
    }
    pub fn s(&self, k: usize) -> usize {
        self.n_cont() + self.num_contracts + k
    }
    pub fn n_cont(&self) -> usize {
        self.cash() + 1 + 2 * self.num_contracts + self.num_countries
    }
    pub fn n_bin(&self) -> usize {
        2 * self.num_contracts
    }
    pub fn len(&self) -> usize {
        self.n_cont() + self.n_bin()
    }
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Variable names; `classes` and `countries` supply the labels.
    pub fn names(&self, classes: &[String], countries: &[String]) -> Vec<String> {
        let pairs = OverlayStructure::pairs_for(self.num_countries);
        let pair = |k: usize| {
            let (f, s) = pairs.pairs()[k];
            format!("{}{}", countries[f], countries[s])
        };
        let mut out = Vec::with_capacity(self.len());
        for class in classes.iter().take(self.num_classes) {
            for country in countries.iter().take(self.num_countries) {
                out.push(format!("a[{class},{country}]"));
            }
        }
        out.push("cash".into());
        out.extend((0..self.num_contracts).map(|k| format!("q+[{}]", pair(k))));
        out.extend((0..self.num_contracts).map(|k| format!("q-[{}]", pair(k))));
        out.extend(countries.iter().take(self.num_countries).map(|c| format!("t[{c}]")));
        out.extend((0..self.num_contracts).map(|k| format!("b[{}]", pair(k))));
        out.extend((0..self.num_contracts).map(|k| format!("s[{}]", pair(k))));
        out
    }

    pub fn split(&self, x: &DVector<f64>) -> VarValues {
        assert_eq!(x.len(), self.len(), "variable vector has wrong length");
        let k = self.num_contracts;
        VarValues {
            a: DMatrix::from_fn(self.num_classes, self.num_countries, |i, j| x[self.a(i, j)]),
            cash: x[self.cash()],
            q_plus: (0..k).map(|i| x[self.q_plus(i)]).collect(),
            q_minus: (0..k).map(|i| x[self.q_minus(i)]).collect(),
            t: (0..self.num_countries).map(|j| x[self.t(j)]).collect(),
            b: (0..k).map(|i| x[self.b(i)]).collect(),
            s: (0..k).map(|i| x[self.s(i)]).collect(),
        }
    }

    pub fn join(&self, v: &VarValues) -> DVector<f64> {
        let mut x = DVector::zeros(self.len());
        for i in 0..self.num_classes {
            for j in 0..self.num_countries {
                x[self.a(i, j)] = v.a[(i, j)];
            }
        }
        x[self.cash()] = v.cash;
        for k in 0..self.num_contracts {
            x[self.q_plus(k)] = v.q_plus[k];
            x[self.q_minus(k)] = v.q_minus[k];
            x[self.b(k)] = v.b[k];
            x[self.s(k)] = v.s[k];
        }
        for j in 0..self.num_countries {
            x[self.t(j)] = v.t[j];
        }
        x
    }
}

/// Which optimisation a [`MixedBinaryQP`] represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Unified,
    /// Asset allocation with every forward fixed at zero.
    AssetsOnly,
    /// Forwards and cash around a frozen asset allocation.
    OverlayOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedBinaryQP {
    /// Objective and constraints with binaries included as `[0, 1]`
    /// continuous variables.
    pub qp: QpProblem,
    pub binary_index: Vec<usize>,
    pub var_map: VarMap,
    pub spec: ProblemSpec,
    pub stage: Stage,
    /// Maps the variable vector to the exposure vector `[a; c]`.
    pub exposure: DMatrix<f64>,
    pub r: DVector<f64>,
    pub omega: DMatrix<f64>,
    pub structure: OverlayStructure,
}

impl MixedBinaryQP {
    pub fn n_cont(&self) -> usize {
        self.var_map.n_cont()
    }

    pub fn n_bin(&self) -> usize {
        self.var_map.n_bin()
    }

    fn currency_row(&self, j: usize) -> Vec<f64> {
        let dim = self.exposure.nrows();
        let c = self.var_map.num_countries;
        self.exposure.row(dim - c + j).iter().copied().collect()
    }

    pub fn decode(&self, x: &DVector<f64>) -> DecodedSolution {
        let vm = &self.var_map;
        let v = vm.split(x);
        let k = vm.num_contracts;
        let q: Vec<f64> = (0..k).map(|i| v.q_plus[i] - v.q_minus[i]).collect();
        let active: Vec<bool> = v.b.iter().map(|b| *b > 0.5).collect();
        let structure = self.structure.clone().with_sizes(q.clone()).expect("sizes match contracts");
        let report = crate::overlay::exposure_report_with_cash(&v.a, v.cash, &structure).expect("dimensions match");
        let xe = &self.exposure * x;
        let gross_return = self.r.dot(&xe);
        let mut per_contract = Vec::with_capacity(k);
        let (mut fixed, mut variable) = (0.0, 0.0);
        for i in 0..k {
            let f = self.spec.alpha * v.b[i];
            let var = self.spec.beta[i] * (v.q_plus[i] + v.q_minus[i]);
            fixed += f;
            variable += var;
            per_contract.push(f + var);
        }
        let cost = CostBreakdown { per_contract, fixed, variable, total: fixed + variable };
        let variance = (xe.transpose() * &self.omega * &xe)[(0, 0)].max(0.0);
        let class_totals = v.a.row_iter().map(|r| r.sum()).collect();
        DecodedSolution {
            a: v.a.row_iter().map(|r| r.iter().copied().collect()).collect(),
            cash: v.cash,
            q,
            q_plus: v.q_plus,
            q_minus: v.q_minus,
            active,
            asset_exposure: report.asset_exposure,
            overlay: report.overlay,
            currency_exposure: report.currency_exposure,
            total_overlay: report.total_overlay,
            overlay_aux_half_sum: 0.5 * v.t.iter().sum::<f64>(),
            class_totals,
            gross: structure.gross(),
            cost,
            gross_return,
            achieved_return: gross_return - fixed - variable,
            variance,
            volatility: variance.sqrt(),
            exposure_vector: xe.iter().copied().collect(),
        }
    }
}

/// Solution quantities in model terms, all recomputed from the raw vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodedSolution {
    /// Asset weights, classes by countries.
    pub a: Vec<Vec<f64>>,
    pub cash: f64,
    /// Signed contract sizes `q⁺ − q⁻`.
    pub q: Vec<f64>,
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub active: Vec<bool>,
    pub asset_exposure: Vec<f64>,
    pub overlay: Vec<f64>,
    pub currency_exposure: Vec<f64>,
    pub total_overlay: f64,
    pub overlay_aux_half_sum: f64,
    pub class_totals: Vec<f64>,
    pub gross: f64,
    pub cost: CostBreakdown,
    /// `xᵀr` before transaction costs.
    pub gross_return: f64,
    /// `xᵀr − Σφ_k`, the quantity pinned to the target.
    pub achieved_return: f64,
    pub variance: f64,
    pub volatility: f64,
    pub exposure_vector: Vec<f64>,
}

impl DecodedSolution {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// Checks the decoded point against `spec`; returns one message per
    /// violated condition.
    pub fn verify(&self, spec: &ProblemSpec, tol: f64) -> Vec<String> {
        let mut bad = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                bad.push(msg);
            }
        };
        let assets: f64 = self.class_totals.iter().sum();
        check((assets + self.cash - 1.0).abs() <= tol, format!("asset budget sums to {}", assets + self.cash));
        let ccy: f64 = self.currency_exposure.iter().sum();
        check((ccy - 1.0).abs() <= tol, format!("currency exposures sum to {ccy}"));
        let ov: f64 = self.overlay.iter().sum();
        check(ov.abs() <= tol, format!("overlay sums to {ov}"));
        check(
            (self.achieved_return - spec.mu).abs() <= tol,
            format!("achieved return {} differs from target {}", self.achieved_return, spec.mu),
        );
        check(
            self.total_overlay <= spec.v_u + tol,
            format!("total overlay {} exceeds {}", self.total_overlay, spec.v_u),
        );
        for (j, c) in self.currency_exposure.iter().enumerate() {
            check(
                *c >= spec.e_l[j] - tol && *c <= spec.e_u[j] + tol,
                format!("currency exposure {c} of country {j} outside bounds"),
            );
        }
        for k in 0..self.q.len() {
            check(self.q_plus[k].min(self.q_minus[k]) <= tol, format!("contract {k} has both legs positive"));
            check(
                self.q[k] >= spec.l[k] - tol && self.q[k] <= spec.u[k] + tol,
                format!("contract {k} size {} outside bounds", self.q[k]),
            );
            check(self.active[k] || self.q[k].abs() <= tol, format!("contract {k} used while inactive"));
        }
        check(self.active_count() <= spec.g, format!("{} active contracts exceed G = {}", self.active_count(), spec.g));
        check(
            (self.cash - spec.margin * self.gross).abs() <= tol,
            format!("cash {} differs from margin requirement {}", self.cash, spec.margin * self.gross),
        );
        if spec.no_short_assets {
            check(self.a.iter().flatten().all(|w| *w >= -tol), "negative asset weight".into());
        }
        match spec.policy {
            Policy::FullyHedged => check(
                (self.currency_exposure[0] - 1.0).abs() <= tol,
                format!("base exposure {} under fully hedged policy", self.currency_exposure[0]),
            ),
            Policy::ForeignOnly => check(
                self.currency_exposure[0].abs() <= tol,
                format!("base exposure {} under foreign only policy", self.currency_exposure[0]),
            ),
            Policy::Unrestricted => {}
        }
        bad
    }
}

/// Encodes the unified problem for `spec` on `moments`, with the hedging
/// policy applied.
pub fn assemble(moments: &AdjustedMoments, spec: &ProblemSpec) -> Result<MixedBinaryQP> {
    let c = moments.num_countries();
    let a = moments.num_classes();
    spec.validate(c)?;
    if moments.dim() != (a + 1) * c {
        return Err(Error::Contract("moment dimension does not match classes and countries".into()));
    }
    let lo: f64 = spec.e_l.iter().sum();
    let hi: f64 = spec.e_u.iter().sum();
    if lo > 1.0 + 1e-12 || hi < 1.0 - 1e-12 {
        return Err(Error::Infeasible(format!(
            "currency exposure bounds cannot sum to one (lower sum {lo}, upper sum {hi})"
        )));
    }

    let vm = VarMap::new(a, c);
    let structure = OverlayStructure::pairs_for(c);
    let k = vm.num_contracts;
    let n = vm.len();
    let dim = (a + 1) * c;

    let mut e = DMatrix::zeros(dim, n);
    for i in 0..a {
        for j in 0..c {
            e[(i * c + j, vm.a(i, j))] = 1.0;
            e[(a * c + j, vm.a(i, j))] = 1.0;
        }
    }
    e[(a * c, vm.cash())] = 1.0;
    for kk in 0..k {
        for j in 0..c {
            let t = f64::from(structure.t(kk, j));
            if t != 0.0 {
                e[(a * c + j, vm.q_plus(kk))] = t;
                e[(a * c + j, vm.q_minus(kk))] = -t;
            }
        }
    }

    let mut quadratic = e.transpose() * &moments.omega * &e;
    quadratic = (&quadratic + quadratic.transpose()) * 0.5;
    let mut qp = QpProblem::new(n);
    qp.quadratic = quadratic;

    // bounds
    let (a_lo, a_hi) = if spec.no_short_assets { (0.0, 1.0) } else { (-1.0, 1.0) };
    for i in 0..a {
        for j in 0..c {
            qp.lower[vm.a(i, j)] = a_lo;
            qp.upper[vm.a(i, j)] = a_hi;
        }
    }
    qp.lower[vm.cash()] = 0.0;
    qp.upper[vm.cash()] = 1.0;
    for kk in 0..k {
        qp.lower[vm.q_plus(kk)] = 0.0;
        qp.upper[vm.q_plus(kk)] = spec.u[kk];
        qp.lower[vm.q_minus(kk)] = 0.0;
        qp.upper[vm.q_minus(kk)] = -spec.l[kk];
        for idx in [vm.b(kk), vm.s(kk)] {
            qp.lower[idx] = 0.0;
            qp.upper[idx] = 1.0;
        }
    }
    for j in 0..c {
        qp.lower[vm.t(j)] = 0.0;
        qp.upper[vm.t(j)] = 2.0 * spec.v_u;
    }

    // return target net of fixed and proportional costs
    let mut row: Vec<f64> = (e.transpose() * &moments.r).iter().copied().collect();
    for kk in 0..k {
        row[vm.b(kk)] -= spec.alpha;
        row[vm.q_plus(kk)] -= spec.beta[kk];
        row[vm.q_minus(kk)] -= spec.beta[kk];
    }
    qp.push_eq(&row, spec.mu);

    // budgets: assets plus cash, and currency exposures
    let mut row = vec![0.0; n];
    for i in 0..a {
        for j in 0..c {
            row[vm.a(i, j)] = 1.0;
        }
    }
    row[vm.cash()] = 1.0;
    qp.push_eq(&row, 1.0);
    let mut row = vec![0.0; n];
    for j in 0..c {
        for (col, v) in e.row(a * c + j).iter().enumerate() {
            row[col] += v;
        }
    }
    qp.push_eq(&row, 1.0);

    // margin cash
    let mut row = vec![0.0; n];
    row[vm.cash()] = 1.0;
    for kk in 0..k {
        row[vm.q_plus(kk)] = -spec.margin;
        row[vm.q_minus(kk)] = -spec.margin;
    }
    qp.push_eq(&row, 0.0);

    // total overlay: t_j ≥ |overlay_j|, ½Σt ≤ V_u
    for j in 0..c {
        let mut up = vec![0.0; n];
        let mut down = vec![0.0; n];
        for kk in 0..k {
            let t = f64::from(structure.t(kk, j));
            up[vm.q_plus(kk)] = t;
            up[vm.q_minus(kk)] = -t;
            down[vm.q_plus(kk)] = -t;
            down[vm.q_minus(kk)] = t;
        }
        up[vm.t(j)] = -1.0;
        down[vm.t(j)] = -1.0;
        qp.push_ineq(&up, 0.0);
        qp.push_ineq(&down, 0.0);
    }
    let mut row = vec![0.0; n];
    for j in 0..c {
        row[vm.t(j)] = 0.5;
    }
    qp.push_ineq(&row, spec.v_u);

    // currency exposure bounds
    for j in 0..c {
        let ccy: Vec<f64> = e.row(a * c + j).iter().copied().collect();
        if spec.e_u[j].is_finite() {
            qp.push_ineq(&ccy, spec.e_u[j]);
        }
        if spec.e_l[j].is_finite() {
            let neg: Vec<f64> = ccy.iter().map(|v| -v).collect();
            qp.push_ineq(&neg, -spec.e_l[j]);
        }
    }

    // activation, sign exclusivity and cardinality
    for kk in 0..k {
        let mut row = vec![0.0; n];
        row[vm.q_plus(kk)] = 1.0;
        row[vm.b(kk)] = -spec.u[kk];
        qp.push_ineq(&row, 0.0);
        let mut row = vec![0.0; n];
        row[vm.q_minus(kk)] = 1.0;
        row[vm.b(kk)] = spec.l[kk];
        qp.push_ineq(&row, 0.0);
        let mut row = vec![0.0; n];
        row[vm.q_plus(kk)] = 1.0;
        row[vm.s(kk)] = -spec.u[kk];
        qp.push_ineq(&row, 0.0);
        let mut row = vec![0.0; n];
        row[vm.q_minus(kk)] = 1.0;
        row[vm.s(kk)] = -spec.l[kk];
        qp.push_ineq(&row, -spec.l[kk]);
        // an inactive contract has no sign to choose
        let mut row = vec![0.0; n];
        row[vm.s(kk)] = 1.0;
        row[vm.b(kk)] = -1.0;
        qp.push_ineq(&row, 0.0);
    }
    if k > 0 {
        let mut row = vec![0.0; n];
        for kk in 0..k {
            row[vm.b(kk)] = 1.0;
        }
        qp.push_ineq(&row, spec.g as f64);
    }
    if spec.acyclic {
        // forest condition: any set S of countries carries at most |S| − 1 contracts
        for mask in 0u32..(1 << c) {
            let size = mask.count_ones() as usize;
            if size < 3 {
                continue;
            }
            let mut row = vec![0.0; n];
            for (kk, &(f, s)) in structure.pairs().iter().enumerate() {
                if mask >> f & 1 == 1 && mask >> s & 1 == 1 {
                    row[vm.b(kk)] = 1.0;
                }
            }
            qp.push_ineq(&row, (size - 1) as f64);
        }
    }

    let binary_index = (0..vm.n_bin()).map(|i| vm.n_cont() + i).collect();
    let problem = MixedBinaryQP {
        qp,
        binary_index,
        var_map: vm,
        spec: spec.clone(),
        stage: Stage::Unified,
        exposure: e,
        r: moments.r.clone(),
        omega: moments.omega.clone(),
        structure,
    };
    Ok(apply_policy(problem, spec.policy))
}

/// Adds the base-currency exposure equality for a hedging policy: exposure
/// one for fully hedged, zero for foreign only. Cash counts as base currency.
pub fn apply_policy(mut problem: MixedBinaryQP, policy: Policy) -> MixedBinaryQP {
    let rhs = match policy {
        Policy::Unrestricted => return problem,
        Policy::FullyHedged => 1.0,
        Policy::ForeignOnly => 0.0,
    };
    let row = problem.currency_row(0);
    problem.qp.push_eq(&row, rhs);
    problem.spec.policy = policy;
    problem
}

/// First stage of the two-stage approach: the same problem with every
/// forward, and therefore the margin cash, fixed at zero.
pub fn build_stage_one(moments: &AdjustedMoments, spec: &ProblemSpec) -> Result<MixedBinaryQP> {
    let mut p = assemble(moments, spec)?;
    let vm = p.var_map.clone();
    for kk in 0..vm.num_contracts {
        for idx in [vm.q_plus(kk), vm.q_minus(kk), vm.b(kk), vm.s(kk)] {
            p.qp.lower[idx] = 0.0;
            p.qp.upper[idx] = 0.0;
        }
    }
    p.stage = Stage::AssetsOnly;
    Ok(p)
}

/// Second stage: asset weights frozen in the direction of `stage_one_a`
/// (classes by countries) and scaled by `1 − cash`; forwards and cash free.
pub fn build_stage_two(
    moments: &AdjustedMoments,
    spec: &ProblemSpec,
    stage_one_a: &[Vec<f64>],
) -> Result<MixedBinaryQP> {
    let mut p = assemble(moments, spec)?;
    let vm = p.var_map.clone();
    let n = vm.len();
    let total: f64 = stage_one_a.iter().flatten().sum();
    if stage_one_a.len() != vm.num_classes || total <= 0.0 {
        return Err(Error::Contract("stage-one allocation has the wrong shape or no weight".into()));
    }
    for i in 0..vm.num_classes {
        for j in 0..vm.num_countries {
            // a_ij = w_ij (1 − cash)  ⇔  a_ij + w_ij·cash = w_ij
            let w = stage_one_a[i][j] / total;
            let mut row = vec![0.0; n];
            row[vm.a(i, j)] = 1.0;
            row[vm.cash()] = w;
            p.qp.push_eq(&row, w);
        }
    }
    p.stage = Stage::OverlayOnly;
    Ok(p)
}

/// Solves `spec` on `moments` in the requested mode. A two-stage solve
/// reports the second stage, or the first stage when it fails.
pub fn solve_spec(
    moments: &AdjustedMoments,
    spec: &ProblemSpec,
    opts: &MiqpOptions,
) -> Result<(MixedBinaryQP, MiqpSolution)> {
    match spec.mode {
        Mode::Unified => {
            let p = assemble(moments, spec)?;
            let s = solve_miqp_with(&p, opts)?;
            Ok((p, s))
        }
        Mode::TwoStage => {
            let p1 = build_stage_one(moments, spec)?;
            let s1 = solve_miqp_with(&p1, opts)?;
            if s1.status != MiqpStatus::Optimal {
                return Ok((p1, s1));
            }
            let a1 = &s1.decoded.as_ref().expect("optimal solutions are decoded").a;
            let p2 = build_stage_two(moments, spec, a1)?;
            let mut s2 = solve_miqp_with(&p2, opts)?;
            s2.nodes_explored += s1.nodes_explored;
            s2.qp_solves += s1.qp_solves;
            s2.wall_time += s1.wall_time;
            Ok((p2, s2))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::Country;

    fn toy_moments() -> AdjustedMoments {
        let countries = ["US", "EU", "UK", "JP"]
            .iter()
            .zip(["USD", "EUR", "GBP", "JPY"])
            .map(|(c, y)| Country { code: c.to_string(), currency: y.to_string() })
            .collect();
        let dim = 12;
        let omega = DMatrix::from_fn(dim, dim, |i, j| if i == j { 0.001 * (1.0 + i as f64 * 0.1) } else { 0.0002 });
        let r = DVector::from_fn(dim, |i, _| 0.004 + 0.001 * i as f64);
        AdjustedMoments::from_parts(countries, vec!["bond".into(), "equity".into()], r, omega, vec![0.001; 4]).unwrap()
    }

    #[test]
    fn variable_counts_for_four_countries() {
        let m = toy_moments();
        let spec = ProblemSpec::defaults(4, vec![0.0; 6]);
        let p = assemble(&m, &spec).unwrap();
        assert_eq!(p.n_cont(), 8 + 1 + 12 + 4);
        assert_eq!(p.n_bin(), 12);
        assert_eq!(p.binary_index.len(), 12);
    }

    #[test]
    fn split_join_round_trip() {
        let vm = VarMap::new(2, 4);
        let x = DVector::from_fn(vm.len(), |i, _| i as f64 * 0.37 - 2.0);
        assert_eq!(vm.join(&vm.split(&x)), x);
        let names =
            vm.names(&["bond".into(), "equity".into()], &["USD".into(), "EUR".into(), "GBP".into(), "JPY".into()]);
        assert_eq!(names.len(), vm.len());
        assert_eq!(names[vm.q_plus(0)], "q+[USDEUR]");
        assert_eq!(names[vm.s(5)], "s[GBPJPY]");
    }

    #[test]
    fn fully_hedged_row_coefficients() {
        let m = toy_moments();
        let mut spec = ProblemSpec::defaults(4, vec![0.0; 6]);
        spec.policy = Policy::FullyHedged;
        let p = assemble(&m, &spec).unwrap();
        let last = p.qp.a_eq.nrows() - 1;
        let vm = &p.var_map;
        assert_eq!(p.qp.b_eq[last], 1.0);
        for idx in [vm.a(0, 0), vm.a(1, 0), vm.cash(), vm.q_plus(0), vm.q_plus(1), vm.q_plus(2)] {
            assert_eq!(p.qp.a_eq[(last, idx)], 1.0);
        }
        for idx in [vm.q_minus(0), vm.q_minus(1), vm.q_minus(2)] {
            assert_eq!(p.qp.a_eq[(last, idx)], -1.0);
        }
        assert_eq!(p.qp.a_eq[(last, vm.a(0, 1))], 0.0);
        assert_eq!(p.qp.a_eq[(last, vm.q_plus(3))], 0.0);
    }

    #[test]
    fn infeasible_exposure_bounds_rejected() {
        let m = toy_moments();
        let mut spec = ProblemSpec::defaults(4, vec![0.0; 6]);
        spec.e_l = vec![0.3; 4];
        assert!(matches!(assemble(&m, &spec), Err(Error::Infeasible(_))));
    }

    #[test]
    fn overrides_apply_and_validate() {
        let mut spec = ProblemSpec::defaults(4, vec![0.0; 6]);
        let o: SpecOverrides =
            serde_json::from_str(r#"{"V_u": 0.3, "G": 3, "E_u": 0.8, "policy": "foreign_only"}"#).unwrap();
        spec.apply(&o).unwrap();
        assert_eq!(spec.v_u, 0.3);
        assert_eq!(spec.g, 3);
        assert_eq!(spec.e_u, vec![0.8; 4]);
        assert_eq!(spec.policy, Policy::ForeignOnly);
        spec.g = 7;
        assert!(spec.validate(4).is_err());
        assert!(serde_json::from_str::<SpecOverrides>(r#"{"Vu": 1}"#).is_err());
    }
}
