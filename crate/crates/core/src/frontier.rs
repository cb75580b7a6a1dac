//! Efficient-frontier sweeps over return targets and the five experiment
//! presets, with their CSV and JSON outputs.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::market_data::AdjustedMoments;
use crate::overlay::OverlayStructure;
use crate::problem::{solve_spec, DecodedSolution, Mode, Policy, ProblemSpec};
use crate::solver::{MiqpOptions, MiqpStatus, Tolerances};

/// Inclusive grid of monthly return targets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MuGrid {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl MuGrid {
    /// 0.5% to 1.8% per month in steps of 0.01%.
    pub const DEFAULT: MuGrid = MuGrid { lo: 0.005, hi: 0.018, step: 0.0001 };

    pub fn new(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite() && step.is_finite()) {
            return Err(Error::config("mu", "grid bounds must be finite"));
        }
        if lo > hi {
            return Err(Error::config("mu", format!("grid start {lo} exceeds end {hi}")));
        }
        if step <= 0.0 {
            return Err(Error::config("mu", "grid step must be positive"));
        }
        Ok(MuGrid { lo, hi, step })
    }

    pub fn single(mu: f64) -> Self {
        MuGrid { lo: mu, hi: mu, step: 1.0 }
    }

    pub fn len(&self) -> usize {
        ((self.hi - self.lo) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Grid points, rounded to 1e-12 so that decimal steps print cleanly.
    pub fn points(&self) -> Vec<f64> {
        (0..self.len()).map(|i| ((self.lo + i as f64 * self.step) * 1e12).round() / 1e12).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub nodes_explored: usize,
    pub qp_solves: usize,
    pub wall_time: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub mu: f64,
    pub status: MiqpStatus,
    pub stats: SolveStats,
    /// Present when the solve produced a point.
    pub solution: Option<DecodedSolution>,
}

impl FrontierPoint {
    pub fn is_optimal(&self) -> bool {
        self.status == MiqpStatus::Optimal && self.solution.is_some()
    }

    pub fn volatility(&self) -> Option<f64> {
        self.solution.as_ref().filter(|_| self.is_optimal()).map(|s| s.volatility)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frontier {
    pub spec: ProblemSpec,
    pub grid: MuGrid,
    pub country_codes: Vec<String>,
    pub asset_classes: Vec<String>,
    /// Contract names such as `USDEUR`.
    pub pair_names: Vec<String>,
    pub points: Vec<FrontierPoint>,
    pub wall_time: f64,
}

/// Contract names such as `USDEUR`, in contract order.
pub fn pair_names(moments: &AdjustedMoments) -> Vec<String> {
    OverlayStructure::pairs_for(moments.num_countries())
        .pairs()
        .iter()
        .map(|&(a, b)| format!("{}{}", moments.countries[a].currency, moments.countries[b].currency))
        .collect()
}

/// Solves `spec` at every grid target, in parallel on the current rayon
/// pool. Points come back in grid order whatever their status.
pub fn sweep(moments: &AdjustedMoments, spec: &ProblemSpec, grid: &MuGrid, opts: &MiqpOptions) -> Result<Frontier> {
    spec.validate(moments.num_countries())?;
    let start = Instant::now();
    let points = grid
        .points()
        .into_par_iter()
        .map(|mu| {
            let mut s = spec.clone();
            s.mu = mu;
            let (_, sol) = solve_spec(moments, &s, opts)?;
            Ok(FrontierPoint {
                mu,
                status: sol.status,
                stats: SolveStats {
                    nodes_explored: sol.nodes_explored,
                    qp_solves: sol.qp_solves,
                    wall_time: sol.wall_time,
                    gap: sol.gap,
                },
                solution: sol.decoded,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Frontier {
        spec: spec.clone(),
        grid: *grid,
        country_codes: moments.countries.iter().map(|c| c.code.clone()).collect(),
        asset_classes: moments.asset_classes.clone(),
        pair_names: pair_names(moments),
        points,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// `100·(σ_other/σ_base − 1)` per target; `None` unless both points are optimal.
pub fn relative_volatility_increase(base: &Frontier, other: &Frontier) -> Result<Vec<Option<f64>>> {
    if base.points.len() != other.points.len()
        || base.points.iter().zip(&other.points).any(|(a, b)| (a.mu - b.mu).abs() > 1e-12)
    {
        return Err(Error::Contract("frontiers are on different return grids".into()));
    }
    Ok(base
        .points
        .iter()
        .zip(&other.points)
        .map(|(b, o)| match (b.volatility(), o.volatility()) {
            (Some(sb), Some(so)) if sb > 0.0 => Some(100.0 * (so / sb - 1.0)),
            _ => None,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Approach,
    Hedging,
    Margin,
    OverlayLimit,
    Cardinality,
}

impl Experiment {
    pub const ALL: [Experiment; 5] = [
        Experiment::Approach,
        Experiment::Hedging,
        Experiment::Margin,
        Experiment::OverlayLimit,
        Experiment::Cardinality,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Approach => "approach",
            Experiment::Hedging => "hedging",
            Experiment::Margin => "margin",
            Experiment::OverlayLimit => "overlay_limit",
            Experiment::Cardinality => "cardinality",
        }
    }

    /// Parameter cells of the preset, each as `(label, spec)`, plus the
    /// label of the base cell for relative comparisons.
    pub fn cells(self, base: &ProblemSpec) -> (Vec<(String, ProblemSpec)>, String) {
        let with = |f: &dyn Fn(&mut ProblemSpec)| {
            let mut s = base.clone();
            f(&mut s);
            s
        };
        match self {
            Experiment::Approach => (
                [Mode::Unified, Mode::TwoStage].iter().map(|&m| (format!("mode={m}"), with(&|s| s.mode = m))).collect(),
                "mode=unified".into(),
            ),
            Experiment::Hedging => (
                Policy::ALL.iter().map(|&p| (format!("policy={p}"), with(&|s| s.policy = p))).collect(),
                "policy=unrestricted".into(),
            ),
            Experiment::Margin => (
                [0.0, 0.03, 0.05, 0.07, 0.10, 0.30, 0.50]
                    .iter()
                    .map(|&m| (format!("M={m}"), with(&|s| s.margin = m)))
                    .collect(),
                "M=0".into(),
            ),
            Experiment::OverlayLimit => (
                [0.0, 0.1, 0.3, 0.5, 1.0].iter().map(|&v| (format!("V_u={v}"), with(&|s| s.v_u = v))).collect(),
                "V_u=1".into(),
            ),
            Experiment::Cardinality => {
                let k = base.num_contracts();
                ((0..=k).map(|g| (format!("G={g}"), with(&|s| s.g = g))).collect(), format!("G={k}"))
            }
        }
    }
}

impl FromStr for Experiment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL.into_iter().find(|e| e.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
            Error::Domain(format!("unknown experiment '{s}'; valid names: {}", names.join(", ")))
        })
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub label: String,
    pub frontier: Frontier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: Experiment,
    pub grid: MuGrid,
    pub cells: Vec<ExperimentCell>,
    pub base_label: String,
    /// Relative volatility increase of every cell against the base cell.
    pub relative: Vec<(String, Vec<Option<f64>>)>,
    pub wall_time: f64,
}

impl ExperimentResult {
    pub fn cell(&self, label: &str) -> Option<&Frontier> {
        self.cells.iter().find(|c| c.label == label).map(|c| &c.frontier)
    }
}

pub fn run_experiment(
    experiment: Experiment,
    moments: &AdjustedMoments,
    base_spec: &ProblemSpec,
    grid: &MuGrid,
    opts: &MiqpOptions,
) -> Result<ExperimentResult> {
    let start = Instant::now();
    let (specs, base_label) = experiment.cells(base_spec);
    let mut cells = Vec::with_capacity(specs.len());
    for (label, spec) in specs {
        cells.push(ExperimentCell { label, frontier: sweep(moments, &spec, grid, opts)? });
    }
    let base = &cells.iter().find(|c| c.label == base_label).expect("preset includes its base cell").frontier;
    let relative = cells
        .iter()
        .map(|c| Ok((c.label.clone(), relative_volatility_increase(base, &c.frontier)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult {
        experiment,
        grid: *grid,
        cells,
        base_label,
        relative,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

fn num(v: f64) -> String {
    format!("{v:.12}")
}

/// Frontier as CSV text: one row per target, infeasible rows keep their
/// status and leave the numeric columns empty.
pub fn frontier_csv(f: &Frontier) -> String {
    let mut out = String::from("mu,volatility,status,V");
    for c in &f.country_codes {
        out.push_str(&format!(",overlay_{c}"));
    }
    for a in &f.asset_classes {
        out.push_str(&format!(",{a}_total"));
    }
    out.push_str(",cash,active_forwards,cost_paid,forward_pairs\n");
    let blanks = 3 + f.country_codes.len() + f.asset_classes.len() + 2;
    for p in &f.points {
        out.push_str(&format!("{},", p.mu));
        match p.solution.as_ref().filter(|_| p.is_optimal()) {
            Some(s) => {
                let mut cols = vec![num(s.volatility), p.status.as_str().to_string(), num(s.total_overlay)];
                cols.extend(s.overlay.iter().map(|v| num(*v)));
                cols.extend(s.class_totals.iter().map(|v| num(*v)));
                cols.push(num(s.cash));
                cols.push(s.active_count().to_string());
                cols.push(num(s.cost.total));
                let pairs: Vec<&str> =
                    s.active.iter().zip(&f.pair_names).filter(|(a, _)| **a).map(|(_, n)| n.as_str()).collect();
                cols.push(pairs.join(";"));
                out.push_str(&cols.join(","));
            }
            None => {
                let mut cols = vec![String::new(), p.status.as_str().to_string()];
                cols.extend(vec![String::new(); blanks - 2]);
                out.push_str(&cols.join(","));
            }
        }
        out.push('\n');
    }
    out
}

pub fn relative_csv(r: &ExperimentResult) -> String {
    let mut out = String::from("mu");
    for (label, _) in &r.relative {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for (i, mu) in r.grid.points().iter().enumerate() {
        out.push_str(&mu.to_string());
        for (_, series) in &r.relative {
            out.push(',');
            if let Some(v) = series[i] {
                out.push_str(&num(v));
            }
        }
        out.push('\n');
    }
    out
}

/// SHA-256 of the spec's JSON form.
pub fn spec_hash(spec: &ProblemSpec) -> String {
    let json = serde_json::to_vec(spec).expect("specs serialise");
    Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub label: String,
    pub grid: MuGrid,
    pub points: usize,
    pub spec: ProblemSpec,
    pub spec_hash: String,
    pub tolerances: Tolerances,
    pub runtime_seconds: f64,
    pub timestamp: u64,
    pub optimal: usize,
    pub infeasible: usize,
    pub failed: usize,
    pub files: Vec<String>,
}

pub fn frontier_manifest(label: &str, f: &Frontier, tol: &Tolerances, files: Vec<String>) -> Manifest {
    let count = |s: MiqpStatus| f.points.iter().filter(|p| p.status == s).count();
    let optimal = count(MiqpStatus::Optimal);
    let infeasible = count(MiqpStatus::Infeasible);
    Manifest {
        label: label.to_string(),
        grid: f.grid,
        points: f.points.len(),
        spec: f.spec.clone(),
        spec_hash: spec_hash(&f.spec),
        tolerances: *tol,
        runtime_seconds: f.wall_time,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        optimal,
        infeasible,
        failed: f.points.len() - optimal - infeasible,
        files,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

/// Writes `frontier.csv` and `manifest.json` into `dir`.
pub fn write_frontier(dir: &Path, label: &str, f: &Frontier, tol: &Tolerances) -> Result<()> {
    create_dir(dir)?;
    write(&dir.join("frontier.csv"), &frontier_csv(f))?;
    let manifest = frontier_manifest(label, f, tol, vec!["frontier.csv".into()]);
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}

/// One subdirectory per cell plus `relative_volatility.csv` and an
/// experiment-level `manifest.json`.
pub fn write_experiment(dir: &Path, r: &ExperimentResult, tol: &Tolerances) -> Result<()> {
    create_dir(dir)?;
    let mut files = Vec::new();
    for cell in &r.cells {
        write_frontier(&dir.join(&cell.label), &cell.label, &cell.frontier, tol)?;
        files.push(format!("{}/frontier.csv", cell.label));
    }
    write(&dir.join("relative_volatility.csv"), &relative_csv(r))?;
    files.push("relative_volatility.csv".into());

    #[derive(Serialize)]
    struct ExperimentManifest<'a> {
        experiment: Experiment,
        grid: MuGrid,
        base_cell: &'a str,
        cells: Vec<&'a str>,
        cell_spec_hashes: Vec<String>,
        tolerances: Tolerances,
        runtime_seconds: f64,
        timestamp: u64,
        files: Vec<String>,
    }
    let manifest = ExperimentManifest {
        experiment: r.experiment,
        grid: r.grid,
        base_cell: &r.base_label,
        cells: r.cells.iter().map(|c| c.label.as_str()).collect(),
        cell_spec_hashes: r.cells.iter().map(|c| spec_hash(&c.frontier.spec)).collect(),
        tolerances: *tol,
        runtime_seconds: r.wall_time,
        timestamp: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
        files,
    };
    write(&dir.join("manifest.json"), &serde_json::to_string_pretty(&manifest)?)
}
