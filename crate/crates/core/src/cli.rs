//! Command-line front end. Returns and rates on this surface are percent per
//! month; spec files use model units (monthly decimals and fractions).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixture;
use crate::frontier::{pair_names, run_experiment, sweep, write_experiment, write_frontier, Experiment, MuGrid};
use crate::market_data::{
    adjust_series, estimate_moments, load_dataset, AdjustedMoments, DatasetSchema, MarketDataSet,
};
use crate::overlay::load_spread_table;
use crate::problem::{solve_spec, DecodedSolution, Mode, Policy, ProblemSpec, SpecOverrides};
use crate::solver::{MiqpOptions, MiqpStatus, TraceEntry};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "fxoverlay", version, about = "Mean-variance portfolios with an FX-forward currency overlay")]
pub struct Cli {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Monthly returns CSV; the bundled four-country fixture when omitted.
    #[arg(long, global = true)]
    pub data: Option<PathBuf>,
    /// Dataset schema JSON; defaults to the fixture layout.
    #[arg(long, global = true)]
    pub schema: Option<PathBuf>,
    /// Spread table CSV (`pair,beta`, fractions); bundled defaults when omitted.
    #[arg(long, global = true)]
    pub spreads: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a dataset and report its adjusted moments.
    Ingest,
    /// Solve one portfolio.
    Solve(SolveArgs),
    /// Trace an efficient frontier over a grid of return targets.
    Frontier(SweepArgs),
    /// Run one of the preset experiments.
    Experiment {
        /// approach, hedging, margin, overlay_limit or cardinality
        name: String,
        #[command(flatten)]
        sweep: SweepArgs,
    },
}

#[derive(Debug, Args, Default)]
pub struct SpecArgs {
    /// JSON file with problem parameters in model units.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Total overlay limit, percent.
    #[arg(long = "Vu")]
    pub vu: Option<f64>,
    /// Maximum number of active forward contracts.
    #[arg(long = "G")]
    pub g: Option<usize>,
    /// Margin requirement, percent of gross forward exposure.
    #[arg(long = "M")]
    pub m: Option<f64>,
    #[arg(long)]
    pub policy: Option<Policy>,
    #[arg(long)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Target return, percent per month.
    #[arg(long, default_value_t = 1.0)]
    pub mu: f64,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Write the branch-and-bound log to `trace.log` in the output directory.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Return grid `LO:HI:STEP`, percent per month.
    #[arg(long, default_value = "0.5:1.8:0.01")]
    pub mu: String,
    #[command(flatten)]
    pub spec: SpecArgs,
    /// Worker threads; all cores by default.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// Parses `LO:HI:STEP` in percent into a grid in decimals.
pub fn parse_grid(text: &str) -> Result<MuGrid> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::config("mu", format!("expected LO:HI:STEP, got '{text}'")));
    }
    let mut v = [0.0; 3];
    for (slot, p) in v.iter_mut().zip(&parts) {
        *slot = p.trim().parse::<f64>().map_err(|_| Error::config("mu", format!("'{p}' is not a number")))? / 100.0;
    }
    MuGrid::new(v[0], v[1], v[2])
}

/// Moments and spreads for a run.
pub struct Inputs {
    pub data: MarketDataSet,
    pub moments: AdjustedMoments,
    pub spreads: Vec<f64>,
}

pub fn load_inputs(args: &InputArgs) -> Result<Inputs> {
    let data = match &args.data {
        None => fixture::fixture_dataset()?,
        Some(path) => {
            let schema = match &args.schema {
                Some(s) => DatasetSchema::from_json_file(s)?,
                None => fixture::fixture_schema(),
            };
            load_dataset(path, &schema)?
        }
    };
    let moments = estimate_moments(&adjust_series(&data)?, &data.expected_rates)?;
    let spreads = match &args.spreads {
        None if args.data.is_none() => fixture::default_spreads()?,
        None => vec![0.0; pair_names(&moments).len()],
        Some(path) => {
            let currencies: Vec<String> = data.countries.iter().map(|c| c.currency.clone()).collect();
            load_spread_table(path, &currencies).map_err(|e| match e {
                Error::NotFound(p) => Error::config("spreads", format!("spread table not found: {}", p.display())),
                other => other,
            })?
        }
    };
    Ok(Inputs { data, moments, spreads })
}

/// Defaults, then the spec file, then inline flags.
pub fn effective_spec(num_countries: usize, spreads: Vec<f64>, args: &SpecArgs) -> Result<ProblemSpec> {
    let mut spec = ProblemSpec::defaults(num_countries, spreads);
    if let Some(path) = &args.spec {
        spec.apply(&SpecOverrides::from_json_file(path)?)?;
    }
    let flags = SpecOverrides {
        v_u: args.vu.map(|v| v / 100.0),
        g: args.g,
        margin: args.m.map(|v| v / 100.0),
        policy: args.policy,
        mode: args.mode,
        ..SpecOverrides::default()
    };
    spec.apply(&flags)?;
    spec.validate(num_countries)?;
    Ok(spec)
}

/// Contents of `solution.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionReport {
    pub status: MiqpStatus,
    pub spec: ProblemSpec,
    pub countries: Vec<String>,
    pub asset_classes: Vec<String>,
    pub contracts: Vec<String>,
    pub objective: Option<f64>,
    pub bound: Option<f64>,
    pub nodes_explored: usize,
    pub qp_solves: usize,
    pub wall_time: f64,
    /// Raw optimiser variables by name.
    pub variables: Vec<(String, f64)>,
    pub solution: Option<DecodedSolution>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

pub fn summary_text(r: &SolutionReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "status: {}", r.status.as_str());
    let _ = writeln!(s, "target return: {:.4}% per month", r.spec.mu * 100.0);
    let _ = writeln!(s, "nodes: {}, QP solves: {}, time: {:.3}s", r.nodes_explored, r.qp_solves, r.wall_time);
    let Some(d) = &r.solution else {
        return s;
    };
    let _ = writeln!(s, "volatility: {:.6}% per month", d.volatility * 100.0);
    let _ = writeln!(s, "achieved return: {:.6}% (gross {:.6}%)", d.achieved_return * 100.0, d.gross_return * 100.0);
    let _ = writeln!(s, "\n{:<8}{:>10}{:>10}{:>10}", "country", "assets", "overlay", "currency");
    for (j, c) in r.countries.iter().enumerate() {
        let _ = writeln!(
            s,
            "{:<8}{:>9.3}%{:>9.3}%{:>9.3}%",
            c,
            d.asset_exposure[j] * 100.0,
            d.overlay[j] * 100.0,
            d.currency_exposure[j] * 100.0
        );
    }
    let _ = writeln!(s);
    for (i, class) in r.asset_classes.iter().enumerate() {
        let _ = writeln!(s, "{class} total: {:.3}%", d.class_totals[i] * 100.0);
    }
    let _ = writeln!(s, "cash: {:.3}%", d.cash * 100.0);
    let _ = writeln!(s, "total overlay: {:.3}%", d.total_overlay * 100.0);
    let _ = writeln!(s, "active forwards: {}", d.active_count());
    for (k, name) in r.contracts.iter().enumerate() {
        if d.active[k] {
            let _ = writeln!(s, "  {name}: {:+.4}%", d.q[k] * 100.0);
        }
    }
    let _ = writeln!(s, "transaction cost: {:.6}%", d.cost.total * 100.0);
    s
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn create_out(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn trace_log(trace: &[TraceEntry]) -> String {
    let mut s = String::from("node\tdepth\tbound\tincumbent\n");
    for t in trace {
        let inc = t.incumbent.map_or("-".to_string(), |v| format!("{v:.12e}"));
        let _ = writeln!(s, "{}\t{}\t{:.12e}\t{}", t.node, t.depth, t.bound, inc);
    }
    s
}

fn pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        if j == 0 {
            return Err(Error::config("jobs", "must be at least 1"));
        }
        b = b.num_threads(j);
    }
    b.build().map_err(|e| Error::config("jobs", e.to_string()))
}

fn cmd_ingest(inputs: &Inputs, out: &Path) -> Result<i32> {
    let m = &inputs.moments;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{} countries, {} asset classes, {} months",
        m.num_countries(),
        m.num_classes(),
        m.num_observations
    );
    let _ = writeln!(s, "{:<22}{:>12}{:>12}", "series", "mean %", "vol %");
    for (i, label) in m.labels.iter().enumerate() {
        let _ = writeln!(s, "{:<22}{:>12.4}{:>12.4}", label, m.r[i] * 100.0, m.omega[(i, i)].sqrt() * 100.0);
    }
    for (c, r) in inputs.data.countries.iter().zip(&m.expected_rates) {
        let _ = writeln!(s, "expected rate {}: {:.4}%", c.code, r * 100.0);
    }
    if m.repair.changed {
        let _ = writeln!(s, "covariance repaired: min eigenvalue {:.3e}", m.repair.min_eigenvalue);
    }
    print!("{s}");
    create_out(out)?;
    write_file(&out.join("moments.json"), &serde_json::to_string_pretty(m)?)?;
    Ok(EXIT_OK)
}

fn cmd_solve(inputs: Inputs, args: &SolveArgs, out: &Path) -> Result<i32> {
    let mut spec = effective_spec(inputs.moments.num_countries(), inputs.spreads, &args.spec)?;
    spec.mu = args.mu / 100.0;
    let opts = MiqpOptions { trace: args.trace, ..MiqpOptions::default() };
    let (p, sol) = solve_spec(&inputs.moments, &spec, &opts)?;
    let m = &inputs.moments;
    let countries: Vec<String> = m.countries.iter().map(|c| c.code.clone()).collect();
    let variables = match &sol.best {
        Some(b) if sol.status == MiqpStatus::Optimal => {
            p.var_map.names(&m.asset_classes, &countries).into_iter().zip(b.x.iter().copied()).collect()
        }
        _ => Vec::new(),
    };
    let report = SolutionReport {
        status: sol.status,
        spec,
        countries,
        asset_classes: m.asset_classes.clone(),
        contracts: pair_names(m),
        objective: finite(sol.objective),
        bound: finite(sol.bound),
        nodes_explored: sol.nodes_explored,
        qp_solves: sol.qp_solves,
        wall_time: sol.wall_time,
        variables,
        solution: sol.decoded.filter(|_| sol.status == MiqpStatus::Optimal),
    };
    create_out(out)?;
    write_file(&out.join("solution.json"), &serde_json::to_string_pretty(&report)?)?;
    let summary = summary_text(&report);
    write_file(&out.join("summary.txt"), &summary)?;
    if args.trace {
        write_file(&out.join("trace.log"), &trace_log(&sol.trace))?;
    }
    print!("{summary}");
    Ok(match sol.status {
        MiqpStatus::Optimal => EXIT_OK,
        MiqpStatus::Infeasible => {
            eprintln!("no portfolio meets the constraints at {:.4}% per month", args.mu);
            EXIT_INFEASIBLE
        }
        other => {
            eprintln!("solver stopped without a certified optimum: {}", other.as_str());
            EXIT_ERROR
        }
    })
}

fn cmd_frontier(inputs: Inputs, args: &SweepArgs, out: &Path) -> Result<i32> {
    let grid = parse_grid(&args.mu)?;
    let spec = effective_spec(inputs.moments.num_countries(), inputs.spreads, &args.spec)?;
    let opts = MiqpOptions::default();
    let f = pool(args.jobs)?.install(|| sweep(&inputs.moments, &spec, &grid, &opts))?;
    write_frontier(out, "frontier", &f, &opts.tol)?;
    let optimal = f.points.iter().filter(|p| p.is_optimal()).count();
    println!("{} targets, {} optimal, {:.2}s; written to {}", f.points.len(), optimal, f.wall_time, out.display());
    Ok(EXIT_OK)
}

fn cmd_experiment(inputs: Inputs, name: &str, args: &SweepArgs, out: &Path) -> Result<i32> {
    let experiment: Experiment = name.parse()?;
    let grid = parse_grid(&args.mu)?;
    let spec = effective_spec(inputs.moments.num_countries(), inputs.spreads, &args.spec)?;
    let opts = MiqpOptions::default();
    let r = pool(args.jobs)?.install(|| run_experiment(experiment, &inputs.moments, &spec, &grid, &opts))?;
    let dir = out.join(experiment.as_str());
    write_experiment(&dir, &r, &opts.tol)?;
    for cell in &r.cells {
        let optimal = cell.frontier.points.iter().filter(|p| p.is_optimal()).count();
        println!("{:<24}{:>5} / {} optimal", cell.label, optimal, cell.frontier.points.len());
    }
    println!("{:.2}s; written to {}", r.wall_time, dir.display());
    Ok(EXIT_OK)
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    let result = (|| {
        if let Command::Experiment { name, .. } = &cli.command {
            // fail on a bad preset name before any data is read
            name.parse::<Experiment>()?;
        }
        let inputs = load_inputs(&cli.input)?;
        let out = cli.input.out.as_path();
        match &cli.command {
            Command::Ingest => cmd_ingest(&inputs, out),
            Command::Solve(a) => cmd_solve(inputs, a, out),
            Command::Frontier(a) => cmd_frontier(inputs, a, out),
            Command::Experiment { name, sweep } => cmd_experiment(inputs, name, sweep, out),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_flag_is_percent() {
        let g = parse_grid("0.5:1.8:0.01").unwrap();
        assert_eq!(g.len(), 131);
        assert_eq!(g.points()[0], 0.005);
        assert_eq!(parse_grid("1.2:1.2:0.01").unwrap().len(), 1);
        assert!(parse_grid("1.2:1.0").is_err());
        assert!(parse_grid("a:1:0.1").is_err());
        assert!(parse_grid("1:2:0").is_err());
    }

    #[test]
    fn flags_override_spec_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("spec.json");
        std::fs::write(&path, r#"{"M": 0.3, "G": 2, "V_u": 0.4}"#).unwrap();
        let args = SpecArgs { spec: Some(path), m: Some(5.0), ..SpecArgs::default() };
        let s = effective_spec(4, vec![0.0; 6], &args).unwrap();
        assert!((s.margin - 0.05).abs() < 1e-15);
        assert_eq!(s.g, 2);
        assert!((s.v_u - 0.4).abs() < 1e-15);
    }

    #[test]
    fn invalid_override_names_field() {
        let args = SpecArgs { g: Some(9), ..SpecArgs::default() };
        let err = effective_spec(4, vec![0.0; 6], &args).unwrap_err().to_string();
        assert!(err.contains("'G'"), "{err}");
    }
}
