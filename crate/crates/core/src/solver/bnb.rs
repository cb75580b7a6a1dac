//! Best-first branch-and-bound over the binary variables of a
//! [`MixedBinaryQP`], plus the exhaustive enumeration used as its oracle.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::qp::{solve_qp_with, QpProblem, QpSolution, QpStatus};
use super::Tolerances;
use crate::error::{Error, Result};
use crate::problem::{DecodedSolution, MixedBinaryQP};

pub const MAX_BINARIES: usize = 24;
pub const MAX_BRUTE_FORCE_BINARIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiqpOptions {
    pub tol: Tolerances,
    pub node_limit: usize,
    /// Record one trace entry per explored node.
    pub trace: bool,
}

impl Default for MiqpOptions {
    fn default() -> Self {
        MiqpOptions { tol: Tolerances::default(), node_limit: 1_000_000, trace: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MiqpStatus {
    Optimal,
    Infeasible,
    NodeLimit,
    NumericalFailure,
}

impl MiqpStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            MiqpStatus::Optimal => "optimal",
            MiqpStatus::Infeasible => "infeasible",
            MiqpStatus::NodeLimit => "node_limit",
            MiqpStatus::NumericalFailure => "numerical_failure",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiqpSolution {
    pub status: MiqpStatus,
    /// Best integral point found (QP solve with all binaries fixed).
    pub best: Option<QpSolution>,
    pub binaries: Vec<bool>,
    /// `+∞` without an incumbent.
    pub objective: f64,
    /// Lower bound on the optimum at exit.
    pub bound: f64,
    pub root_bound: f64,
    pub gap: f64,
    pub nodes_explored: usize,
    pub qp_solves: usize,
    /// Node QPs that ended in numerical failure and were discarded.
    pub failed_nodes: usize,
    pub wall_time: f64,
    pub decoded: Option<DecodedSolution>,
    pub trace: Vec<TraceEntry>,
}

impl MiqpSolution {
    fn empty(status: MiqpStatus) -> Self {
        MiqpSolution {
            status,
            best: None,
            binaries: Vec::new(),
            objective: f64::INFINITY,
            bound: f64::INFINITY,
            root_bound: f64::INFINITY,
            gap: f64::INFINITY,
            nodes_explored: 0,
            qp_solves: 0,
            failed_nodes: 0,
            wall_time: 0.0,
            decoded: None,
            trace: Vec::new(),
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == MiqpStatus::Optimal
    }
}

pub fn solve_miqp(problem: &MixedBinaryQP) -> Result<MiqpSolution> {
    solve_miqp_with(problem, &MiqpOptions::default())
}

pub fn solve_miqp_with(problem: &MixedBinaryQP, opts: &MiqpOptions) -> Result<MiqpSolution> {
    if problem.binary_index.len() > MAX_BINARIES {
        return Err(Error::Contract(format!(
            "{} binaries exceed the supported maximum of {MAX_BINARIES}",
            problem.binary_index.len()
        )));
    }
    let start = Instant::now();
    let mut sol = branch_and_bound(&problem.qp, &problem.binary_index, opts)?;
    sol.wall_time = start.elapsed().as_secs_f64();
    attach_decoded(problem, &mut sol);
    Ok(sol)
}

/// Solves the QP for every binary assignment and keeps the best; ties go to
/// the assignment with the smallest bit pattern.
pub fn brute_force(problem: &MixedBinaryQP, tol: &Tolerances) -> Result<MiqpSolution> {
    let bins = &problem.binary_index;
    if bins.len() > MAX_BRUTE_FORCE_BINARIES {
        return Err(Error::Contract(format!(
            "{} binaries exceed the enumeration limit of {MAX_BRUTE_FORCE_BINARIES}",
            bins.len()
        )));
    }
    let start = Instant::now();
    let leaves = 1usize << bins.len();
    let results: Vec<(usize, QpSolution)> = (0..leaves)
        .into_par_iter()
        .map(|mask| {
            let assign: Vec<bool> = (0..bins.len()).map(|b| mask >> b & 1 == 1).collect();
            let qp = fix_all(&problem.qp, bins, &assign);
            solve_qp_with(&qp, tol).map(|s| (mask, s))
        })
        .collect::<Result<_>>()?;

    let mut sol = MiqpSolution::empty(MiqpStatus::Infeasible);
    sol.qp_solves = leaves;
    sol.nodes_explored = leaves;
    let mut best: Option<(usize, QpSolution)> = None;
    for (mask, s) in results {
        match s.status {
            QpStatus::Optimal => {
                if best.as_ref().map_or(true, |(_, b)| s.objective < b.objective) {
                    best = Some((mask, s));
                }
            }
            QpStatus::NumericalFailure => sol.failed_nodes += 1,
            QpStatus::Infeasible => {}
        }
    }
    if let Some((mask, s)) = best {
        sol.status = if sol.failed_nodes > 0 { MiqpStatus::NumericalFailure } else { MiqpStatus::Optimal };
        sol.binaries = (0..bins.len()).map(|b| mask >> b & 1 == 1).collect();
        sol.objective = s.objective;
        sol.bound = s.objective;
        sol.gap = 0.0;
        sol.best = Some(s);
    } else if sol.failed_nodes > 0 {
        sol.status = MiqpStatus::NumericalFailure;
    }
    sol.wall_time = start.elapsed().as_secs_f64();
    attach_decoded(problem, &mut sol);
    Ok(sol)
}

fn attach_decoded(problem: &MixedBinaryQP, sol: &mut MiqpSolution) {
    if let Some(best) = &sol.best {
        sol.decoded = Some(problem.decode(&best.x));
    }
}

fn fix_all(qp: &QpProblem, bins: &[usize], assign: &[bool]) -> QpProblem {
    let mut out = qp.clone();
    for (&j, &v) in bins.iter().zip(assign) {
        let v = if v { 1.0 } else { 0.0 };
        out.lower[j] = v;
        out.upper[j] = v;
    }
    out
}

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    fixes: Vec<Option<bool>>,
    x: DVector<f64>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap: invert so the smallest bound, then the
    // oldest node, comes out first
    fn cmp(&self, other: &Self) -> Ordering {
        other.bound.total_cmp(&self.bound).then_with(|| other.id.cmp(&self.id))
    }
}

fn relaxation(qp: &QpProblem, bins: &[usize], fixes: &[Option<bool>]) -> QpProblem {
    let mut out = qp.clone();
    for (&j, f) in bins.iter().zip(fixes) {
        let (lo, hi) = match f {
            Some(true) => (1.0, 1.0),
            Some(false) => (0.0, 0.0),
            None => (qp.lower[j].max(0.0), qp.upper[j].min(1.0)),
        };
        out.lower[j] = lo;
        out.upper[j] = hi;
    }
    out
}

/// Most fractional binary, lowest position on ties.
fn branching_candidate(x: &DVector<f64>, bins: &[usize], fixes: &[Option<bool>], tol: f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (pos, &j) in bins.iter().enumerate() {
        if fixes[pos].is_some() {
            continue;
        }
        let frac = x[j].min(1.0 - x[j]);
        if frac > tol && best.map_or(true, |(_, f)| frac > f) {
            best = Some((pos, frac));
        }
    }
    best.map(|(pos, _)| pos)
}

fn branch_and_bound(qp: &QpProblem, bins: &[usize], opts: &MiqpOptions) -> Result<MiqpSolution> {
    let tol = &opts.tol;
    let mut sol = MiqpSolution::empty(MiqpStatus::Infeasible);
    let root_fixes = vec![None; bins.len()];
    let root = solve_qp_with(&relaxation(qp, bins, &root_fixes), tol)?;
    sol.qp_solves = 1;
    match root.status {
        QpStatus::Optimal => {}
        QpStatus::Infeasible => {
            sol.nodes_explored = 1;
            return Ok(sol);
        }
        QpStatus::NumericalFailure => {
            sol.nodes_explored = 1;
            sol.failed_nodes = 1;
            sol.status = MiqpStatus::NumericalFailure;
            return Ok(sol);
        }
    }
    sol.root_bound = root.objective;

    let mut heap = BinaryHeap::new();
    let mut next_id = 1;
    heap.push(Node { id: 0, depth: 0, bound: root.objective, fixes: root_fixes, x: root.x });
    let mut incumbent: Option<QpSolution> = None;
    let mut incumbent_bits: Vec<bool> = Vec::new();
    let mut hit_limit = false;

    while let Some(node) = heap.pop() {
        let best_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
        if node.bound >= best_obj - tol.prune {
            // best-first: every remaining node is at least as bad
            heap.clear();
            break;
        }
        if sol.nodes_explored >= opts.node_limit {
            hit_limit = true;
            heap.push(node);
            break;
        }
        sol.nodes_explored += 1;
        if opts.trace {
            sol.trace.push(TraceEntry {
                node: node.id,
                depth: node.depth,
                bound: node.bound,
                incumbent: incumbent.as_ref().map(|s| s.objective),
            });
        }

        match branching_candidate(&node.x, bins, &node.fixes, tol.integrality) {
            None => {
                // integral relaxation: re-solve with the binaries pinned exactly
                let bits: Vec<bool> = node.fixes.iter().zip(bins).map(|(f, &j)| f.unwrap_or(node.x[j] > 0.5)).collect();
                let leaf = solve_qp_with(&fix_all(qp, bins, &bits), tol)?;
                sol.qp_solves += 1;
                match leaf.status {
                    QpStatus::Optimal if leaf.objective < best_obj => {
                        incumbent = Some(leaf);
                        incumbent_bits = bits;
                    }
                    QpStatus::NumericalFailure => sol.failed_nodes += 1,
                    _ => {}
                }
            }
            Some(pos) => {
                for value in [false, true] {
                    let mut fixes = node.fixes.clone();
                    fixes[pos] = Some(value);
                    let child = solve_qp_with(&relaxation(qp, bins, &fixes), tol)?;
                    sol.qp_solves += 1;
                    match child.status {
                        QpStatus::Optimal => {
                            let best_obj = incumbent.as_ref().map_or(f64::INFINITY, |s| s.objective);
                            // a child cannot beat its parent's relaxation
                            let bound = child.objective.max(node.bound);
                            if bound < best_obj - tol.prune {
                                heap.push(Node { id: next_id, depth: node.depth + 1, bound, fixes, x: child.x });
                                next_id += 1;
                            }
                        }
                        QpStatus::NumericalFailure => sol.failed_nodes += 1,
                        QpStatus::Infeasible => {}
                    }
                }
            }
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::INFINITY, f64::min);
    if let Some(best) = incumbent {
        sol.objective = best.objective;
        sol.bound = open_bound.min(best.objective);
        sol.gap = (sol.objective - sol.bound).max(0.0);
        sol.binaries = incumbent_bits;
        sol.best = Some(best);
        sol.status = if hit_limit {
            MiqpStatus::NodeLimit
        } else if sol.failed_nodes > 0 {
            MiqpStatus::NumericalFailure
        } else {
            MiqpStatus::Optimal
        };
    } else {
        sol.bound = open_bound;
        sol.status = if hit_limit {
            MiqpStatus::NodeLimit
        } else if sol.failed_nodes > 0 {
            MiqpStatus::NumericalFailure
        } else {
            MiqpStatus::Infeasible
        };
    }
    Ok(sol)
}
