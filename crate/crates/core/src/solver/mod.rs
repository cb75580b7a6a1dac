//! Exact solvers for the mixed-binary convex QPs produced by
//! [`crate::problem`]: a primal active-set QP method, best-first
//! branch-and-bound on top of it, and an exhaustive enumeration oracle.

mod bnb;
mod qp;

use serde::{Deserialize, Serialize};

pub use bnb::{
    brute_force, solve_miqp, solve_miqp_with, MiqpOptions, MiqpSolution, MiqpStatus, TraceEntry, MAX_BINARIES,
    MAX_BRUTE_FORCE_BINARIES,
};
pub use qp::{solve_qp, solve_qp_with, QpProblem, QpSolution, QpStatus};

/// Every numerical threshold used by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Maximum violation of any constraint row or bound at a returned point.
    pub feasibility: f64,
    /// Maximum KKT residual of a point declared optimal.
    pub optimality: f64,
    /// Distance from 0/1 under which a relaxed binary counts as integral.
    pub integrality: f64,
    /// Most negative inequality multiplier accepted at an optimum.
    pub dual: f64,
    /// Reduced-Hessian eigenvalues below this (after objective scaling) are
    /// treated as zero curvature.
    pub pivot: f64,
    /// Nodes whose bound is within this of the incumbent are pruned.
    pub prune: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { feasibility: 1e-8, optimality: 1e-7, integrality: 1e-6, dual: 1e-9, pivot: 1e-12, prune: 1e-12 }
    }
}
