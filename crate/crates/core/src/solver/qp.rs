//! Primal active-set method for convex quadratic programs
//!
//! ```text
//! minimise    xᵀQx + cᵀx
//! subject to  A_eq x = b_eq,  A_in x ≤ b_in,  lower ≤ x ≤ upper
//! ```
//!
//! `Q` only needs to be positive semidefinite. Each iteration works in the
//! null space of the working set; directions of zero reduced curvature are
//! followed as rays until a constraint blocks, all other directions take a
//! Newton step. Bounds are handled by fixing variables rather than as rows.
//!
//! A feasible start comes from a phase-1 LP over artificial variables solved
//! by the same routine. Before either phase, fixed variables are substituted
//! out and singleton rows are turned into bounds.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::Tolerances;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub quadratic: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_ineq: DMatrix<f64>,
    pub b_ineq: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl QpProblem {
    /// Unconstrained problem in `n` variables with zero objective.
    pub fn new(n: usize) -> Self {
        QpProblem {
            quadratic: DMatrix::zeros(n, n),
            linear: DVector::zeros(n),
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_ineq: DMatrix::zeros(0, n),
            b_ineq: DVector::zeros(0),
            lower: DVector::from_element(n, f64::NEG_INFINITY),
            upper: DVector::from_element(n, f64::INFINITY),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.quadratic * x)) + self.linear.dot(x)
    }

    pub fn push_eq(&mut self, row: &[f64], rhs: f64) {
        self.a_eq = append_row(&self.a_eq, row);
        self.b_eq = self.b_eq.push(rhs);
    }

    pub fn push_ineq(&mut self, row: &[f64], rhs: f64) {
        self.a_ineq = append_row(&self.a_ineq, row);
        self.b_ineq = self.b_ineq.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let shape_ok = self.quadratic.shape() == (n, n)
            && self.a_eq.ncols() == n
            && self.a_ineq.ncols() == n
            && self.a_eq.nrows() == self.b_eq.len()
            && self.a_ineq.nrows() == self.b_ineq.len()
            && self.lower.len() == n
            && self.upper.len() == n;
        if !shape_ok {
            return Err(Error::Contract("QP dimensions are inconsistent".into()));
        }
        let finite = |m: &DMatrix<f64>| m.iter().all(|v| v.is_finite());
        if !finite(&self.quadratic)
            || !self.linear.iter().all(|v| v.is_finite())
            || !finite(&self.a_eq)
            || !finite(&self.a_ineq)
            || !self.b_eq.iter().all(|v| v.is_finite())
            || !self.b_ineq.iter().all(|v| v.is_finite())
        {
            return Err(Error::Contract("QP data must be finite".into()));
        }
        if self.lower.iter().chain(self.upper.iter()).any(|v| v.is_nan()) {
            return Err(Error::Contract("QP bounds must not be NaN".into()));
        }
        let scale = self.quadratic.amax().max(1.0);
        for i in 0..n {
            for j in (i + 1)..n {
                if (self.quadratic[(i, j)] - self.quadratic[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Contract(format!("quadratic term is not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any row or bound at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut worst: f64 = 0.0;
        if self.a_eq.nrows() > 0 {
            worst = worst.max((&self.a_eq * x - &self.b_eq).amax());
        }
        if self.a_ineq.nrows() > 0 {
            let r = &self.a_ineq * x - &self.b_ineq;
            worst = worst.max(r.max().max(0.0));
        }
        for j in 0..x.len() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }
}

fn append_row(m: &DMatrix<f64>, row: &[f64]) -> DMatrix<f64> {
    assert_eq!(row.len(), m.ncols(), "row length must match variable count");
    let r = m.nrows();
    let mut out = m.clone().insert_row(r, 0.0);
    for (j, v) in row.iter().enumerate() {
        out[(r, j)] = *v;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// `xᵀQx + cᵀx`; `+∞` unless a point was found.
    pub objective: f64,
    pub status: QpStatus,
    /// Inequality rows tight at `x` within the feasibility tolerance.
    pub active_set: Vec<usize>,
    pub eq_multipliers: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub kkt_residual: f64,
    pub primal_residual: f64,
    pub iterations: usize,
    pub message: Option<String>,
}

impl QpSolution {
    fn failed(p: &QpProblem, status: QpStatus, iterations: usize, message: String) -> Self {
        QpSolution {
            x: DVector::zeros(p.num_vars()),
            objective: f64::INFINITY,
            status,
            active_set: Vec::new(),
            eq_multipliers: DVector::zeros(p.a_eq.nrows()),
            ineq_multipliers: DVector::zeros(p.a_ineq.nrows()),
            kkt_residual: f64::INFINITY,
            primal_residual: f64::INFINITY,
            iterations,
            message: Some(message),
        }
    }
}

pub fn solve_qp(p: &QpProblem) -> Result<QpSolution> {
    solve_qp_with(p, &Tolerances::default())
}

pub fn solve_qp_with(p: &QpProblem, tol: &Tolerances) -> Result<QpSolution> {
    p.validate()?;
    let red = match presolve(p, tol) {
        Ok(r) => r,
        Err(reason) => return Ok(QpSolution::failed(p, QpStatus::Infeasible, 0, reason)),
    };
    let n = red.free.len();

    // objective scaling keeps tolerances meaningful for tiny variances
    let scale = red.h.amax().max(red.g.amax());
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let h = &red.h / scale;
    let g = &red.g / scale;

    let x0 = DVector::from_iterator(n, (0..n).map(|j| 0.0_f64.clamp(red.lb[j], red.ub[j])));
    let (x_start, phase1_iters) = match phase_one(&red, x0, tol) {
        PhaseOne::Feasible(x, it) => (x, it),
        PhaseOne::Infeasible(msg, it) => return Ok(QpSolution::failed(p, QpStatus::Infeasible, it, msg)),
        PhaseOne::Failed(msg, it) => return Ok(QpSolution::failed(p, QpStatus::NumericalFailure, it, msg)),
    };
    for (a, b) in &red.dependent_eq {
        let r = (a.transpose() * &x_start)[(0, 0)] - b;
        if r.abs() > tol.feasibility {
            return Ok(QpSolution::failed(
                p,
                QpStatus::Infeasible,
                phase1_iters,
                format!("linearly dependent equality rows are inconsistent (residual {r:e})"),
            ));
        }
    }

    let core = Core { h: Some(&h), g: &g, a_eq: &red.a_eq, a_in: &red.a_in, b_in: &red.b_in, lb: &red.lb, ub: &red.ub };
    let settings = Settings {
        max_iter: 50 * n.max(1),
        pivot: tol.pivot,
        drop_tol: (0.1 * tol.dual / scale).min(1e-10),
        stop_below: None,
    };
    let out = match core.run(x_start, &settings) {
        Ok(o) => o,
        Err(e) => {
            return Ok(QpSolution::failed(
                p,
                QpStatus::NumericalFailure,
                phase1_iters + settings.max_iter,
                e.to_string(),
            ))
        }
    };
    let iterations = phase1_iters + out.iterations;
    Ok(finish(p, &red, out, scale, iterations, tol))
}

/// Reduced problem after substituting fixed variables and converting
/// singleton rows to bounds. Row and column maps point back to the original.
struct Reduced {
    free: Vec<usize>,
    x_fixed: DVector<f64>,
    is_fixed: Vec<bool>,
    lb: DVector<f64>,
    ub: DVector<f64>,
    /// Singleton inequality row (and its coefficient) that produced a bound.
    lb_src: Vec<Option<(usize, f64)>>,
    ub_src: Vec<Option<(usize, f64)>>,
    eq_rows: Vec<usize>,
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    dependent_eq: Vec<(DVector<f64>, f64)>,
    in_rows: Vec<usize>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    h: DMatrix<f64>,
    g: DVector<f64>,
}

fn presolve(p: &QpProblem, tol: &Tolerances) -> std::result::Result<Reduced, String> {
    let n = p.num_vars();
    let ftol = tol.feasibility;
    let mut lb = p.lower.clone();
    let mut ub = p.upper.clone();
    let mut lb_src: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut ub_src: Vec<Option<(usize, f64)>> = vec![None; n];
    let mut fixed: Vec<Option<f64>> = vec![None; n];
    let mut eq_alive = vec![true; p.a_eq.nrows()];
    let mut in_alive = vec![true; p.a_ineq.nrows()];

    // (nonzeros on unfixed columns, last such column and its coefficient, reduced rhs)
    let scan = |a: &DMatrix<f64>, b: &DVector<f64>, i: usize, fixed: &[Option<f64>]| {
        let mut count = 0;
        let mut last = (0usize, 0.0);
        let mut rhs = b[i];
        for j in 0..n {
            let v = a[(i, j)];
            if v == 0.0 {
                continue;
            }
            match fixed[j] {
                Some(val) => rhs -= v * val,
                None => {
                    count += 1;
                    last = (j, v);
                }
            }
        }
        (count, last, rhs)
    };

    loop {
        let mut changed = false;
        for j in 0..n {
            if fixed[j].is_some() {
                continue;
            }
            if lb[j] > ub[j] + ftol {
                return Err(format!("bounds of variable {j} cross: [{}, {}]", lb[j], ub[j]));
            }
            if lb[j].is_finite() && ub[j].is_finite() && ub[j] - lb[j] <= 1e-13 * (1.0 + lb[j].abs()) {
                fixed[j] = Some(if lb[j] > ub[j] { 0.5 * (lb[j] + ub[j]) } else { lb[j] });
                changed = true;
            }
        }
        for i in 0..eq_alive.len() {
            if !eq_alive[i] {
                continue;
            }
            let (count, (j, a), rhs) = scan(&p.a_eq, &p.b_eq, i, &fixed);
            match count {
                0 => {
                    if rhs.abs() > ftol {
                        return Err(format!("equality row {i} violated by {rhs:e} after fixing variables"));
                    }
                    eq_alive[i] = false;
                }
                1 => {
                    let val = rhs / a;
                    if val < lb[j] - ftol || val > ub[j] + ftol {
                        return Err(format!("equality row {i} forces variable {j} to {val} outside its bounds"));
                    }
                    fixed[j] = Some(val.clamp(lb[j].min(ub[j]), ub[j].max(lb[j])));
                    eq_alive[i] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        for i in 0..in_alive.len() {
            if !in_alive[i] {
                continue;
            }
            let (count, (j, a), rhs) = scan(&p.a_ineq, &p.b_ineq, i, &fixed);
            match count {
                0 => {
                    if rhs < -ftol {
                        return Err(format!("inequality row {i} violated by {:e} after fixing variables", -rhs));
                    }
                    in_alive[i] = false;
                }
                1 => {
                    let bound = rhs / a;
                    if a > 0.0 {
                        if bound < ub[j] {
                            ub[j] = bound;
                            ub_src[j] = Some((i, a));
                        }
                    } else if bound > lb[j] {
                        lb[j] = bound;
                        lb_src[j] = Some((i, a));
                    }
                    in_alive[i] = false;
                    changed = true;
                }
                _ => {}
            }
        }
        if !changed {
            break;
        }
    }

    let free: Vec<usize> = (0..n).filter(|&j| fixed[j].is_none()).collect();
    let nf = free.len();
    let x_fixed = DVector::from_iterator(n, fixed.iter().map(|f| f.unwrap_or(0.0)));
    let is_fixed: Vec<bool> = fixed.iter().map(Option::is_some).collect();

    let reduce_rows = |a: &DMatrix<f64>, b: &DVector<f64>, alive: &[bool]| {
        let rows: Vec<usize> = (0..alive.len()).filter(|&i| alive[i]).collect();
        let mut ar = DMatrix::zeros(rows.len(), nf);
        let mut br = DVector::zeros(rows.len());
        for (r, &i) in rows.iter().enumerate() {
            let mut rhs = b[i];
            for j in 0..n {
                if is_fixed[j] {
                    rhs -= a[(i, j)] * x_fixed[j];
                }
            }
            for (c, &j) in free.iter().enumerate() {
                ar[(r, c)] = a[(i, j)];
            }
            br[r] = rhs;
        }
        (rows, ar, br)
    };
    let (eq_all, a_eq_all, b_eq_all) = reduce_rows(&p.a_eq, &p.b_eq, &eq_alive);
    let (in_rows, a_in, b_in) = reduce_rows(&p.a_ineq, &p.b_ineq, &in_alive);

    // drop linearly dependent equality rows (modified Gram–Schmidt)
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    let mut dependent_eq = Vec::new();
    for r in 0..eq_all.len() {
        let row = a_eq_all.row(r).transpose();
        let norm = row.amax();
        let mut v = row.clone();
        for e in &basis {
            let c = e.dot(&v);
            v -= e * c;
        }
        if v.norm() > 1e-10 * norm.max(1e-300) {
            basis.push(&v / v.norm());
            keep.push(r);
        } else {
            dependent_eq.push((row, b_eq_all[r]));
        }
    }
    let eq_rows: Vec<usize> = keep.iter().map(|&r| eq_all[r]).collect();
    let a_eq = DMatrix::from_fn(keep.len(), nf, |r, c| a_eq_all[(keep[r], c)]);
    let b_eq = DVector::from_iterator(keep.len(), keep.iter().map(|&r| b_eq_all[r]));

    let h = DMatrix::from_fn(nf, nf, |a, b| 2.0 * p.quadratic[(free[a], free[b])]);
    let qx = &p.quadratic * &x_fixed;
    let g = DVector::from_iterator(nf, free.iter().map(|&j| 2.0 * qx[j] + p.linear[j]));

    let pick = |v: &DVector<f64>| DVector::from_iterator(nf, free.iter().map(|&j| v[j]));
    let pick_src = |v: &[Option<(usize, f64)>]| free.iter().map(|&j| v[j]).collect::<Vec<_>>();
    Ok(Reduced {
        lb: pick(&lb),
        ub: pick(&ub),
        lb_src: pick_src(&lb_src),
        ub_src: pick_src(&ub_src),
        free,
        x_fixed,
        is_fixed,
        eq_rows,
        a_eq,
        b_eq,
        dependent_eq,
        in_rows,
        a_in,
        b_in,
        h,
        g,
    })
}

enum PhaseOne {
    Feasible(DVector<f64>, usize),
    Infeasible(String, usize),
    Failed(String, usize),
}

/// Minimises the sum of artificial variables that absorb the residuals of
/// `x0`; a zero optimum yields a feasible point.
fn phase_one(red: &Reduced, x0: DVector<f64>, tol: &Tolerances) -> PhaseOne {
    let n = x0.len();
    let r_eq = &red.b_eq - &red.a_eq * &x0;
    let v_in = &red.a_in * &x0 - &red.b_in;
    let eq_art: Vec<usize> = (0..r_eq.len()).filter(|&i| r_eq[i] != 0.0).collect();
    let in_art: Vec<usize> = (0..v_in.len()).filter(|&i| v_in[i] > 0.0).collect();
    let n_art = eq_art.len() + in_art.len();
    if n_art == 0 {
        return PhaseOne::Feasible(x0, 0);
    }
    let n1 = n + n_art;
    let mut a_eq = red.a_eq.clone().resize_horizontally(n1, 0.0);
    let mut a_in = red.a_in.clone().resize_horizontally(n1, 0.0);
    let mut x = x0.clone().resize_vertically(n1, 0.0);
    for (k, &i) in eq_art.iter().enumerate() {
        a_eq[(i, n + k)] = r_eq[i].signum();
        x[n + k] = r_eq[i].abs();
    }
    for (k, &i) in in_art.iter().enumerate() {
        let col = n + eq_art.len() + k;
        a_in[(i, col)] = -1.0;
        x[col] = v_in[i];
    }
    let mut g = DVector::zeros(n1);
    g.rows_mut(n, n_art).fill(1.0);
    let lb = red.lb.clone().resize_vertically(n1, 0.0);
    let ub = red.ub.clone().resize_vertically(n1, f64::INFINITY);

    let core = Core { h: None, g: &g, a_eq: &a_eq, a_in: &a_in, b_in: &red.b_in, lb: &lb, ub: &ub };
    let settings = Settings { max_iter: 50 * n1, pivot: tol.pivot, drop_tol: 1e-12, stop_below: Some(0.0) };
    match core.run(x, &settings) {
        Ok(out) => {
            let residual: f64 = out.x.rows(n, n_art).sum();
            if residual > 0.1 * tol.feasibility {
                PhaseOne::Infeasible(format!("phase-1 residual {residual:e}"), out.iterations)
            } else {
                PhaseOne::Feasible(out.x.rows(0, n).into_owned(), out.iterations)
            }
        }
        Err(e) => PhaseOne::Failed(format!("phase 1: {e}"), settings.max_iter),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundState {
    Free,
    AtLower,
    AtUpper,
}

struct Core<'a> {
    /// `None` for a linear objective.
    h: Option<&'a DMatrix<f64>>,
    g: &'a DVector<f64>,
    /// Equality rows; the start point already satisfies them.
    a_eq: &'a DMatrix<f64>,
    a_in: &'a DMatrix<f64>,
    b_in: &'a DVector<f64>,
    lb: &'a DVector<f64>,
    ub: &'a DVector<f64>,
}

struct Settings {
    max_iter: usize,
    pivot: f64,
    drop_tol: f64,
    /// Stop as soon as a linear objective reaches this value.
    stop_below: Option<f64>,
}

struct CoreOutcome {
    x: DVector<f64>,
    state: Vec<BoundState>,
    lambda_eq: DVector<f64>,
    lambda_in: DVector<f64>,
    /// Bound multipliers as signed stationarity contributions.
    bound_contrib: DVector<f64>,
    iterations: usize,
}

#[derive(Debug, thiserror::Error)]
enum CoreError {
    #[error("iteration limit {0} reached")]
    IterationLimit(usize),
    #[error("objective unbounded along a feasible ray")]
    Unbounded,
    #[error("reduced Hessian has negative eigenvalue {0:e}")]
    NotConvex(f64),
    #[error("working set became rank deficient")]
    RankDeficient,
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Row(usize),
    Lower(usize),
    Upper(usize),
}

impl Core<'_> {
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match self.h {
            Some(h) => h * x + self.g,
            None => self.g.clone(),
        }
    }

    fn run(&self, mut x: DVector<f64>, s: &Settings) -> std::result::Result<CoreOutcome, CoreError> {
        let n = x.len();
        let m_eq = self.a_eq.nrows();
        let m_in = self.a_in.nrows();
        let row_norm: Vec<f64> = (0..m_in).map(|i| self.a_in.row(i).amax()).collect();
        let mut state = vec![BoundState::Free; n];
        let mut rows: Vec<usize> = Vec::new();
        let mut in_w = vec![false; m_in];
        let mut degenerate = 0usize;
        let mut bland = false;

        for iter in 1..=s.max_iter {
            if let Some(stop) = s.stop_below {
                if self.g.dot(&x) <= stop {
                    return Ok(CoreOutcome {
                        x,
                        state,
                        lambda_eq: DVector::zeros(m_eq),
                        lambda_in: DVector::zeros(m_in),
                        bound_contrib: DVector::zeros(n),
                        iterations: iter,
                    });
                }
            }
            let free: Vec<usize> = (0..n).filter(|&j| state[j] == BoundState::Free).collect();
            let nf = free.len();
            let m = m_eq + rows.len();
            if m > nf {
                return Err(CoreError::RankDeficient);
            }
            // [Mᵀ | I] = Q R; the trailing nf − m columns of Q span null(M)
            let mut aug = DMatrix::zeros(nf, m + nf);
            for r in 0..m {
                for (c, &j) in free.iter().enumerate() {
                    aug[(c, r)] = if r < m_eq { self.a_eq[(r, j)] } else { self.a_in[(rows[r - m_eq], j)] };
                }
            }
            for c in 0..nf {
                aug[(c, m + c)] = 1.0;
            }
            let qr = aug.qr();
            let qf = qr.q();
            let rf = qr.r();

            let grad = self.gradient(&x);
            let grad_f = DVector::from_iterator(nf, free.iter().map(|&j| grad[j]));
            let nz = nf - m;

            if nz > 0 {
                let z = qf.columns(m, nz).into_owned();
                let gz = z.transpose() * &grad_f;
                let hff = self.h.map(|h| DMatrix::from_fn(nf, nf, |a, b| h[(free[a], free[b])]));
                let (p_f, ray) = match &hff {
                    Some(hff) => {
                        let hz = z.transpose() * hff * &z;
                        let eig = SymmetricEigen::new(hz);
                        let min_eig = eig.eigenvalues.min();
                        if min_eig < -1e-8 {
                            return Err(CoreError::NotConvex(min_eig));
                        }
                        let coeffs = eig.eigenvectors.transpose() * &gz;
                        let mut null_d = DVector::zeros(nz);
                        let mut newton_d = DVector::zeros(nz);
                        for i in 0..nz {
                            let u = eig.eigenvectors.column(i);
                            if eig.eigenvalues[i] <= s.pivot {
                                null_d -= u * coeffs[i];
                            } else {
                                newton_d -= u * (coeffs[i] / eig.eigenvalues[i]);
                            }
                        }
                        if null_d.amax() > 1e-11 {
                            (&z * null_d, true)
                        } else {
                            (&z * newton_d, false)
                        }
                    }
                    None => (&z * (-gz), true),
                };
                let pnorm = p_f.amax();
                if pnorm > 1e-14 * (1.0 + x.amax()) {
                    let mut max_step = if ray { f64::INFINITY } else { 1.0 };
                    let mut capped = false;
                    if ray {
                        if let Some(hff) = &hff {
                            let curv = p_f.dot(&(hff * &p_f));
                            if curv > 0.0 {
                                max_step = -grad_f.dot(&p_f) / curv;
                                capped = true;
                            }
                        }
                    }
                    let (alpha, block) = self.ratio_test(&x, &p_f, &free, &in_w, &row_norm, max_step);
                    if alpha.is_infinite() {
                        return Err(CoreError::Unbounded);
                    }
                    for (c, &j) in free.iter().enumerate() {
                        x[j] = (x[j] + alpha * p_f[c]).clamp(self.lb[j], self.ub[j]);
                    }
                    if alpha <= 1e-14 {
                        degenerate += 1;
                        if degenerate > 2 * n {
                            bland = true;
                        }
                    } else {
                        degenerate = 0;
                    }
                    match block {
                        Some(Block::Row(i)) => {
                            rows.push(i);
                            in_w[i] = true;
                            continue;
                        }
                        Some(Block::Lower(j)) => {
                            x[j] = self.lb[j];
                            state[j] = BoundState::AtLower;
                            continue;
                        }
                        Some(Block::Upper(j)) => {
                            x[j] = self.ub[j];
                            state[j] = BoundState::AtUpper;
                            continue;
                        }
                        None if capped || (ray && self.h.is_none()) => continue,
                        None => {}
                    }
                }
            }

            // subspace minimiser: multipliers from Mᵀλ = −∇f on the free columns
            let grad = self.gradient(&x);
            let grad_f = DVector::from_iterator(nf, free.iter().map(|&j| grad[j]));
            let lambda = if m > 0 {
                let q1 = qf.columns(0, m);
                let r1 = rf.view((0, 0), (m, m)).upper_triangle();
                let rhs = -(q1.transpose() * &grad_f);
                r1.solve_upper_triangular(&rhs).ok_or(CoreError::RankDeficient)?
            } else {
                DVector::zeros(0)
            };

            let mut bound_contrib = DVector::zeros(n);
            // (unified index, multiplier); rows 0..m_in then bounds m_in + j
            let mut worst: Option<(usize, f64)> = None;
            let consider = |idx: usize, val: f64, worst: &mut Option<(usize, f64)>| {
                if val >= -s.drop_tol {
                    return;
                }
                let better = match worst {
                    None => true,
                    Some((widx, wval)) => {
                        if bland {
                            idx < *widx
                        } else {
                            val < *wval || (val == *wval && idx < *widx)
                        }
                    }
                };
                if better {
                    *worst = Some((idx, val));
                }
            };
            for (pos, &i) in rows.iter().enumerate() {
                consider(i, lambda[m_eq + pos], &mut worst);
            }
            for j in 0..n {
                if state[j] == BoundState::Free {
                    continue;
                }
                let mut r = grad[j];
                for k in 0..m_eq {
                    r += lambda[k] * self.a_eq[(k, j)];
                }
                for (pos, &i) in rows.iter().enumerate() {
                    r += lambda[m_eq + pos] * self.a_in[(i, j)];
                }
                bound_contrib[j] = -r;
                let nu = if state[j] == BoundState::AtUpper { -r } else { r };
                consider(m_in + j, nu, &mut worst);
            }

            match worst {
                None => {
                    let mut lambda_in = DVector::zeros(m_in);
                    for (pos, &i) in rows.iter().enumerate() {
                        lambda_in[i] = lambda[m_eq + pos];
                    }
                    return Ok(CoreOutcome {
                        x,
                        state,
                        lambda_eq: lambda.rows(0, m_eq).into_owned(),
                        lambda_in,
                        bound_contrib,
                        iterations: iter,
                    });
                }
                Some((idx, _)) if idx < m_in => {
                    rows.retain(|&i| i != idx);
                    in_w[idx] = false;
                }
                Some((idx, _)) => state[idx - m_in] = BoundState::Free,
            }
        }
        Err(CoreError::IterationLimit(s.max_iter))
    }

    /// Longest step in `[0, max_step]` along `p` keeping every inactive
    /// constraint satisfied; ties go to the lowest constraint index.
    fn ratio_test(
        &self,
        x: &DVector<f64>,
        p_f: &DVector<f64>,
        free: &[usize],
        in_w: &[bool],
        row_norm: &[f64],
        max_step: f64,
    ) -> (f64, Option<Block>) {
        let pnorm = p_f.amax();
        let mut best = max_step;
        let mut block = None;
        let tie = |b: f64| if b.is_finite() { 1e-12 * b.abs().min(1.0) } else { 0.0 };
        for i in 0..self.a_in.nrows() {
            if in_w[i] {
                continue;
            }
            let ap: f64 = free.iter().enumerate().map(|(c, &j)| self.a_in[(i, j)] * p_f[c]).sum();
            if ap > 1e-11 * pnorm * row_norm[i] {
                let slack = self.b_in[i] - self.a_in.row(i).transpose().dot(x);
                let step = slack.max(0.0) / ap;
                if step < best - tie(best) {
                    best = step;
                    block = Some(Block::Row(i));
                }
            }
        }
        let eps = 1e-11 * pnorm;
        for (c, &j) in free.iter().enumerate() {
            let pj = p_f[c];
            let (step, b) = if pj > eps && self.ub[j].is_finite() {
                ((self.ub[j] - x[j]).max(0.0) / pj, Block::Upper(j))
            } else if pj < -eps && self.lb[j].is_finite() {
                ((x[j] - self.lb[j]).max(0.0) / -pj, Block::Lower(j))
            } else {
                continue;
            };
            if step < best - tie(best) {
                best = step;
                block = Some(b);
            }
        }
        (best, block)
    }
}

/// Maps the reduced solution back and certifies it against the original
/// problem.
fn finish(
    p: &QpProblem,
    red: &Reduced,
    out: CoreOutcome,
    scale: f64,
    iterations: usize,
    tol: &Tolerances,
) -> QpSolution {
    let n = p.num_vars();
    let mut x = red.x_fixed.clone();
    for (c, &j) in red.free.iter().enumerate() {
        x[j] = out.x[c];
    }

    let mut eq_mult = DVector::zeros(p.a_eq.nrows());
    for (k, &i) in red.eq_rows.iter().enumerate() {
        eq_mult[i] = out.lambda_eq[k] * scale;
    }
    let mut in_mult = DVector::zeros(p.a_ineq.nrows());
    for (k, &i) in red.in_rows.iter().enumerate() {
        in_mult[i] = out.lambda_in[k] * scale;
    }
    // bound multipliers: attribute to the singleton row that produced the bound
    let mut bound_contrib = DVector::zeros(n);
    for (c, &j) in red.free.iter().enumerate() {
        let contrib = out.bound_contrib[c] * scale;
        let src = match out.state[c] {
            BoundState::AtUpper => red.ub_src[c],
            BoundState::AtLower => red.lb_src[c],
            BoundState::Free => None,
        };
        match src {
            Some((row, a)) => in_mult[row] += contrib.abs() / a.abs(),
            None => bound_contrib[j] = contrib,
        }
    }

    let mut stationarity = &p.quadratic * &x * 2.0 + &p.linear + bound_contrib;
    if p.a_eq.nrows() > 0 {
        stationarity += p.a_eq.transpose() * &eq_mult;
    }
    if p.a_ineq.nrows() > 0 {
        stationarity += p.a_ineq.transpose() * &in_mult;
    }
    let stat = (0..n).filter(|&j| !red.is_fixed[j]).map(|j| stationarity[j].abs()).fold(0.0, f64::max);

    let mut active_set = Vec::new();
    let mut comp: f64 = 0.0;
    let slack = &p.b_ineq - &p.a_ineq * &x;
    for i in 0..p.a_ineq.nrows() {
        if slack[i] <= tol.feasibility {
            active_set.push(i);
        }
        comp = comp.max((in_mult[i] * slack[i]).abs());
    }
    let kkt_residual = stat.max(comp);
    let primal_residual = p.max_violation(&x);
    let min_dual = in_mult.iter().copied().fold(0.0, f64::min);

    let mut status = QpStatus::Optimal;
    let mut message = None;
    if primal_residual > tol.feasibility {
        status = QpStatus::NumericalFailure;
        message = Some(format!("primal residual {primal_residual:e} exceeds tolerance"));
    } else if kkt_residual > tol.optimality {
        status = QpStatus::NumericalFailure;
        message = Some(format!("KKT residual {kkt_residual:e} exceeds tolerance"));
    } else if min_dual < -tol.dual {
        status = QpStatus::NumericalFailure;
        message = Some(format!("inequality multiplier {min_dual:e} is negative"));
    }
    QpSolution {
        objective: p.objective(&x),
        x,
        status,
        active_set,
        eq_multipliers: eq_mult,
        ineq_multipliers: in_mult,
        kkt_residual,
        primal_residual,
        iterations,
        message,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_with_lower_bound_row() {
        // min x² s.t. x ≥ 1, written as −x ≤ −1
        let mut p = QpProblem::new(1);
        p.quadratic[(0, 0)] = 1.0;
        p.push_ineq(&[-1.0], -1.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.objective, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.ineq_multipliers[0], 2.0, epsilon = 1e-10);
        assert_eq!(s.active_set, vec![0]);
    }

    #[test]
    fn simplex_minimum_norm() {
        let mut p = QpProblem::new(3);
        p.quadratic = DMatrix::identity(3, 3);
        p.push_eq(&[1.0, 1.0, 1.0], 1.0);
        p.lower.fill(0.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        for v in s.x.iter() {
            assert_relative_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
        assert_relative_eq!(s.objective, 1.0 / 3.0, epsilon = 1e-12);
        assert!(s.kkt_residual <= 1e-12);
    }

    #[test]
    fn infeasible_rows_are_reported() {
        let mut p = QpProblem::new(2);
        p.quadratic = DMatrix::identity(2, 2);
        p.push_eq(&[1.0, 1.0], 3.0);
        p.lower.fill(0.0);
        p.upper.fill(1.0);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Infeasible);
        assert!(s.objective.is_infinite());
    }

    #[test]
    fn singular_hessian_follows_zero_curvature() {
        // min (x − y)² − 0.1·x with x ≤ 1, y ≤ 0.5: zero curvature along x + y
        let mut p = QpProblem::new(2);
        p.quadratic = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        p.linear = DVector::from_vec(vec![-0.1, 0.0]);
        p.lower.fill(0.0);
        p.upper[0] = 1.0;
        p.upper[1] = 0.5;
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        // y at its cap, then x − y = 0.05 balances the linear pull
        assert_relative_eq!(s.x[0], 0.55, epsilon = 1e-10);
        assert_relative_eq!(s.x[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(s.objective, 0.0025 - 0.055, epsilon = 1e-12);
    }

    #[test]
    fn presolve_fixes_and_dependent_rows() {
        let mut p = QpProblem::new(3);
        p.quadratic = DMatrix::identity(3, 3);
        p.push_eq(&[1.0, 1.0, 1.0], 1.0);
        p.push_eq(&[2.0, 2.0, 2.0], 2.0);
        p.push_ineq(&[0.0, 0.0, 1.0], 0.0);
        p.lower.fill(0.0);
        p.upper[0] = 0.25;
        p.lower[0] = 0.25;
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal);
        assert_relative_eq!(s.x[0], 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.x[1], 0.75, epsilon = 1e-12);
        assert_relative_eq!(s.x[2], 0.0, epsilon = 1e-15);

        p.b_eq[1] = 2.5;
        assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
    }

    #[test]
    fn deterministic_repeat() {
        let mut p = QpProblem::new(4);
        p.quadratic = DMatrix::from_fn(4, 4, |i, j| if i == j { 2.0 } else { 0.5 });
        p.linear = DVector::from_vec(vec![-1.0, 0.3, -0.2, 0.1]);
        p.push_eq(&[1.0, 1.0, 1.0, 1.0], 1.0);
        p.push_ineq(&[1.0, -1.0, 0.0, 0.0], 0.1);
        p.lower.fill(-1.0);
        p.upper.fill(1.0);
        let a = solve_qp(&p).unwrap();
        let b = solve_qp(&p).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.status, QpStatus::Optimal);
    }

    #[test]
    fn rejects_mismatched_shapes() {
        let mut p = QpProblem::new(2);
        p.linear = DVector::zeros(3);
        assert!(solve_qp(&p).is_err());
    }
}
