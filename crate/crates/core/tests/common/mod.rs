#![allow(dead_code)]

use fxoverlay::market_data::{AdjustedMoments, Country};
use fxoverlay::problem::ProblemSpec;
use fxoverlay::solver::{solve_qp, QpProblem, QpStatus};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn countries(c: usize) -> Vec<Country> {
    let codes = ["US", "DE", "UK", "JP", "CH", "CA", "AU"];
    let ccys = ["USD", "EUR", "GBP", "JPY", "CHF", "CAD", "AUD"];
    (0..c).map(|j| Country { code: codes[j].into(), currency: ccys[j].into() }).collect()
}

/// Random full-rank moments for `c` countries and two asset classes, with
/// returns around 0.2%..1.5% per month.
pub fn random_moments<R: Rng>(rng: &mut R, c: usize) -> AdjustedMoments {
    let dim = 3 * c;
    let l = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0) * 0.01);
    let diag = DMatrix::from_fn(dim, dim, |i, j| if i == j { rng.random_range(0.5..2.0) * 1e-5 } else { 0.0 });
    let omega = &l * l.transpose() / dim as f64 + diag;
    let r =
        DVector::from_fn(
            dim,
            |i, _| {
                if i < 2 * c {
                    rng.random_range(0.002..0.015)
                } else {
                    rng.random_range(-0.002..0.006)
                }
            },
        );
    let rates = (0..c).map(|_| rng.random_range(0.0..0.004)).collect();
    AdjustedMoments::from_parts(countries(c), vec!["bond".into(), "equity".into()], r, omega, rates).unwrap()
}

/// Random spec whose target is reachable without any forwards.
pub fn random_spec<R: Rng>(rng: &mut R, m: &AdjustedMoments) -> ProblemSpec {
    let c = m.num_countries();
    let k = c * (c - 1) / 2;
    let spreads = (0..k).map(|_| rng.random_range(0.00002..0.0002)).collect();
    let mut spec = ProblemSpec::defaults(c, spreads);
    // a random long-only allocation with currency following assets
    let w: Vec<f64> = (0..2 * c).map(|_| rng.random_range(0.0..1.0)).collect();
    let total: f64 = w.iter().sum();
    spec.mu = (0..2 * c).map(|i| w[i] / total * (m.r[i] + m.r[2 * c + i % c])).sum();
    spec.v_u = [0.0, 0.1, 0.3, 0.5, 1.0][rng.random_range(0..5)];
    spec.g = rng.random_range(0..=k);
    spec.margin = [0.0, 0.03, 0.1, 0.3, 0.5][rng.random_range(0..5)];
    spec
}

/// Plain long-only Markowitz: currency exposure follows asset exposure and
/// there is no cash. Returns `(variance, weights)`.
pub fn markowitz(m: &AdjustedMoments, mu: f64) -> Option<(f64, DVector<f64>)> {
    let c = m.num_countries();
    let a = m.num_classes();
    let n = a * c;
    // x = E w, E maps asset weights to [a; c]
    let e = DMatrix::from_fn((a + 1) * c, n, |row, col| {
        if row < n {
            (row == col) as u8 as f64
        } else {
            (col % c == row - n) as u8 as f64
        }
    });
    let mut p = QpProblem::new(n);
    p.quadratic = e.transpose() * &m.omega * &e;
    let er = e.transpose() * &m.r;
    p.push_eq(er.as_slice(), mu);
    p.push_eq(&vec![1.0; n], 1.0);
    p.lower = DVector::zeros(n);
    p.upper = DVector::from_element(n, 1.0);
    let s = solve_qp(&p).ok()?;
    (s.status == QpStatus::Optimal).then(|| (s.objective, s.x))
}

/// Dense OSQP-style ADMM for `min xᵀQx + cᵀx` subject to the problem's
/// rows and bounds. Slow but independent of the active-set code.
pub fn admm(p: &QpProblem, iters: usize) -> DVector<f64> {
    let n = p.num_vars();
    let me = p.a_eq.nrows();
    let mi = p.a_ineq.nrows();
    let m = me + mi + n;
    let mut cm = DMatrix::zeros(m, n);
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for i in 0..me {
        cm.row_mut(i).copy_from(&p.a_eq.row(i));
        lo[i] = p.b_eq[i];
        hi[i] = p.b_eq[i];
    }
    for i in 0..mi {
        cm.row_mut(me + i).copy_from(&p.a_ineq.row(i));
        lo[me + i] = f64::NEG_INFINITY;
        hi[me + i] = p.b_ineq[i];
    }
    for j in 0..n {
        cm[(me + mi + j, j)] = 1.0;
        lo[me + mi + j] = p.lower[j];
        hi[me + mi + j] = p.upper[j];
    }
    let (rho, sigma, relax) = (1.0, 1e-8, 1.6);
    let pm = &p.quadratic * 2.0;
    let kkt = &pm + DMatrix::identity(n, n) * sigma + cm.transpose() * &cm * rho;
    let lu = kkt.lu();
    let mut x = DVector::zeros(n);
    let mut z = DVector::zeros(m);
    let mut y = DVector::zeros(m);
    for _ in 0..iters {
        let rhs = &x * sigma - &p.linear + cm.transpose() * (&z * rho - &y);
        let xt = lu.solve(&rhs).expect("regularised system is nonsingular");
        let zt = &cm * &xt;
        x = &xt * relax + &x * (1.0 - relax);
        let zr = &zt * relax + &z * (1.0 - relax);
        let zn = (&zr + &y / rho).zip_zip_map(&lo, &hi, |v, l, h| v.clamp(l, h));
        y += (&zr - &zn) * rho;
        z = zn;
    }
    x
}
