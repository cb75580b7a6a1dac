mod common;

use fxoverlay::problem::{apply_policy, assemble, Policy};
use fxoverlay::solver::{brute_force, solve_miqp, solve_qp, MiqpStatus, QpProblem, QpStatus, Tolerances};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_qp(rng: &mut ChaCha8Rng) -> QpProblem {
    let n = rng.random_range(3..9);
    let rank = rng.random_range(1..=n);
    let l = DMatrix::from_fn(n, rank, |_, _| rng.random_range(-1.0..1.0));
    let mut p = QpProblem::new(n);
    p.quadratic = &l * l.transpose();
    p.linear = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    // a strictly interior point keeps every instance feasible
    let x0 = DVector::from_fn(n, |_, _| rng.random_range(-0.5..0.5));
    for _ in 0..rng.random_range(0..3) {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = DVector::from_row_slice(&row).dot(&x0);
        p.push_eq(&row, rhs);
    }
    for _ in 0..rng.random_range(1..5) {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let rhs = DVector::from_row_slice(&row).dot(&x0) + rng.random_range(0.0..0.3);
        p.push_ineq(&row, rhs);
    }
    p.lower = DVector::from_element(n, -1.0);
    p.upper = DVector::from_element(n, 1.0);
    p
}

#[test]
fn active_set_matches_admm_on_random_qps() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..40 {
        let p = random_qp(&mut rng);
        let s = solve_qp(&p).unwrap();
        assert_eq!(s.status, QpStatus::Optimal, "case {case}");
        assert!(p.max_violation(&s.x) <= 1e-8, "case {case}");
        let x = common::admm(&p, 20_000);
        let reference = p.objective(&x);
        assert!(p.max_violation(&x) < 1e-5, "oracle did not converge on case {case}");
        // the oracle point is only approximately feasible, so allow slack both ways
        assert!(
            (s.objective - reference).abs() <= 1e-5 * (1.0 + reference.abs()),
            "case {case}: active set {} vs admm {}",
            s.objective,
            reference
        );
    }
}

#[test]
fn infeasible_qp_is_reported() {
    let mut p = QpProblem::new(2);
    p.push_eq(&[1.0, 1.0], 3.0);
    p.lower = DVector::zeros(2);
    p.upper = DVector::from_element(2, 1.0);
    assert_eq!(solve_qp(&p).unwrap().status, QpStatus::Infeasible);
}

fn check_against_brute_force(c: usize, seed: u64, cases: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = Tolerances::default();
    for case in 0..cases {
        let m = common::random_moments(&mut rng, c);
        let mut spec = common::random_spec(&mut rng, &m);
        spec.policy = [Policy::Unrestricted, Policy::Unrestricted, Policy::FullyHedged, Policy::ForeignOnly]
            [rng.random_range(0..4)];
        spec.acyclic = rng.random_bool(0.8);
        let p = apply_policy(assemble(&m, &spec).unwrap(), spec.policy);
        let bnb = solve_miqp(&p).unwrap();
        let bf = brute_force(&p, &tol).unwrap();
        assert_eq!(bnb.status, bf.status, "case {case}: status");
        if bf.status == MiqpStatus::Optimal {
            let rel = (bnb.objective - bf.objective).abs() / bf.objective.abs().max(1e-12);
            assert!(rel <= 1e-8, "case {case}: bnb {} vs brute force {}", bnb.objective, bf.objective);
            let d = bnb.decoded.as_ref().unwrap();
            assert!(d.verify(&spec, 1e-7).is_empty(), "case {case}: {:?}", d.verify(&spec, 1e-7));
        }
    }
}

#[test]
fn branch_and_bound_matches_enumeration_three_countries() {
    check_against_brute_force(3, 11, 30);
}

#[test]
fn branch_and_bound_matches_enumeration_four_countries() {
    check_against_brute_force(4, 12, 20);
}

#[test]
fn repeated_solves_are_bitwise_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = common::random_moments(&mut rng, 4);
    let spec = common::random_spec(&mut rng, &m);
    let p = assemble(&m, &spec).unwrap();
    let a = solve_miqp(&p).unwrap();
    let b = solve_miqp(&p).unwrap();
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    assert_eq!(a.binaries, b.binaries);
    assert_eq!(a.nodes_explored, b.nodes_explored);
}
