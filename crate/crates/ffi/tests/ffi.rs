use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use fxoverlay::fixture::fixture_moments;
use fxoverlay::problem::{solve_spec, ProblemSpec};
use fxoverlay::solver::MiqpOptions;
use fxoverlay_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(fxo_last_error()) }.to_string_lossy().into_owned()
}

fn fixture_model() -> *mut FxoModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { fxo_model_load(ptr::null(), ptr::null(), ptr::null(), &mut m) }, FxoError::Ok);
    assert!(!m.is_null());
    m
}

#[test]
fn solve_matches_the_library() {
    unsafe {
        let model = fixture_model();
        assert_eq!(fxo_model_num_countries(model), 4);
        assert_eq!(fxo_model_num_classes(model), 2);
        let mut spec = ptr::null_mut();
        let json = CString::new(r#"{"M": 0.05, "G": 3}"#).unwrap();
        assert_eq!(fxo_spec_new(model, json.as_ptr(), &mut spec), FxoError::Ok);
        assert_eq!(fxo_spec_set_mu(spec, 0.012), FxoError::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(fxo_solve(model, spec, &mut sol), FxoError::Ok);
        assert_eq!(fxo_solution_status(sol), FxoStatus::Optimal);

        let (mut vol, mut var, mut ret) = (0.0, 0.0, 0.0);
        assert_eq!(fxo_solution_risk_return(sol, &mut vol, &mut var, &mut ret), FxoError::Ok);
        assert!((ret - 0.012).abs() < 1e-8);

        let mut reference = ProblemSpec::defaults(4, fxoverlay::fixture::default_spreads().unwrap());
        reference.margin = 0.05;
        reference.g = 3;
        reference.mu = 0.012;
        let (_, direct) = solve_spec(&fixture_moments().unwrap(), &reference, &MiqpOptions::default()).unwrap();
        assert_eq!(vol.to_bits(), direct.decoded.unwrap().volatility.to_bits());

        let mut w = [0.0; 8];
        assert_eq!(fxo_solution_weights(sol, w.as_mut_ptr(), w.len()), FxoError::Ok);
        let mut cash = 0.0;
        assert_eq!(fxo_solution_cash(sol, &mut cash), FxoError::Ok);
        assert!((w.iter().sum::<f64>() + cash - 1.0).abs() < 1e-8);

        let mut overlay = [0.0; 4];
        assert_eq!(fxo_solution_overlay(sol, overlay.as_mut_ptr(), 4), FxoError::Ok);
        assert!(overlay.iter().sum::<f64>().abs() < 1e-10);
        let mut small = [0.0; 3];
        assert_eq!(fxo_solution_contracts(sol, small.as_mut_ptr(), 3), FxoError::BufferTooSmall);
        assert!(last_error().contains("6 needed"));

        let text = fxo_solution_to_json(sol);
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(text).to_str().unwrap()).unwrap();
        assert!(json["volatility"].as_f64().is_some());
        fxo_string_free(text);

        let mut nodes = 0usize;
        let mut secs = 0.0;
        assert_eq!(fxo_solution_stats(sol, &mut nodes, &mut secs), FxoError::Ok);
        assert!(nodes >= 1);

        fxo_solution_free(sol);
        fxo_spec_free(spec);
        fxo_model_free(model);
    }
}

#[test]
fn infeasible_target_has_no_portfolio() {
    unsafe {
        let model = fixture_model();
        let mut spec = ptr::null_mut();
        assert_eq!(fxo_spec_new(model, ptr::null(), &mut spec), FxoError::Ok);
        assert_eq!(fxo_spec_set_mu(spec, 0.1), FxoError::Ok);
        let mut sol = ptr::null_mut();
        assert_eq!(fxo_solve(model, spec, &mut sol), FxoError::Ok);
        assert_eq!(fxo_solution_status(sol), FxoStatus::Infeasible);
        let mut v = 0.0;
        assert_eq!(fxo_solution_cash(sol, &mut v), FxoError::NoSolution);
        assert!(fxo_solution_to_json(sol).is_null());
        fxo_solution_free(sol);
        fxo_spec_free(spec);
        fxo_model_free(model);
    }
}

#[test]
fn invalid_input_yields_codes_and_messages() {
    unsafe {
        let mut m = ptr::null_mut();
        let missing = CString::new("/definitely/not/here.csv").unwrap();
        assert_eq!(fxo_model_load(ptr::null(), ptr::null(), missing.as_ptr(), &mut m), FxoError::Config);
        assert!(last_error().contains("spread table not found"));
        assert!(m.is_null());

        assert_eq!(fxo_model_load(ptr::null(), ptr::null(), ptr::null(), ptr::null_mut()), FxoError::NullPointer);

        let model = fixture_model();
        assert_eq!(last_error(), "");
        let mut spec = ptr::null_mut();
        let bad = CString::new(r#"{"bogus": 1}"#).unwrap();
        assert_eq!(fxo_spec_new(model, bad.as_ptr(), &mut spec), FxoError::Config);
        assert!(spec.is_null());

        assert_eq!(fxo_spec_new(model, ptr::null(), &mut spec), FxoError::Ok);
        assert_eq!(fxo_spec_set_cardinality(spec, 7), FxoError::Config);
        assert!(last_error().contains("'G'"));
        assert_eq!(fxo_spec_set_margin(spec, 2.0), FxoError::Config);
        assert_eq!(fxo_spec_set_overlay_limit(spec, 0.3), FxoError::Ok);
        assert_eq!(fxo_spec_set_policy(spec, FxoPolicy::FullyHedged), FxoError::Ok);
        assert_eq!(fxo_spec_set_mode(spec, FxoMode::TwoStage), FxoError::Ok);
        let text = fxo_spec_to_json(spec);
        let json: serde_json::Value = serde_json::from_str(CStr::from_ptr(text).to_str().unwrap()).unwrap();
        fxo_string_free(text);
        assert_eq!(json["V_u"], 0.3);
        assert_eq!(json["G"], 6);
        assert_eq!(json["policy"], "fully_hedged");
        assert_eq!(json["mode"], "two_stage");

        let mut f = ptr::null_mut();
        assert_eq!(fxo_frontier(model, spec, 0.02, 0.01, 0.001, 1, &mut f), FxoError::Config);
        assert_eq!(fxo_solve(ptr::null(), spec, &mut ptr::null_mut()), FxoError::NullPointer);
        assert_eq!(fxo_model_num_countries(ptr::null()), 0);

        fxo_spec_free(spec);
        fxo_model_free(model);
        fxo_model_free(ptr::null_mut());
        fxo_string_free(ptr::null_mut());
    }
}

#[test]
fn frontier_through_the_abi() {
    unsafe {
        let model = fixture_model();
        let mut spec = ptr::null_mut();
        assert_eq!(fxo_spec_new(model, ptr::null(), &mut spec), FxoError::Ok);
        let mut f = ptr::null_mut();
        assert_eq!(fxo_frontier(model, spec, 0.008, 0.012, 0.001, 2, &mut f), FxoError::Ok);
        assert_eq!(fxo_frontier_len(f), 5);
        let (mut mu, mut status, mut vol) = (0.0, FxoStatus::NumericalFailure, 0.0);
        let mut prev = 0.0;
        for i in 0..5 {
            assert_eq!(fxo_frontier_point(f, i, &mut mu, &mut status, &mut vol), FxoError::Ok);
            assert_eq!(status, FxoStatus::Optimal);
            assert!(vol >= prev);
            prev = vol;
        }
        assert!((mu - 0.012).abs() < 1e-12);
        assert_eq!(fxo_frontier_point(f, 5, &mut mu, &mut status, &mut vol), FxoError::Domain);
        let csv = fxo_frontier_to_csv(f);
        assert_eq!(CStr::from_ptr(csv).to_str().unwrap().lines().count(), 6);
        fxo_string_free(csv);
        fxo_frontier_free(f);
        fxo_spec_free(spec);
        fxo_model_free(model);
    }
}

#[test]
fn header_declares_every_export() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(root.join("include/fxoverlay.h")).unwrap();
    let source = std::fs::read_to_string(root.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = source
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .map(|rest| rest.split('(').next().unwrap())
        .collect();
    assert!(exports.len() > 20);
    for name in exports {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct FxoModel FxoModel;"));
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_the_shared_library() {
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler on PATH; C link check not run");
        return;
    }
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib_dir = target_dir();
    assert!(lib_dir.join("libfxoverlay_ffi.so").exists() || lib_dir.join("libfxoverlay_ffi.dylib").exists());
    let tmp = tempfile::tempdir().unwrap();
    let exe = tmp.path().join("smoke");
    let status = Command::new("cc")
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(root.join("examples/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg("-lfxoverlay_ffi")
        .arg("-o")
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).env("LD_LIBRARY_PATH", &lib_dir).env("DYLD_LIBRARY_PATH", &lib_dir).output().unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{stdout}\n{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout.contains("volatility"));
    assert!(stdout.contains("rejected: invalid config field 'G'"));
}
