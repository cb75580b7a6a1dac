//! C ABI over `fxoverlay`.
//!
//! Objects are opaque handles created by `fxo_*_new`/`fxo_*_load` style
//! functions and released with the matching `*_free`. Every fallible call
//! returns an [`FxoError`]; on failure `fxo_last_error()` describes the
//! problem for the calling thread. Strings returned by the library must be
//! released with `fxo_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use fxoverlay::cli::{load_inputs, InputArgs};
use fxoverlay::frontier::{frontier_csv, sweep, Frontier, MuGrid};
use fxoverlay::market_data::AdjustedMoments;
use fxoverlay::problem::{solve_spec, DecodedSolution, Mode, Policy, ProblemSpec, SpecOverrides};
use fxoverlay::solver::{MiqpOptions, MiqpStatus};
use fxoverlay::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxoError {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Parse = 4,
    Config = 5,
    Domain = 6,
    Solver = 7,
    /// The caller's buffer is too small; nothing was written.
    BufferTooSmall = 8,
    /// The solution holds no portfolio (for example the target was infeasible).
    NoSolution = 9,
    Panic = 10,
}

/// Outcome of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxoStatus {
    Optimal = 0,
    Infeasible = 1,
    NodeLimit = 2,
    NumericalFailure = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxoPolicy {
    Unrestricted = 0,
    FullyHedged = 1,
    ForeignOnly = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FxoMode {
    Unified = 0,
    TwoStage = 1,
}

/// Adjusted moments plus the spread table of a dataset.
pub struct FxoModel {
    moments: AdjustedMoments,
    spreads: Vec<f64>,
}

pub struct FxoSpec {
    spec: ProblemSpec,
}

pub struct FxoSolution {
    status: MiqpStatus,
    decoded: Option<DecodedSolution>,
    nodes: usize,
    wall_time: f64,
}

pub struct FxoFrontier {
    frontier: Frontier,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(e: &Error) -> FxoError {
    match e {
        Error::Io { .. } | Error::NotFound(_) => FxoError::Io,
        Error::Parse { .. }
        | Error::Schema(_)
        | Error::Alignment(_)
        | Error::InsufficientData { .. }
        | Error::Json(_)
        | Error::Csv(_) => FxoError::Parse,
        Error::Config { .. } => FxoError::Config,
        Error::Domain(_) | Error::Contract(_) | Error::Infeasible(_) => FxoError::Domain,
        Error::Solver(_) => FxoError::Solver,
    }
}

/// Runs `f`, converting errors and panics into codes.
fn guard(f: impl FnOnce() -> Result<(), (FxoError, String)>) -> FxoError {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            FxoError::Ok
        }
        Ok(Err((code, msg))) => {
            set_last_error(&msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic");
            FxoError::Panic
        }
    }
}

fn lib(e: Error) -> (FxoError, String) {
    (code_of(&e), e.to_string())
}

fn null(name: &str) -> (FxoError, String) {
    (FxoError::NullPointer, format!("{name} is null"))
}

unsafe fn get<'a, T>(p: *const T, name: &str) -> Result<&'a T, (FxoError, String)> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn get_mut<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, (FxoError, String)> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn opt_path(p: *const c_char, name: &str) -> Result<Option<PathBuf>, (FxoError, String)> {
    if p.is_null() {
        return Ok(None);
    }
    let s = CStr::from_ptr(p).to_str().map_err(|_| (FxoError::InvalidUtf8, format!("{name} is not UTF-8")))?;
    Ok(Some(PathBuf::from(s)))
}

unsafe fn put<T>(out: *mut *mut T, value: T, name: &str) -> Result<(), (FxoError, String)> {
    if out.is_null() {
        return Err(null(name));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).map_or(ptr::null_mut(), CString::into_raw)
}

unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), (FxoError, String)> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        return Err((FxoError::BufferTooSmall, format!("buffer holds {len} values, {} needed", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn fxo_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fxo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed already.
#[no_mangle]
pub unsafe extern "C" fn fxo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a dataset. Any path may be null: a null `data` selects the bundled
/// four-country fixture, a null `schema` the fixture layout and a null
/// `spreads` the bundled spreads (fixture) or zero spreads (own data).
///
/// # Safety
/// Non-null paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_model_load(
    data: *const c_char,
    schema: *const c_char,
    spreads: *const c_char,
    out: *mut *mut FxoModel,
) -> FxoError {
    guard(|| {
        let args = InputArgs {
            data: opt_path(data, "data")?,
            schema: opt_path(schema, "schema")?,
            spreads: opt_path(spreads, "spreads")?,
            out: PathBuf::new(),
        };
        let inputs = load_inputs(&args).map_err(lib)?;
        put(out, FxoModel { moments: inputs.moments, spreads: inputs.spreads }, "out")
    })
}

/// # Safety
/// `model` must be null or a live handle from `fxo_model_load`.
#[no_mangle]
pub unsafe extern "C" fn fxo_model_free(model: *mut FxoModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of countries, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_model_num_countries(model: *const FxoModel) -> usize {
    model.as_ref().map_or(0, |m| m.moments.num_countries())
}

/// Number of asset classes, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_model_num_classes(model: *const FxoModel) -> usize {
    model.as_ref().map_or(0, |m| m.moments.num_classes())
}

/// Default parameters for `model`, then the overrides in `json` (model
/// units, may be null).
///
/// # Safety
/// `model` must be a live handle, `json` null or NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_new(model: *const FxoModel, json: *const c_char, out: *mut *mut FxoSpec) -> FxoError {
    guard(|| {
        let m = get(model, "model")?;
        let c = m.moments.num_countries();
        let mut spec = ProblemSpec::defaults(c, m.spreads.clone());
        if !json.is_null() {
            let text =
                CStr::from_ptr(json).to_str().map_err(|_| (FxoError::InvalidUtf8, "json is not UTF-8".to_string()))?;
            let o: SpecOverrides =
                serde_json::from_str(text).map_err(|e| (FxoError::Config, format!("invalid spec: {e}")))?;
            spec.apply(&o).map_err(lib)?;
        }
        spec.validate(c).map_err(lib)?;
        put(out, FxoSpec { spec }, "out")
    })
}

/// # Safety
/// `spec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_free(spec: *mut FxoSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// Sets the target monthly return (decimal).
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_mu(spec: *mut FxoSpec, mu: f64) -> FxoError {
    guard(|| {
        let s = get_mut(spec, "spec")?;
        if !mu.is_finite() {
            return Err((FxoError::Config, "invalid config field 'mu': must be finite".into()));
        }
        s.spec.mu = mu;
        Ok(())
    })
}

unsafe fn update(spec: *mut FxoSpec, o: SpecOverrides) -> FxoError {
    guard(|| {
        let s = get_mut(spec, "spec")?;
        let mut next = s.spec.clone();
        next.apply(&o).map_err(lib)?;
        next.validate(next.num_countries()).map_err(lib)?;
        s.spec = next;
        Ok(())
    })
}

/// Sets the total overlay limit (fraction).
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_overlay_limit(spec: *mut FxoSpec, v_u: f64) -> FxoError {
    update(spec, SpecOverrides { v_u: Some(v_u), ..SpecOverrides::default() })
}

/// Sets the maximum number of active contracts.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_cardinality(spec: *mut FxoSpec, g: usize) -> FxoError {
    update(spec, SpecOverrides { g: Some(g), ..SpecOverrides::default() })
}

/// Sets the margin requirement (fraction of gross forward volume).
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_margin(spec: *mut FxoSpec, margin: f64) -> FxoError {
    update(spec, SpecOverrides { margin: Some(margin), ..SpecOverrides::default() })
}

/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_policy(spec: *mut FxoSpec, policy: FxoPolicy) -> FxoError {
    let p = match policy {
        FxoPolicy::Unrestricted => Policy::Unrestricted,
        FxoPolicy::FullyHedged => Policy::FullyHedged,
        FxoPolicy::ForeignOnly => Policy::ForeignOnly,
    };
    update(spec, SpecOverrides { policy: Some(p), ..SpecOverrides::default() })
}

/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_set_mode(spec: *mut FxoSpec, mode: FxoMode) -> FxoError {
    let m = match mode {
        FxoMode::Unified => Mode::Unified,
        FxoMode::TwoStage => Mode::TwoStage,
    };
    update(spec, SpecOverrides { mode: Some(m), ..SpecOverrides::default() })
}

/// Effective parameters as JSON; release with `fxo_string_free`.
///
/// # Safety
/// `spec` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_spec_to_json(spec: *const FxoSpec) -> *mut c_char {
    match spec.as_ref() {
        Some(s) => into_c_string(serde_json::to_string(&s.spec).unwrap_or_default()),
        None => ptr::null_mut(),
    }
}

/// Solves one portfolio. Success means the solver ran; the outcome is read
/// with `fxo_solution_status`.
///
/// # Safety
/// `model` and `spec` must be live handles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_solve(
    model: *const FxoModel,
    spec: *const FxoSpec,
    out: *mut *mut FxoSolution,
) -> FxoError {
    guard(|| {
        let m = get(model, "model")?;
        let s = get(spec, "spec")?;
        let (_, sol) = solve_spec(&m.moments, &s.spec, &MiqpOptions::default()).map_err(lib)?;
        let decoded = sol.decoded.filter(|_| sol.status == MiqpStatus::Optimal);
        put(
            out,
            FxoSolution { status: sol.status, decoded, nodes: sol.nodes_explored, wall_time: sol.wall_time },
            "out",
        )
    })
}

/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_free(sol: *mut FxoSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

fn status_of(s: MiqpStatus) -> FxoStatus {
    match s {
        MiqpStatus::Optimal => FxoStatus::Optimal,
        MiqpStatus::Infeasible => FxoStatus::Infeasible,
        MiqpStatus::NodeLimit => FxoStatus::NodeLimit,
        MiqpStatus::NumericalFailure => FxoStatus::NumericalFailure,
    }
}

/// Solve outcome; a null handle reads as `NumericalFailure`.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_status(sol: *const FxoSolution) -> FxoStatus {
    sol.as_ref().map_or(FxoStatus::NumericalFailure, |s| status_of(s.status))
}

/// Branch-and-bound nodes explored and solve time in seconds.
///
/// # Safety
/// `sol` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_stats(sol: *const FxoSolution, nodes: *mut usize, seconds: *mut f64) -> FxoError {
    guard(|| {
        let s = get(sol, "solution")?;
        *get_mut(nodes, "nodes")? = s.nodes;
        *get_mut(seconds, "seconds")? = s.wall_time;
        Ok(())
    })
}

unsafe fn decoded<'a>(sol: *const FxoSolution) -> Result<&'a DecodedSolution, (FxoError, String)> {
    get(sol, "solution")?
        .decoded
        .as_ref()
        .ok_or_else(|| (FxoError::NoSolution, "solution holds no portfolio".to_string()))
}

/// Monthly volatility, variance, and net return of the portfolio.
///
/// # Safety
/// `sol` must be a live handle; each output must be writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_risk_return(
    sol: *const FxoSolution,
    volatility: *mut f64,
    variance: *mut f64,
    net_return: *mut f64,
) -> FxoError {
    guard(|| {
        let d = decoded(sol)?;
        *get_mut(volatility, "volatility")? = d.volatility;
        *get_mut(variance, "variance")? = d.variance;
        *get_mut(net_return, "net_return")? = d.achieved_return;
        Ok(())
    })
}

/// Asset weights, classes by countries in row-major order (`A·C` values).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_weights(sol: *const FxoSolution, buf: *mut f64, len: usize) -> FxoError {
    guard(|| {
        let d = decoded(sol)?;
        let flat: Vec<f64> = d.a.iter().flatten().copied().collect();
        copy_out(&flat, buf, len)
    })
}

/// Overlay position per country (`C` values).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_overlay(sol: *const FxoSolution, buf: *mut f64, len: usize) -> FxoError {
    guard(|| copy_out(&decoded(sol)?.overlay, buf, len))
}

/// Currency exposure per country (`C` values).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_currency_exposure(
    sol: *const FxoSolution,
    buf: *mut f64,
    len: usize,
) -> FxoError {
    guard(|| copy_out(&decoded(sol)?.currency_exposure, buf, len))
}

/// Signed forward contract sizes (`C(C−1)/2` values).
///
/// # Safety
/// `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_contracts(sol: *const FxoSolution, buf: *mut f64, len: usize) -> FxoError {
    guard(|| copy_out(&decoded(sol)?.q, buf, len))
}

/// Margin cash held.
///
/// # Safety
/// `sol` must be a live handle and `cash` writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_cash(sol: *const FxoSolution, cash: *mut f64) -> FxoError {
    guard(|| {
        *get_mut(cash, "cash")? = decoded(sol)?.cash;
        Ok(())
    })
}

/// Full decoded portfolio as JSON, or null without one; release with
/// `fxo_string_free`.
///
/// # Safety
/// `sol` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_solution_to_json(sol: *const FxoSolution) -> *mut c_char {
    match sol.as_ref().and_then(|s| s.decoded.as_ref()) {
        Some(d) => into_c_string(serde_json::to_string(d).unwrap_or_default()),
        None => ptr::null_mut(),
    }
}

/// Sweeps the inclusive target grid `lo, lo+step, …, ≤ hi` (decimals).
/// `jobs` = 0 uses every core.
///
/// # Safety
/// `model` and `spec` must be live handles, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_frontier(
    model: *const FxoModel,
    spec: *const FxoSpec,
    lo: f64,
    hi: f64,
    step: f64,
    jobs: usize,
    out: *mut *mut FxoFrontier,
) -> FxoError {
    guard(|| {
        let m = get(model, "model")?;
        let s = get(spec, "spec")?;
        let grid = MuGrid::new(lo, hi, step).map_err(lib)?;
        let pool = rayon_pool(jobs)?;
        let frontier = pool.install(|| sweep(&m.moments, &s.spec, &grid, &MiqpOptions::default())).map_err(lib)?;
        put(out, FxoFrontier { frontier }, "out")
    })
}

fn rayon_pool(jobs: usize) -> Result<rayon::ThreadPool, (FxoError, String)> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| (FxoError::Config, e.to_string()))
}

/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_frontier_free(f: *mut FxoFrontier) {
    if !f.is_null() {
        drop(Box::from_raw(f));
    }
}

/// Number of grid points, or 0 for a null handle.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_frontier_len(f: *const FxoFrontier) -> usize {
    f.as_ref().map_or(0, |f| f.frontier.points.len())
}

/// Target, status and volatility of point `index`; the volatility is NaN
/// unless the point is optimal.
///
/// # Safety
/// `f` must be a live handle; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn fxo_frontier_point(
    f: *const FxoFrontier,
    index: usize,
    mu: *mut f64,
    status: *mut FxoStatus,
    volatility: *mut f64,
) -> FxoError {
    guard(|| {
        let f = get(f, "frontier")?;
        let p = f.frontier.points.get(index).ok_or_else(|| {
            (FxoError::Domain, format!("index {index} out of range for {} points", f.frontier.points.len()))
        })?;
        *get_mut(mu, "mu")? = p.mu;
        *get_mut(status, "status")? = status_of(p.status);
        *get_mut(volatility, "volatility")? = p.volatility().unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Frontier in the CLI's CSV layout; release with `fxo_string_free`.
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fxo_frontier_to_csv(f: *const FxoFrontier) -> *mut c_char {
    match f.as_ref() {
        Some(f) => into_c_string(frontier_csv(&f.frontier)),
        None => ptr::null_mut(),
    }
}
