//! C interface to `roptd`.
//!
//! Handles are opaque and owned by the caller once returned; release them with
//! the matching `*_free` function. Every fallible call returns a
//! [`RoptdStatus`]; on failure [`roptd_last_error`] describes the problem.
//! Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use roptd::config::{parse_config, Algorithm, ProblemConfig};
use roptd::model::DesignMeasure;
use roptd::problem::{solve_problem, verify_design, RunOptions, Solution};
use roptd::reporting::{round_design, Report};
use roptd::Error;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoptdStatus {
    Ok = 0,
    /// The solve finished but the optimality check failed; the solution is still returned.
    NotConverged = 1,
    NullPointer = 2,
    InvalidUtf8 = 3,
    Config = 4,
    InvalidModel = 5,
    SingularInformation = 6,
    InvalidWeights = 7,
    InvalidOptions = 8,
    Symmetry = 9,
    TooFewRuns = 10,
    BufferTooSmall = 11,
    Io = 12,
    Panic = 13,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoptdAlgorithm {
    Interior = 0,
    Multiplicative = 1,
}

/// Per-run overrides. Fill with [`roptd_run_options_default`] first.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct RoptdRunOptions {
    pub algorithm: RoptdAlgorithm,
    /// Use the correlation matrix R0 (true) or the covariance V0 (false).
    pub use_correlation: bool,
    /// Apply the reflection axes declared in the config.
    pub use_symmetry: bool,
    /// Tolerance on max d.
    pub delta: f64,
    /// Threads for the sensitivity sweep; results do not depend on it.
    pub threads: u32,
}

/// A parsed problem configuration.
pub struct RoptdProblem {
    cfg: ProblemConfig,
}

/// A solved design with its report.
pub struct RoptdSolution {
    sol: Solution,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn status_of(e: &Error) -> RoptdStatus {
    match e {
        Error::Config(_) | Error::Json(_) | Error::Csv(_) => RoptdStatus::Config,
        Error::InvalidFactor { .. }
        | Error::InvalidSpace(_)
        | Error::InvalidModel(_)
        | Error::EmaxPole { .. }
        | Error::NotPositiveDefinite(_)
        | Error::Dimension(_) => RoptdStatus::InvalidModel,
        Error::SingularInformation => RoptdStatus::SingularInformation,
        Error::Infeasible | Error::InvalidWeights(_) => RoptdStatus::InvalidWeights,
        Error::InvalidOptions(_) => RoptdStatus::InvalidOptions,
        Error::Symmetry(_) => RoptdStatus::Symmetry,
        Error::TooFewRuns { .. } => RoptdStatus::TooFewRuns,
        Error::Io { .. } => RoptdStatus::Io,
    }
}

enum Fail {
    Status(RoptdStatus, String),
    Core(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn fail(status: RoptdStatus, msg: &str) -> Fail {
    Fail::Status(status, msg.to_string())
}

/// Runs `f`, recording errors and catching panics.
fn guard(f: impl FnOnce() -> Result<RoptdStatus, Fail>) -> RoptdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => {
            if status == RoptdStatus::Ok {
                set_error("");
            }
            status
        }
        Ok(Err(Fail::Status(status, msg))) => {
            set_error(msg);
            status
        }
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            RoptdStatus::Panic
        }
    }
}

fn run_options(cfg: &ProblemConfig, opts: Option<&RoptdRunOptions>) -> Result<RunOptions, Fail> {
    let mut run = RunOptions::from_config(cfg);
    if let Some(o) = opts {
        run.algorithm = match o.algorithm {
            RoptdAlgorithm::Interior => Algorithm::Interior,
            RoptdAlgorithm::Multiplicative => Algorithm::Multiplicative,
        };
        run.use_correlation = o.use_correlation;
        if !o.use_symmetry {
            run.axes.clear();
        }
        if !(o.delta > 0.0) {
            return Err(fail(RoptdStatus::InvalidOptions, "delta must be positive"));
        }
        run.set_delta(o.delta);
        run.threads = o.threads.max(1) as usize;
    }
    Ok(run)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn roptd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// Valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn roptd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Parses a TOML problem configuration.
///
/// # Safety
/// `config` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_from_config(
    config: *const c_char,
    out: *mut *mut RoptdProblem,
) -> RoptdStatus {
    guard(|| {
        if config.is_null() || out.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null argument"));
        }
        let text = CStr::from_ptr(config)
            .to_str()
            .map_err(|_| fail(RoptdStatus::InvalidUtf8, "config is not valid UTF-8"))?;
        let cfg = parse_config(text)?;
        *out = Box::into_raw(Box::new(RoptdProblem { cfg }));
        Ok(RoptdStatus::Ok)
    })
}

/// # Safety
/// `problem` must come from [`roptd_problem_from_config`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_free(problem: *mut RoptdProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Number of candidate points, or 0 for a null handle.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_num_points(problem: *const RoptdProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.cfg.space.len())
}

/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_num_factors(problem: *const RoptdProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.cfg.space.dim())
}

/// Number of regression parameters `q`.
///
/// # Safety
/// `problem` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_num_params(problem: *const RoptdProblem) -> usize {
    problem.as_ref().map_or(0, |p| p.cfg.model.q())
}

/// Copies the coordinates of point `index` into `coords[0..len]`.
///
/// # Safety
/// `problem` must be a live handle and `coords` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn roptd_problem_point(
    problem: *const RoptdProblem,
    index: usize,
    coords: *mut f64,
    len: usize,
) -> RoptdStatus {
    guard(|| {
        let p = problem
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null problem"))?;
        if coords.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null coords"));
        }
        if index >= p.cfg.space.len() {
            return Err(fail(RoptdStatus::InvalidOptions, "point index out of range"));
        }
        let x = p.cfg.space.point(index);
        if len < x.len() {
            return Err(fail(RoptdStatus::BufferTooSmall, "coords buffer shorter than the factor count"));
        }
        std::slice::from_raw_parts_mut(coords, x.len()).copy_from_slice(x);
        Ok(RoptdStatus::Ok)
    })
}

/// Fills `out` with the run options the config implies.
///
/// # Safety
/// `problem` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roptd_run_options_default(
    problem: *const RoptdProblem,
    out: *mut RoptdRunOptions,
) -> RoptdStatus {
    guard(|| {
        let p = problem
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null problem"))?;
        let out = out
            .as_mut()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null options"))?;
        let run = RunOptions::from_config(&p.cfg);
        *out = RoptdRunOptions {
            algorithm: match run.algorithm {
                Algorithm::Interior => RoptdAlgorithm::Interior,
                Algorithm::Multiplicative => RoptdAlgorithm::Multiplicative,
            },
            use_correlation: run.use_correlation,
            use_symmetry: !run.axes.is_empty(),
            delta: run.delta(),
            threads: 1,
        };
        Ok(RoptdStatus::Ok)
    })
}

/// Solves the problem. `options` may be null for the config defaults.
///
/// Returns `Ok` or `NotConverged`; in both cases `*out` receives a solution.
///
/// # Safety
/// `problem` must be a live handle, `options` null or valid, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn roptd_solve(
    problem: *const RoptdProblem,
    options: *const RoptdRunOptions,
    out: *mut *mut RoptdSolution,
) -> RoptdStatus {
    guard(|| {
        let p = problem
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null problem"))?;
        if out.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null output"));
        }
        let run = run_options(&p.cfg, options.as_ref())?;
        let sol = solve_problem(&p.cfg, &run)?;
        let json = Report::new(&p.cfg, &run, &sol).to_json()?;
        let json = CString::new(json).expect("JSON has no NUL bytes");
        let converged = sol.converged();
        *out = Box::into_raw(Box::new(RoptdSolution { sol, json }));
        Ok(if converged {
            RoptdStatus::Ok
        } else {
            RoptdStatus::NotConverged
        })
    })
}

/// # Safety
/// `solution` must come from [`roptd_solve`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_free(solution: *mut RoptdSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_converged(solution: *const RoptdSolution) -> bool {
    solution.as_ref().is_some_and(|s| s.sol.converged())
}

/// `Σ_r log A_rr` at the solution; NaN for a null handle.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_loss(solution: *const RoptdSolution) -> f64 {
    solution.as_ref().map_or(f64::NAN, |s| s.sol.loss)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_max_d(solution: *const RoptdSolution) -> f64 {
    solution
        .as_ref()
        .map_or(f64::NAN, |s| s.sol.equivalence.max_d)
}

/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_num_points(solution: *const RoptdSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.sol.weights.weights().len())
}

/// Copies all weights (candidate-point order) into `weights[0..len]`.
///
/// # Safety
/// `solution` must be a live handle and `weights` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_weights(
    solution: *const RoptdSolution,
    weights: *mut f64,
    len: usize,
) -> RoptdStatus {
    guard(|| {
        let s = solution
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null solution"))?;
        if weights.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null weights buffer"));
        }
        let w = s.sol.weights.weights();
        if len < w.len() {
            return Err(fail(RoptdStatus::BufferTooSmall, "weights buffer shorter than the point count"));
        }
        std::slice::from_raw_parts_mut(weights, w.len()).copy_from_slice(w);
        Ok(RoptdStatus::Ok)
    })
}

/// Number of support points (lexicographically ordered).
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_num_support(solution: *const RoptdSolution) -> usize {
    solution.as_ref().map_or(0, |s| s.sol.support.len())
}

/// Coordinates and weight of support point `k`.
///
/// # Safety
/// `solution` must be a live handle, `coords` valid for `len` doubles and
/// `weight` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_support_point(
    solution: *const RoptdSolution,
    k: usize,
    coords: *mut f64,
    len: usize,
    weight: *mut f64,
) -> RoptdStatus {
    guard(|| {
        let s = solution
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null solution"))?;
        if coords.is_null() || weight.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null output"));
        }
        let sp = s
            .sol
            .support
            .get(k)
            .ok_or_else(|| fail(RoptdStatus::InvalidOptions, "support index out of range"))?;
        if len < sp.point.len() {
            return Err(fail(RoptdStatus::BufferTooSmall, "coords buffer shorter than the factor count"));
        }
        std::slice::from_raw_parts_mut(coords, sp.point.len()).copy_from_slice(&sp.point);
        *weight = sp.weight;
        Ok(RoptdStatus::Ok)
    })
}

/// The JSON report; owned by the solution and valid until it is freed.
///
/// # Safety
/// `solution` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn roptd_solution_report_json(solution: *const RoptdSolution) -> *const c_char {
    solution
        .as_ref()
        .map_or(std::ptr::null(), |s| s.json.as_ptr())
}

/// Equivalence check of `weights[0..len]` (renormalized if off the simplex).
///
/// # Safety
/// `problem` must be a live handle, `weights` valid for `len` doubles,
/// `options` null or valid, `max_d` and `optimal` valid pointers.
#[no_mangle]
pub unsafe extern "C" fn roptd_verify(
    problem: *const RoptdProblem,
    weights: *const f64,
    len: usize,
    options: *const RoptdRunOptions,
    max_d: *mut f64,
    optimal: *mut bool,
) -> RoptdStatus {
    guard(|| {
        let p = problem
            .as_ref()
            .ok_or_else(|| fail(RoptdStatus::NullPointer, "null problem"))?;
        if weights.is_null() || max_d.is_null() || optimal.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null argument"));
        }
        let run = run_options(&p.cfg, options.as_ref())?;
        let w = measure(std::slice::from_raw_parts(weights, len))?;
        let eq = verify_design(&p.cfg, &w, &run)?;
        *max_d = eq.max_d;
        *optimal = eq.optimal;
        Ok(RoptdStatus::Ok)
    })
}

/// Rounds `weights[0..len]` to `runs` runs; `counts[0..len]` receives the result.
/// Points with weight at most `threshold` get no runs.
///
/// # Safety
/// `weights` and `counts` must be valid for `len` elements.
#[no_mangle]
pub unsafe extern "C" fn roptd_round(
    weights: *const f64,
    len: usize,
    runs: usize,
    threshold: f64,
    counts: *mut usize,
) -> RoptdStatus {
    guard(|| {
        if weights.is_null() || counts.is_null() {
            return Err(fail(RoptdStatus::NullPointer, "null argument"));
        }
        let w = measure(std::slice::from_raw_parts(weights, len))?;
        let exact = round_design(&w, runs, threshold)?;
        std::slice::from_raw_parts_mut(counts, len).copy_from_slice(&exact.counts);
        Ok(RoptdStatus::Ok)
    })
}

fn measure(w: &[f64]) -> Result<DesignMeasure, Fail> {
    Ok(DesignMeasure::new(w.to_vec()).or_else(|_| DesignMeasure::normalized(w.to_vec()))?)
}
