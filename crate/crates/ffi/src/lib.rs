//! C ABI over the simulator.
//!
//! Every fallible call returns a [`PiflStatus`]; on failure the message is
//! available from [`pifl_last_error`] on the same thread. Strings returned
//! to the caller are owned by the caller and released with
//! [`pifl_string_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pifl::orchestrator::{self, RunConfig, RunOutput};
use pifl::profiler::TierAccuracyRecord;
use pifl::theory::{closed_form_errors, TheoryScenario};
use pifl::tokens::{compute_reimbursement, IncentiveParams};

/// Result of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PiflStatus {
    Ok = 0,
    /// A required pointer was null or a string was not UTF-8.
    InvalidArgument = 1,
    /// The configuration failed to parse or validate.
    ConfigError = 2,
    /// The simulation or an output write failed.
    RuntimeError = 3,
    /// The call was made in the wrong state, such as reading a summary
    /// before running.
    InvalidState = 4,
    /// An internal panic was caught.
    Panic = 5,
}

/// Opaque simulation handle.
pub struct PiflSimulation {
    config: RunConfig,
    output: Option<RunOutput>,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiflEstimatorErrors {
    pub local: f64,
    pub fl: f64,
    pub tier: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PiflReimbursement {
    pub delta_util: f64,
    pub theta: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn fail(status: PiflStatus, msg: impl Into<String>) -> PiflStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> PiflStatus) -> PiflStatus {
    clear_error();
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(PiflStatus::Panic, "internal panic"))
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, PiflStatus> {
    if s.is_null() {
        return Err(fail(PiflStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(PiflStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next FFI call on the same thread.
#[no_mangle]
pub extern "C" fn pifl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn pifl_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML configuration. On success `*out` receives a
/// handle to release with [`pifl_sim_free`].
///
/// # Safety
/// `config_toml` must be a valid NUL-terminated string and `out` a valid
/// pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn pifl_sim_new(config_toml: *const c_char, out: *mut *mut PiflSimulation) -> PiflStatus {
    guard(|| {
        if out.is_null() {
            return fail(PiflStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(config_toml, "config_toml") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match RunConfig::from_toml(text) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(PiflSimulation { config, output: None }));
                PiflStatus::Ok
            }
            Err(e) => fail(PiflStatus::ConfigError, e.to_string()),
        }
    })
}

/// Runs the simulation. A run that stops early still keeps its partial
/// output and reports `RuntimeError`.
///
/// # Safety
/// `sim` must be a handle from [`pifl_sim_new`].
#[no_mangle]
pub unsafe extern "C" fn pifl_sim_run(sim: *mut PiflSimulation) -> PiflStatus {
    guard(|| {
        let Some(sim) = sim.as_mut() else {
            return fail(PiflStatus::InvalidArgument, "sim is null");
        };
        match orchestrator::run(&sim.config) {
            Ok(out) => {
                let aborted = out.summary.error.clone();
                sim.output = Some(out);
                match aborted {
                    Some(msg) => fail(PiflStatus::RuntimeError, msg),
                    None => PiflStatus::Ok,
                }
            }
            Err(e) => fail(PiflStatus::RuntimeError, e.to_string()),
        }
    })
}

/// Writes the run's trace files into `dir`.
///
/// # Safety
/// `sim` must be a handle from [`pifl_sim_new`]; `dir` a valid string.
#[no_mangle]
pub unsafe extern "C" fn pifl_sim_write(sim: *const PiflSimulation, dir: *const c_char) -> PiflStatus {
    guard(|| {
        let Some(sim) = sim.as_ref() else {
            return fail(PiflStatus::InvalidArgument, "sim is null");
        };
        let dir = match read_str(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        let Some(out) = &sim.output else {
            return fail(PiflStatus::InvalidState, "simulation has not been run");
        };
        match out.write_dir(Path::new(dir)) {
            Ok(()) => PiflStatus::Ok,
            Err(e) => fail(PiflStatus::RuntimeError, e.to_string()),
        }
    })
}

/// The run summary as JSON in `*out`, to release with [`pifl_string_free`].
///
/// # Safety
/// `sim` must be a handle from [`pifl_sim_new`]; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pifl_sim_summary_json(sim: *const PiflSimulation, out: *mut *mut c_char) -> PiflStatus {
    guard(|| {
        if out.is_null() {
            return fail(PiflStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(sim) = sim.as_ref() else {
            return fail(PiflStatus::InvalidArgument, "sim is null");
        };
        let Some(run) = &sim.output else {
            return fail(PiflStatus::InvalidState, "simulation has not been run");
        };
        match serde_json::to_string(&run.summary) {
            Ok(json) => match CString::new(json) {
                Ok(s) => {
                    *out = s.into_raw();
                    PiflStatus::Ok
                }
                Err(e) => fail(PiflStatus::RuntimeError, e.to_string()),
            },
            Err(e) => fail(PiflStatus::RuntimeError, e.to_string()),
        }
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `sim` must be null or a handle from [`pifl_sim_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pifl_sim_free(sim: *mut PiflSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pifl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Closed-form squared errors for client 0 of tier 1 in a two-tier
/// population with equal sample sizes `n0`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pifl_theory_closed_form(
    m1: usize,
    m2: usize,
    n0: usize,
    sigma2: f64,
    tau2: f64,
    beta_gap: f64,
    out: *mut PiflEstimatorErrors,
) -> PiflStatus {
    guard(|| {
        let Some(out) = out.as_mut() else {
            return fail(PiflStatus::InvalidArgument, "out is null");
        };
        let scenario = TheoryScenario::equal(m1, m2, n0, sigma2, tau2, beta_gap);
        match closed_form_errors(&scenario, 0) {
            Ok(cf) => {
                *out = PiflEstimatorErrors {
                    local: cf.errors.local,
                    fl: cf.errors.fl,
                    tier: cf.errors.tier,
                };
                PiflStatus::Ok
            }
            Err(e) => fail(PiflStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Reimbursement utility and ratio for a tier whose accuracy moved from a
/// best-so-far of `acc_prev_max` to `acc`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pifl_reimbursement(
    acc: f64,
    acc_prev_max: f64,
    eta: f64,
    gamma: f64,
    out: *mut PiflReimbursement,
) -> PiflStatus {
    guard(|| {
        let Some(out) = out.as_mut() else {
            return fail(PiflStatus::InvalidArgument, "out is null");
        };
        let params = IncentiveParams {
            eta,
            gamma,
            ..IncentiveParams::default()
        };
        if let Err(e) = params.validate() {
            return fail(PiflStatus::InvalidArgument, e.to_string());
        }
        let record = TierAccuracyRecord {
            tier: 0,
            round: 0,
            acc,
            acc_prev_max,
            acc_max: acc.max(acc_prev_max),
        };
        let r = compute_reimbursement(&record, &params);
        *out = PiflReimbursement {
            delta_util: r.delta_util,
            theta: r.theta,
        };
        PiflStatus::Ok
    })
}
