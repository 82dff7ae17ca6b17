//! C ABI over `renewal_sir`.
//!
//! Every fallible call returns an [`RsStatus`]; on failure the message is
//! available from [`rs_last_error`] on the same thread. Handles are opaque and
//! must be released with their `_free` function.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use renewal_sir::cli_io::{write_summary_csv, write_trajectory_csv, ScenarioFile};
use renewal_sir::coupled_ibvp::{Outcome, SolverOptions};
use renewal_sir::sir_model::{simulate, validate_scenario, Scenario, Trajectory};
use renewal_sir::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidScenario = 3,
    SolverFailure = 4,
    OutOfRange = 5,
    BufferTooSmall = 6,
    Io = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RsComponent {
    Susceptible = 0,
    Infected = 1,
    Recovered = 2,
}

/// A resolved, validated scenario.
pub struct RsScenario {
    inner: Scenario,
}

/// Output of a solve. May end early at a detected blow-up.
pub struct RsTrajectory {
    inner: Trajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: RsStatus, msg: impl Into<String>) -> RsStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> RsStatus {
    let status = match e {
        Error::Io(_) => RsStatus::Io,
        e if e.is_validation() => RsStatus::InvalidScenario,
        _ => RsStatus::SolverFailure,
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> RsStatus) -> RsStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(RsStatus::Panic, "internal panic"))
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, RsStatus> {
    if s.is_null() {
        return Err(fail(RsStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(RsStatus::InvalidUtf8, "string is not UTF-8"))
}

fn build(text: &str) -> Result<Scenario, RsStatus> {
    let resolved = ScenarioFile::parse(text).and_then(|f| f.resolve()).map_err(|e| from_error(&e))?;
    let report = validate_scenario(&resolved.scenario);
    if let Some(v) = report.violations.first() {
        return Err(fail(
            RsStatus::InvalidScenario,
            format!("{} at {}: {}", v.what, v.location, v.detail),
        ));
    }
    Ok(resolved.scenario)
}

/// Message of the last failure on this thread; empty if none. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a TOML scenario.
#[no_mangle]
pub unsafe extern "C" fn rs_scenario_from_toml(
    toml: *const c_char,
    out: *mut *mut RsScenario,
) -> RsStatus {
    guard(|| {
        if out.is_null() {
            return fail(RsStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        match text(toml).and_then(build) {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(RsScenario { inner: sc }));
                RsStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Reads, parses and validates a TOML scenario file.
#[no_mangle]
pub unsafe extern "C" fn rs_scenario_from_file(
    path: *const c_char,
    out: *mut *mut RsScenario,
) -> RsStatus {
    guard(|| {
        if out.is_null() {
            return fail(RsStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let path = match text(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        let body = match std::fs::read_to_string(path) {
            Ok(b) => b,
            Err(e) => return fail(RsStatus::Io, format!("{path}: {e}")),
        };
        match build(&body) {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(RsScenario { inner: sc }));
                RsStatus::Ok
            }
            Err(s) => s,
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rs_scenario_free(scenario: *mut RsScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Runs the solver. `threads == 0` keeps everything on the calling thread.
#[no_mangle]
pub unsafe extern "C" fn rs_simulate(
    scenario: *const RsScenario,
    threads: usize,
    out: *mut *mut RsTrajectory,
) -> RsStatus {
    guard(|| {
        if scenario.is_null() || out.is_null() {
            return fail(RsStatus::NullPointer, "null argument");
        }
        *out = ptr::null_mut();
        let mut sc = (*scenario).inner.clone();
        sc.solver = SolverOptions { parallel: threads != 0, ..sc.solver };
        let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build() {
            Ok(p) => p,
            Err(e) => return fail(RsStatus::SolverFailure, e.to_string()),
        };
        match pool.install(|| simulate(&sc)) {
            Ok(t) => {
                *out = Box::into_raw(Box::new(RsTrajectory { inner: t }));
                RsStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_free(traj: *mut RsTrajectory) {
    if !traj.is_null() {
        drop(Box::from_raw(traj));
    }
}

/// 1 if the run reached the horizon, 0 if it stopped at a blow-up, -1 on null.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_completed(traj: *const RsTrajectory) -> c_int {
    match traj.as_ref() {
        None => -1,
        Some(t) => c_int::from(t.inner.is_complete()),
    }
}

/// Time at which blow-up was detected; fails with `OutOfRange` for complete runs.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_blowup_time(
    traj: *const RsTrajectory,
    out: *mut f64,
) -> RsStatus {
    let (Some(t), false) = (traj.as_ref(), out.is_null()) else {
        return fail(RsStatus::NullPointer, "null argument");
    };
    match t.inner.outcome {
        Outcome::BlowUp { time, .. } => {
            *out = time;
            RsStatus::Ok
        }
        Outcome::Completed => fail(RsStatus::OutOfRange, "the run completed"),
    }
}

/// Number of output times, 0 on null.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_time_count(traj: *const RsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| t.inner.states.len())
}

/// Number of values per profile: every grid node, interface nodes counted twice.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_node_count(traj: *const RsTrajectory) -> usize {
    traj.as_ref().map_or(0, |t| {
        let g = &t.inner.grid;
        (0..g.segment_count()).map(|j| g.segment_nodes(j)).sum()
    })
}

#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_time(
    traj: *const RsTrajectory,
    index: usize,
    out: *mut f64,
) -> RsStatus {
    let (Some(t), false) = (traj.as_ref(), out.is_null()) else {
        return fail(RsStatus::NullPointer, "null argument");
    };
    match t.inner.states.get(index) {
        Some(st) => {
            *out = st.t;
            RsStatus::Ok
        }
        None => fail(RsStatus::OutOfRange, format!("time index {index} out of range")),
    }
}

/// Integrals of S, I and R at output `index`, written to `out[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_masses(
    traj: *const RsTrajectory,
    index: usize,
    out: *mut f64,
) -> RsStatus {
    let (Some(t), false) = (traj.as_ref(), out.is_null()) else {
        return fail(RsStatus::NullPointer, "null argument");
    };
    let Some(st) = t.inner.states.get(index) else {
        return fail(RsStatus::OutOfRange, format!("time index {index} out of range"));
    };
    for (k, f) in st.fields().into_iter().enumerate() {
        *out.add(k) = f.integral();
    }
    RsStatus::Ok
}

/// Node ages in profile order, `len >= rs_trajectory_node_count`.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_ages(
    traj: *const RsTrajectory,
    buf: *mut f64,
    len: usize,
) -> RsStatus {
    let (Some(t), false) = (traj.as_ref(), buf.is_null()) else {
        return fail(RsStatus::NullPointer, "null argument");
    };
    let g = &t.inner.grid;
    let ages: Vec<f64> = (0..g.segment_count())
        .flat_map(|j| (0..g.segment_nodes(j)).map(move |m| g.node_age(j, m)))
        .collect();
    copy_out(&ages, buf, len)
}

/// Nodal values of one component at output `index`.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_profile(
    traj: *const RsTrajectory,
    index: usize,
    component: RsComponent,
    buf: *mut f64,
    len: usize,
) -> RsStatus {
    let (Some(t), false) = (traj.as_ref(), buf.is_null()) else {
        return fail(RsStatus::NullPointer, "null argument");
    };
    let Some(st) = t.inner.states.get(index) else {
        return fail(RsStatus::OutOfRange, format!("time index {index} out of range"));
    };
    let f = st.fields()[component as usize];
    let values: Vec<f64> = f.values().collect();
    copy_out(&values, buf, len)
}

unsafe fn copy_out(values: &[f64], buf: *mut f64, len: usize) -> RsStatus {
    if len < values.len() {
        return fail(
            RsStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", values.len()),
        );
    }
    ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    RsStatus::Ok
}

/// Writes `trajectory.csv` and `summary.csv` into an existing directory.
#[no_mangle]
pub unsafe extern "C" fn rs_trajectory_write_csv(
    traj: *const RsTrajectory,
    dir: *const c_char,
) -> RsStatus {
    guard(|| {
        let Some(t) = traj.as_ref() else {
            return fail(RsStatus::NullPointer, "null trajectory");
        };
        let dir = match text(dir) {
            Ok(d) => Path::new(d),
            Err(s) => return s,
        };
        write_trajectory_csv(&dir.join("trajectory.csv"), &t.inner)
            .and_then(|_| write_summary_csv(&dir.join("summary.csv"), &t.inner))
            .map_or_else(|e| from_error(&e), |_| RsStatus::Ok)
    })
}
