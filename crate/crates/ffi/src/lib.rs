//! C interface to `vpbound`.
//!
//! Objects cross the boundary as opaque handles that the caller releases with
//! the matching `*_free` function. Every fallible call returns a [`VpStatus`];
//! on failure a description is available from [`vp_last_error_message`] on the
//! same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vpbound::bounds::{choose_exponents, sigma_ugly_integral};
use vpbound::error::ErrorClass;
use vpbound::report::ClauseStatus;
use vpbound::run::{self, RunOutput};
use vpbound::scenario::{load_scenario, parse_scenario, ValidatedScenario};
use vpbound::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Validation = 3,
    Numerical = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Opaque handle to a parsed and validated scenario.
pub struct VpScenario {
    inner: ValidatedScenario,
}

/// Opaque handle to the in-memory results of a run.
pub struct VpRun {
    inner: RunOutput,
}

/// One row of the per-snapshot diagnostics, without the norm columns.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VpDiagnosticsRow {
    pub time: f64,
    pub qf_lower: f64,
    pub qg: f64,
    pub energy_total: f64,
    pub tail_energy: f64,
    pub sup_e: f64,
    pub sup_grad_e: f64,
    pub picard_iters: usize,
    pub picard_residual: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct VpExponents {
    pub q: f64,
    pub a: f64,
    pub b: f64,
    pub m_small: f64,
    pub m_large: f64,
    pub n_small: f64,
    pub n_large: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> VpStatus {
    match err.class() {
        ErrorClass::Validation => VpStatus::Validation,
        ErrorClass::Numerical => VpStatus::Numerical,
        ErrorClass::Io => VpStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> Result<(), VpStatus>) -> VpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => VpStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            VpStatus::Panic
        }
    }
}

fn fail(err: Error) -> VpStatus {
    set_error(err.to_string());
    status_of(&err)
}

fn null() -> VpStatus {
    set_error("null pointer argument");
    VpStatus::NullPointer
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, VpStatus> {
    if s.is_null() {
        return Err(null());
    }
    CStr::from_ptr(s).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        VpStatus::InvalidUtf8
    })
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Parses and validates scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_scenario_parse(text: *const c_char, out: *mut *mut VpScenario) -> VpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let text = read_str(text)?;
        let inner = parse_scenario(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(VpScenario { inner }));
        Ok(())
    })
}

/// Loads and validates a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_scenario_load(path: *const c_char, out: *mut *mut VpScenario) -> VpStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let path = read_str(path)?;
        let inner = load_scenario(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(VpScenario { inner }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from `vp_scenario_parse`/`vp_scenario_load` or be null.
#[no_mangle]
pub unsafe extern "C" fn vp_scenario_free(scenario: *mut VpScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Counts condition clauses by status: passed, failed, and documented
/// deviations.
///
/// # Safety
/// `scenario` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn vp_scenario_clause_counts(
    scenario: *const VpScenario,
    passed: *mut usize,
    failed: *mut usize,
    deviates: *mut usize,
) -> VpStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(null)?;
        let mut counts = [0usize; 3];
        for c in s.inner.reports.iter().flat_map(|r| &r.clauses) {
            counts[match c.status {
                ClauseStatus::Pass => 0,
                ClauseStatus::Fail => 1,
                ClauseStatus::Deviates => 2,
            }] += 1;
        }
        for (p, n) in [passed, failed, deviates].into_iter().zip(counts) {
            if !p.is_null() {
                *p = n;
            }
        }
        Ok(())
    })
}

/// Solves the scenario. When `out_dir` is non-null the output files are
/// written there as well.
///
/// # Safety
/// `scenario` must be a live handle, `out_dir` null or a NUL-terminated
/// string, and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_run_execute(
    scenario: *const VpScenario,
    out_dir: *const c_char,
    out: *mut *mut VpRun,
) -> VpStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let inner = if out_dir.is_null() {
            run::execute(&s.inner)
        } else {
            run::run(&s.inner, Path::new(read_str(out_dir)?))
        }
        .map_err(fail)?;
        *out = Box::into_raw(Box::new(VpRun { inner }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from `vp_run_execute` or be null.
#[no_mangle]
pub unsafe extern "C" fn vp_run_free(run: *mut VpRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of snapshots in a run, or 0 for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vp_run_snapshot_count(run: *const VpRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.records.len())
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_run_row(run: *const VpRun, index: usize, out: *mut VpDiagnosticsRow) -> VpStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let rec = r.inner.records.get(index).ok_or_else(|| {
            set_error(format!("snapshot {index} out of range"));
            VpStatus::OutOfRange
        })?;
        *out = VpDiagnosticsRow {
            time: rec.time,
            qf_lower: rec.qf_lower,
            qg: rec.qg,
            energy_total: rec.energy_total,
            tail_energy: rec.tail_energy,
            sup_e: rec.sup_e,
            sup_grad_e: rec.sup_grad_e,
            picard_iters: rec.picard_iters,
            picard_residual: rec.picard_residual,
        };
        Ok(())
    })
}

/// Weighted norm `norm_index` (in the order of the scenario's q list) at
/// snapshot `index`.
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_run_norm(run: *const VpRun, index: usize, norm_index: usize, out: *mut f64) -> VpStatus {
    guard(|| {
        let r = run.as_ref().ok_or_else(null)?;
        let out = out.as_mut().ok_or_else(null)?;
        let n = r
            .inner
            .records
            .get(index)
            .and_then(|rec| rec.norms.get(norm_index))
            .ok_or_else(|| {
                set_error(format!("norm ({index}, {norm_index}) out of range"));
                VpStatus::OutOfRange
            })?;
        *out = n.value;
        Ok(())
    })
}

/// Summary of the run as a JSON string, released with [`vp_string_free`].
/// Returns null on a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn vp_run_summary_json(run: *const VpRun) -> *mut c_char {
    let Some(r) = run.as_ref() else {
        set_error("null pointer argument");
        return ptr::null_mut();
    };
    match serde_json::to_string(&r.inner.summary) {
        Ok(s) => CString::new(s).map_or(ptr::null_mut(), CString::into_raw),
        Err(e) => {
            set_error(e.to_string());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `s` must come from a `vpbound` function returning an owned string, or be
/// null.
#[no_mangle]
pub unsafe extern "C" fn vp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_choose_exponents(q: f64, out: *mut VpExponents) -> VpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        let s = choose_exponents(q).map_err(fail)?;
        *out = VpExponents {
            q: s.q,
            a: s.a,
            b: s.b,
            m_small: s.m_small,
            m_large: s.m_large,
            n_small: s.n_small,
            n_large: s.n_large,
        };
        Ok(())
    })
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn vp_sigma_ugly_integral(p: f64, r: f64, out: *mut f64) -> VpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(null)?;
        *out = sigma_ugly_integral(p, r).map_err(fail)?;
        Ok(())
    })
}
