//! C ABI over the tamsim simulator.
//!
//! Configurations and results are opaque handles. Every function returns a
//! [`TamsimStatus`]; on failure a message is kept per thread and can be read
//! with [`tamsim_last_error`]. Strings handed out by the library are freed
//! with [`tamsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tamsim::run::{exit_code_for, run, RunConfig, RunOutcome, EXIT_CONFIG};
use tamsim::select::select_local_aggregators;

/// Result codes. The first three mirror the command-line exit statuses.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TamsimStatus {
    Ok = 0,
    /// A simulated image differed from the serial writer, or the data path failed.
    Mismatch = 1,
    /// Invalid configuration or input.
    Config = 2,
    NullArgument = 3,
    InvalidUtf8 = 4,
    BufferTooSmall = 5,
    Panic = 6,
    /// Serialization or other unexpected internal failure.
    Internal = 7,
}

/// Opaque run configuration.
pub struct TamsimConfig {
    inner: RunConfig,
}

/// Opaque result of a run.
pub struct TamsimResult {
    inner: RunOutcome,
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

fn guard(f: impl FnOnce() -> TamsimStatus) -> TamsimStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TamsimStatus::Panic
        }
    }
}

fn fail(status: TamsimStatus, msg: impl Into<String>) -> TamsimStatus {
    set_error(msg);
    status
}

fn status_for(err: &tamsim::Error) -> TamsimStatus {
    if exit_code_for(err) == EXIT_CONFIG {
        TamsimStatus::Config
    } else {
        TamsimStatus::Mismatch
    }
}

unsafe fn read_str<'a>(s: *const c_char) -> Result<&'a str, TamsimStatus> {
    if s.is_null() {
        return Err(fail(TamsimStatus::NullArgument, "string argument is null"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(TamsimStatus::InvalidUtf8, "string argument is not UTF-8"))
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next library call on the same thread.
#[no_mangle]
pub extern "C" fn tamsim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates a configuration with default values.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tamsim_config_default(out: *mut *mut TamsimConfig) -> TamsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(TamsimStatus::NullArgument, "out is null");
        }
        *out = Box::into_raw(Box::new(TamsimConfig { inner: RunConfig::default() }));
        TamsimStatus::Ok
    })
}

/// Parses a JSON configuration document. Absent fields take their
/// defaults; the configuration is validated.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer to
/// writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn tamsim_config_from_json(json: *const c_char, out: *mut *mut TamsimConfig) -> TamsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(TamsimStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match RunConfig::from_json(text).and_then(|c| c.validate().map(|_| c)) {
            Ok(c) => c,
            Err(e) => return fail(TamsimStatus::Config, e.to_string()),
        };
        *out = Box::into_raw(Box::new(TamsimConfig { inner: cfg }));
        TamsimStatus::Ok
    })
}

/// Serializes a configuration as JSON. Free the string with
/// [`tamsim_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_config_to_json(cfg: *const TamsimConfig, out: *mut *mut c_char) -> TamsimStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(TamsimStatus::NullArgument, "cfg or out is null");
        }
        to_c_string(serde_json::to_string(&(*cfg).inner), out)
    })
}

/// # Safety
/// `cfg` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tamsim_config_free(cfg: *mut TamsimConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Runs the configuration. Output paths in the configuration are ignored;
/// read results through the returned handle.
///
/// Returns `Ok` when every image matched the serial writer (or verification
/// was off) and `Mismatch` when one differed; in both cases `*out` holds a
/// result. On any other status `*out` is null.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_run(cfg: *const TamsimConfig, out: *mut *mut TamsimResult) -> TamsimStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(TamsimStatus::NullArgument, "cfg or out is null");
        }
        *out = ptr::null_mut();
        match run(&(*cfg).inner) {
            Ok(outcome) => {
                let verified = outcome.verified();
                *out = Box::into_raw(Box::new(TamsimResult { inner: outcome }));
                if verified {
                    TamsimStatus::Ok
                } else {
                    fail(TamsimStatus::Mismatch, "image differs from the serial writer")
                }
            }
            Err(e) => fail(status_for(&e), e.to_string()),
        }
    })
}

/// Writes whether every run in the result matched the serial writer.
///
/// # Safety
/// `res` must be a live handle and `verified` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_result_verified(res: *const TamsimResult, verified: *mut bool) -> TamsimStatus {
    guard(|| {
        if res.is_null() || verified.is_null() {
            return fail(TamsimStatus::NullArgument, "res or verified is null");
        }
        *verified = (*res).inner.verified();
        TamsimStatus::Ok
    })
}

/// Number of method runs in the result (two for `both`).
///
/// # Safety
/// `res` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tamsim_result_num_runs(res: *const TamsimResult) -> usize {
    res.as_ref().map_or(0, |r| r.inner.runs.len())
}

/// Full JSON report document: configuration plus one record per run.
/// Free the string with [`tamsim_string_free`].
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_result_report_json(res: *const TamsimResult, out: *mut *mut c_char) -> TamsimStatus {
    guard(|| {
        if res.is_null() || out.is_null() {
            return fail(TamsimStatus::NullArgument, "res or out is null");
        }
        *out = ptr::null_mut();
        to_c_string(serde_json::to_string(&(*res).inner.document()), out)
    })
}

/// Message trace of run `index` as JSON lines.
///
/// # Safety
/// `res` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_result_trace_jsonl(
    res: *const TamsimResult,
    index: usize,
    out: *mut *mut c_char,
) -> TamsimStatus {
    guard(|| {
        if res.is_null() || out.is_null() {
            return fail(TamsimStatus::NullArgument, "res or out is null");
        }
        *out = ptr::null_mut();
        let res = &*res;
        let Some(r) = res.inner.runs.get(index) else {
            return fail(TamsimStatus::Config, format!("run index {index} out of range"));
        };
        let mut buf = Vec::new();
        if let Err(e) = tamsim::pipeline::write_trace_jsonl(&r.pipeline.trace, &mut buf) {
            return fail(TamsimStatus::Internal, e.to_string());
        }
        to_c_string(String::from_utf8(buf).map_err(|e| e.to_string()), out)
    })
}

/// # Safety
/// `res` must be null or a handle from this library that was not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tamsim_result_free(res: *mut TamsimResult) {
    if !res.is_null() {
        drop(Box::from_raw(res));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tamsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Local aggregator positions for `c` aggregators among `q` processes on a
/// node. Writes up to `cap` ranks into `out` and the full count into
/// `*written`; returns `BufferTooSmall` when `cap` is short.
///
/// # Safety
/// `out` must point to `cap` writable elements (or be null when `cap` is 0)
/// and `written` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tamsim_select_local_aggregators(
    q: usize,
    c: usize,
    out: *mut usize,
    cap: usize,
    written: *mut usize,
) -> TamsimStatus {
    guard(|| {
        if written.is_null() || (out.is_null() && cap > 0) {
            return fail(TamsimStatus::NullArgument, "out or written is null");
        }
        let ranks = match select_local_aggregators(q, c) {
            Ok(r) => r,
            Err(e) => return fail(TamsimStatus::Config, e.to_string()),
        };
        *written = ranks.len();
        if ranks.len() > cap {
            return fail(TamsimStatus::BufferTooSmall, format!("need {} slots, got {cap}", ranks.len()));
        }
        ptr::copy_nonoverlapping(ranks.as_ptr(), out, ranks.len());
        TamsimStatus::Ok
    })
}

unsafe fn to_c_string<E: ToString>(s: Result<String, E>, out: *mut *mut c_char) -> TamsimStatus {
    *out = ptr::null_mut();
    match s.map_err(|e| e.to_string()).and_then(|s| CString::new(s).map_err(|e| e.to_string())) {
        Ok(c) => {
            *out = c.into_raw();
            TamsimStatus::Ok
        }
        Err(e) => fail(TamsimStatus::Internal, e),
    }
}
