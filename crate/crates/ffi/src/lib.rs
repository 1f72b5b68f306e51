//! C ABI over the `aggrevated` library.
//!
//! Objects cross the boundary as opaque handles. Every entry point returns an
//! [`AgvStatus`]; on failure the message is available from
//! [`agv_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use aggrevated::cli::{self, RunReport};
use aggrevated::config::{self, ExperimentConfig};
use aggrevated::{verify, Error};

/// Result codes shared by all functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AgvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Config = 4,
    Numeric = 5,
    Io = 6,
    OutOfRange = 7,
    Internal = 8,
    Panic = 9,
}

/// Parsed experiment configuration.
pub struct AgvConfig(ExperimentConfig);

/// Completed run with its regret curve.
pub struct AgvRun(RunReport);

/// One row of a regret curve.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct AgvRecord {
    pub episode: usize,
    pub mu_pi: f64,
    pub mu_star: f64,
    pub inst_regret: f64,
    pub cum_regret: f64,
    pub wall_ms: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> AgvStatus {
    match err {
        Error::Parse { .. } => AgvStatus::Parse,
        Error::Config(_) | Error::Unsupported(_) => AgvStatus::Config,
        Error::Io(_) => AgvStatus::Io,
        Error::Range(_) => AgvStatus::OutOfRange,
        e if e.is_numeric() => AgvStatus::Numeric,
        _ => AgvStatus::Internal,
    }
}

fn guard(f: impl FnOnce() -> Result<(), AgvStatus>) -> AgvStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AgvStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("panic inside aggrevated");
            AgvStatus::Panic
        }
    }
}

fn lib_err(err: Error) -> AgvStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, AgvStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(AgvStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        AgvStatus::InvalidUtf8
    })
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, AgvStatus> {
    p.as_ref().ok_or_else(|| {
        set_error(format!("{what} is null"));
        AgvStatus::NullPointer
    })
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), AgvStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(AgvStatus::NullPointer);
    }
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next call into the library from this thread.
#[no_mangle]
pub extern "C" fn agv_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn agv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses configuration text. Free the result with [`agv_config_free`].
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_config_parse(text: *const c_char, out: *mut *mut AgvConfig) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(text, "text")?;
        let cfg = config::parse(text).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AgvConfig(cfg)));
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from [`agv_config_parse`] or be null.
#[no_mangle]
pub unsafe extern "C" fn agv_config_free(cfg: *mut AgvConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Renders the fully resolved configuration. Free the string with
/// [`agv_string_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_config_render(cfg: *const AgvConfig, out: *mut *mut c_char) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let text = CString::new(config::render(&cfg.0)).map_err(|_| {
            set_error("rendered config contains NUL");
            AgvStatus::Internal
        })?;
        *out = text.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn agv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Runs the configured experiment in memory. Free the result with
/// [`agv_run_free`].
///
/// # Safety
/// `cfg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_run(cfg: *const AgvConfig, out: *mut *mut AgvRun) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let cfg = ref_arg(cfg, "cfg")?;
        let report = cli::execute(&cfg.0).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(AgvRun(report)));
        Ok(())
    })
}

/// Runs the experiment and writes the usual output files into `dir`.
/// `out` may be null when the caller only wants the files.
///
/// # Safety
/// `cfg` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn agv_run_to_dir(cfg: *const AgvConfig, dir: *const c_char, out: *mut *mut AgvRun) -> AgvStatus {
    guard(|| {
        let cfg = ref_arg(cfg, "cfg")?;
        let dir = str_arg(dir, "dir")?;
        let report = cli::run_to_dir(&cfg.0, Path::new(dir)).map_err(lib_err)?;
        if !out.is_null() {
            *out = Box::into_raw(Box::new(AgvRun(report)));
        }
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`agv_run`] / [`agv_run_to_dir`] or be null.
#[no_mangle]
pub unsafe extern "C" fn agv_run_free(run: *mut AgvRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of episodes recorded.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_run_len(run: *const AgvRun, out: *mut usize) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ref_arg(run, "run")?.0.curve.records.len();
        Ok(())
    })
}

/// Copies record `index` (0-based) into `out`.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_run_record(run: *const AgvRun, index: usize, out: *mut AgvRecord) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let run = ref_arg(run, "run")?;
        let r = run.0.curve.records.get(index).ok_or_else(|| {
            set_error(format!("record {index} out of range (len {})", run.0.curve.records.len()));
            AgvStatus::OutOfRange
        })?;
        *out = AgvRecord {
            episode: r.episode,
            mu_pi: r.mu_pi,
            mu_star: r.mu_star,
            inst_regret: r.inst_regret,
            cum_regret: r.cum_regret,
            wall_ms: r.wall_ms,
        };
        Ok(())
    })
}

/// Cumulative regret after the last episode.
///
/// # Safety
/// `run` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_run_final_regret(run: *const AgvRun, out: *mut f64) -> AgvStatus {
    guard(|| {
        out_arg(out, "out")?;
        let run = ref_arg(run, "run")?;
        let last = run.0.curve.records.last().ok_or_else(|| {
            set_error("run has no episodes");
            AgvStatus::OutOfRange
        })?;
        *out = last.cum_regret;
        Ok(())
    })
}

/// Runs acceptance criterion `id` (1..=14) and stores 1 in `passed` on
/// success, 0 otherwise. The detail line is left in the last-error slot.
///
/// # Safety
/// `passed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn agv_verify_criterion(id: u32, passed: *mut i32) -> AgvStatus {
    guard(|| {
        out_arg(passed, "passed")?;
        if !(1..=14).contains(&id) {
            set_error(format!("no criterion {id}"));
            return Err(AgvStatus::OutOfRange);
        }
        let r = verify::run_criterion(id);
        *passed = i32::from(r.passed);
        set_error(r.to_string());
        Ok(())
    })
}
