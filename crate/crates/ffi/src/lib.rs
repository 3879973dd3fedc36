//! C ABI over the closed-loop harness.
//!
//! Configs and reports cross the boundary as opaque handles created and freed here.
//! Every entry point returns a [`UnimpcStatus`]; on failure a description is kept per
//! thread and read with [`unimpc_last_error`]. Panics are caught at the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use unimpc::harness::{presets, run_closed_loop, write_report, RunConfig, RunReport, RunStatus, Target};
use unimpc::{selftest, Error};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnimpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Numeric = 5,
    Invalid = 6,
    /// An output buffer is shorter than the data.
    BufferTooSmall = 7,
    OutOfRange = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnimpcRunState {
    Completed = 0,
    /// Every sample ran but the lap target was not reached.
    Incomplete = 1,
    Aborted = 2,
}

/// Rollout averages of a report.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UnimpcAggregates {
    pub samples: usize,
    pub n_it: f64,
    pub delta_r_avg: f64,
    pub r_avg: f64,
    pub max_violation: f64,
    pub t_prep_us: f64,
    pub t_fb_us: f64,
}

/// Opaque run configuration.
pub struct UnimpcConfig(RunConfig);

/// Opaque closed-loop report.
pub struct UnimpcReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> UnimpcStatus {
    match e {
        Error::Config(_) => UnimpcStatus::Config,
        Error::Io { .. } => UnimpcStatus::Io,
        Error::NumericFailure { .. } | Error::Aborted { .. } => UnimpcStatus::Numeric,
        _ => UnimpcStatus::Invalid,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), UnimpcStatus>) -> UnimpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UnimpcStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            UnimpcStatus::Panic
        }
    }
}

fn fail(e: Error) -> UnimpcStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> UnimpcStatus {
    set_error(format!("{what} is null"));
    UnimpcStatus::NullPointer
}

/// # Safety
/// `p` is null or a NUL-terminated string.
unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, UnimpcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        UnimpcStatus::InvalidUtf8
    })
}

/// # Safety
/// `p` is null or points to a live value of type `T`.
unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, UnimpcStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

fn put<T>(out: *mut *mut T, value: T) -> Result<(), UnimpcStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    // SAFETY: checked non-null; the caller provides a writable slot.
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

/// Last error message of the calling thread, or null when no call has failed yet.
///
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn unimpc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Parses a TOML run configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_from_toml(toml: *const c_char, out: *mut *mut UnimpcConfig) -> UnimpcStatus {
    guard(|| {
        let text = str_arg(toml, "toml")?;
        let cfg = RunConfig::from_toml_str(text).map_err(fail)?;
        put(out, UnimpcConfig(cfg))
    })
}

/// Loads a TOML run configuration; a relative track path resolves against the file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_load(path: *const c_char, out: *mut *mut UnimpcConfig) -> UnimpcStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let cfg = RunConfig::load(Path::new(p)).map_err(fail)?;
        put(out, UnimpcConfig(cfg))
    })
}

/// Number of runs behind a reproduction target (`fig1`, `fig2`, `table2`, `mpcc`).
///
/// # Safety
/// `target` must be a NUL-terminated string and `count` writable.
#[no_mangle]
pub unsafe extern "C" fn unimpc_preset_count(target: *const c_char, count: *mut usize) -> UnimpcStatus {
    guard(|| {
        let t: Target = str_arg(target, "target")?.parse().map_err(fail)?;
        let c = count.as_mut().ok_or_else(|| null("count"))?;
        *c = presets(t, 0).len();
        Ok(())
    })
}

/// Run `index` of a reproduction target as a config handle.
///
/// # Safety
/// `target` must be a NUL-terminated string and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_preset(
    target: *const c_char,
    index: usize,
    seed: u64,
    out: *mut *mut UnimpcConfig,
) -> UnimpcStatus {
    guard(|| {
        let t: Target = str_arg(target, "target")?.parse().map_err(fail)?;
        let cfg = presets(t, seed).into_iter().nth(index).ok_or_else(|| {
            set_error(format!("preset index {index} out of range"));
            UnimpcStatus::OutOfRange
        })?;
        put(out, UnimpcConfig(cfg))
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_set_seed(cfg: *mut UnimpcConfig, seed: u64) -> UnimpcStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        c.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_set_steps(cfg: *mut UnimpcConfig, steps: usize) -> UnimpcStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(|| null("config"))?;
        let mut next = c.0.clone();
        next.steps = steps;
        next.validate().map_err(fail)?;
        c.0 = next;
        Ok(())
    })
}

/// Serializes a config to TOML. Free the string with [`unimpc_string_free`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_to_toml(cfg: *const UnimpcConfig, out: *mut *mut c_char) -> UnimpcStatus {
    guard(|| {
        let c = handle(cfg, "config")?;
        let text = c.0.to_toml_string().map_err(fail)?;
        let s = CString::new(text).map_err(|_| {
            set_error("config text contains NUL".into());
            UnimpcStatus::Invalid
        })?;
        let slot = out.as_mut().ok_or_else(|| null("output pointer"))?;
        *slot = s.into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` is null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn unimpc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn unimpc_config_free(cfg: *mut UnimpcConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

/// Simulates the closed loop. An engine abort still yields a report; check
/// [`unimpc_report_state`].
///
/// # Safety
/// `cfg` must be a live handle and `out` a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn unimpc_run(cfg: *const UnimpcConfig, out: *mut *mut UnimpcReport) -> UnimpcStatus {
    guard(|| {
        let c = handle(cfg, "config")?;
        let report = run_closed_loop(&c.0).map_err(fail)?;
        put(out, UnimpcReport(report))
    })
}

/// Run state; `abort_step` (optional) receives the sample index of an abort.
///
/// # Safety
/// `report` must be a live handle; `state` writable; `abort_step` null or writable.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_state(
    report: *const UnimpcReport,
    state: *mut UnimpcRunState,
    abort_step: *mut usize,
) -> UnimpcStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let s = state.as_mut().ok_or_else(|| null("state"))?;
        *s = match &r.0.status {
            RunStatus::Completed => UnimpcRunState::Completed,
            RunStatus::Incomplete => UnimpcRunState::Incomplete,
            RunStatus::Aborted { k, reason } => {
                if let Some(a) = abort_step.as_mut() {
                    *a = *k;
                }
                set_error(format!("aborted at sample {k}: {reason}"));
                UnimpcRunState::Aborted
            }
        };
        Ok(())
    })
}

/// # Safety
/// `report` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_aggregates(report: *const UnimpcReport, out: *mut UnimpcAggregates) -> UnimpcStatus {
    guard(|| {
        let a = &handle(report, "report")?.0.aggregates;
        let o = out.as_mut().ok_or_else(|| null("aggregates"))?;
        *o = UnimpcAggregates {
            samples: a.samples,
            n_it: a.n_it,
            delta_r_avg: a.delta_r_avg,
            r_avg: a.r_avg,
            max_violation: a.max_violation,
            t_prep_us: a.t_prep_us,
            t_fb_us: a.t_fb_us,
        };
        Ok(())
    })
}

/// State and input dimensions and the number of recorded samples.
///
/// # Safety
/// `report` must be a live handle; each output is null or writable.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_dims(
    report: *const UnimpcReport,
    n_x: *mut usize,
    n_u: *mut usize,
    samples: *mut usize,
) -> UnimpcStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        for (p, v) in [(n_x, r.n_x), (n_u, r.n_u), (samples, r.samples.len())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `buf` must hold `len` doubles.
unsafe fn copy_out(src: &[f64], buf: *mut f64, len: usize) -> Result<(), UnimpcStatus> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < src.len() {
        set_error(format!("buffer holds {len} values, {} needed", src.len()));
        return Err(UnimpcStatus::BufferTooSmall);
    }
    std::ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

/// State after the last applied input; `buf` needs `n_x` entries.
///
/// # Safety
/// `report` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_final_state(report: *const UnimpcReport, buf: *mut f64, len: usize) -> UnimpcStatus {
    guard(|| copy_out(&handle(report, "report")?.0.final_state, buf, len))
}

/// Measured state and applied input of sample `k`; `x` needs `n_x` and `u` needs `n_u` entries.
///
/// # Safety
/// `report` must be a live handle; `x` and `u` must hold `n_x` and `n_u` doubles.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_sample(
    report: *const UnimpcReport,
    k: usize,
    x: *mut f64,
    n_x: usize,
    u: *mut f64,
    n_u: usize,
    n_it: *mut usize,
) -> UnimpcStatus {
    guard(|| {
        let r = &handle(report, "report")?.0;
        let s = r.samples.get(k).ok_or_else(|| {
            set_error(format!("sample {k} of {}", r.samples.len()));
            UnimpcStatus::OutOfRange
        })?;
        copy_out(&s.x, x, n_x)?;
        copy_out(&s.u, u, n_u)?;
        if let Some(p) = n_it.as_mut() {
            *p = s.n_it;
        }
        Ok(())
    })
}

/// Writes `trace.csv`, `rollout.csv`, `summary.json`, `fig1_data.csv` and `fig2_data.csv` into `dir`.
///
/// # Safety
/// `report` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_write(report: *const UnimpcReport, dir: *const c_char) -> UnimpcStatus {
    guard(|| {
        let r = handle(report, "report")?;
        let d = str_arg(dir, "dir")?;
        write_report(&r.0, Path::new(d)).map_err(fail)?;
        Ok(())
    })
}

/// # Safety
/// `report` is null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn unimpc_report_free(report: *mut UnimpcReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Runs the numerical self-checks; `failed` receives the number of failing checks.
///
/// # Safety
/// `failed` must be writable.
#[no_mangle]
pub unsafe extern "C" fn unimpc_selftest(seed: u64, failed: *mut usize) -> UnimpcStatus {
    guard(|| {
        let f = failed.as_mut().ok_or_else(|| null("failed"))?;
        let checks = selftest::run(seed).map_err(fail)?;
        *f = checks.iter().filter(|c| !c.passed()).count();
        if let Some(c) = checks.iter().find(|c| !c.passed()) {
            set_error(format!("{}: {:.2e} > {:.0e}", c.name, c.error, c.tol));
        }
        Ok(())
    })
}
