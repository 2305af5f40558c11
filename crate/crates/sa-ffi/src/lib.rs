//! C ABI over the experiment driver: opaque handles, integer status codes,
//! and UTF-8 strings owned by this library. The header is generated into
//! `include/sa_ffi.h` at build time.

use sa_core::experiments::{
    parse_config, run_experiment, ConfigOverrides, ExperimentConfig, ExperimentReport,
};
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

/// Status code returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SaStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    RunFailed = 4,
}

/// Opaque experiment configuration.
pub struct SaConfig {
    inner: ExperimentConfig,
}

/// Opaque experiment report.
pub struct SaReport {
    inner: ExperimentReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let cstring = CString::new(message).unwrap_or_else(|_| CString::new("invalid error").unwrap());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(cstring));
}

/// Message for the most recent error on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sa_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map(|s| s.as_ptr())
            .unwrap_or(ptr::null())
    })
}

unsafe fn utf8_arg<'a>(ptr: *const c_char) -> Result<&'a str, SaStatus> {
    if ptr.is_null() {
        return Err(SaStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("argument is not valid UTF-8".into());
        SaStatus::InvalidUtf8
    })
}

/// Build a configuration from a JSON document (same schema as the CLI's
/// `--config` file; `experiment` is required).
///
/// # Safety
/// `json` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_config_from_json(
    json: *const c_char,
    out: *mut *mut SaConfig,
) -> SaStatus {
    if out.is_null() {
        return SaStatus::NullArgument;
    }
    let text = match utf8_arg(json) {
        Ok(t) => t,
        Err(status) => return status,
    };
    let overrides: ConfigOverrides = match serde_json_from_str(text) {
        Ok(o) => o,
        Err(message) => {
            set_error(message);
            return SaStatus::InvalidConfig;
        }
    };
    match resolve(&overrides) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(SaConfig { inner: cfg }));
            SaStatus::Ok
        }
        Err(message) => {
            set_error(message);
            SaStatus::InvalidConfig
        }
    }
}

// kept out of the unsafe fn so the JSON path is unit-testable from Rust
fn serde_json_from_str(text: &str) -> Result<ConfigOverrides, String> {
    // reuse the file-parsing path of the core crate via a temp-free route:
    // ConfigOverrides implements Deserialize with the documented flat keys
    use sa_core::experiments::ConfigOverrides as Overrides;
    let parsed: Result<Overrides, _> = serde_json::from_str(text);
    parsed.map_err(|e| format!("config JSON at line {}, column {}: {e}", e.line(), e.column()))
}

fn resolve(overrides: &ConfigOverrides) -> Result<ExperimentConfig, String> {
    let no_file: Option<&Path> = None;
    parse_config(no_file, overrides).map_err(|e| e.to_string())
}

/// Build the default configuration for a named experiment.
///
/// # Safety
/// `experiment` must be a valid NUL-terminated string and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn sa_config_default(
    experiment: *const c_char,
    out: *mut *mut SaConfig,
) -> SaStatus {
    if out.is_null() {
        return SaStatus::NullArgument;
    }
    let name = match utf8_arg(experiment) {
        Ok(n) => n,
        Err(status) => return status,
    };
    let overrides = ConfigOverrides {
        experiment: Some(name.to_string()),
        ..Default::default()
    };
    match resolve(&overrides) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(SaConfig { inner: cfg }));
            SaStatus::Ok
        }
        Err(message) => {
            set_error(message);
            SaStatus::InvalidConfig
        }
    }
}

/// # Safety
/// `config` must come from a `sa_config_*` constructor, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sa_config_free(config: *mut SaConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured experiment. Divergence inside a study is recorded in
/// the rows, never an error.
///
/// # Safety
/// `config` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_run_experiment(
    config: *const SaConfig,
    out: *mut *mut SaReport,
) -> SaStatus {
    if config.is_null() || out.is_null() {
        return SaStatus::NullArgument;
    }
    match run_experiment(&(*config).inner) {
        Ok(report) => {
            *out = Box::into_raw(Box::new(SaReport { inner: report }));
            SaStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            SaStatus::RunFailed
        }
    }
}

/// # Safety
/// `report` must come from `sa_run_experiment`, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sa_report_free(report: *mut SaReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn report_string(
    report: *const SaReport,
    out: *mut *mut c_char,
    render: impl Fn(&ExperimentReport) -> String,
) -> SaStatus {
    if report.is_null() || out.is_null() {
        return SaStatus::NullArgument;
    }
    let body = render(&(*report).inner);
    match CString::new(body) {
        Ok(cstring) => {
            *out = cstring.into_raw();
            SaStatus::Ok
        }
        Err(_) => {
            set_error("report contains interior NUL".into());
            SaStatus::RunFailed
        }
    }
}

/// Render the report as CSV. The caller owns the string and must release it
/// with `sa_string_free`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_report_to_csv(
    report: *const SaReport,
    out: *mut *mut c_char,
) -> SaStatus {
    report_string(report, out, ExperimentReport::to_csv)
}

/// Render the report as JSON (records plus meta block). Caller owns the
/// string; release with `sa_string_free`.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sa_report_to_json(
    report: *const SaReport,
    out: *mut *mut c_char,
) -> SaStatus {
    report_string(report, out, ExperimentReport::to_json)
}

/// # Safety
/// `s` must come from this library, and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn sa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sa_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}
