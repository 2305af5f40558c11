//! Exercises the C ABI from Rust exactly as an external caller would:
//! through the exported symbols, raw pointers, and status codes.

use sa_ffi::{
    sa_config_default, sa_config_free, sa_config_from_json, sa_last_error, sa_report_free,
    sa_report_to_csv, sa_report_to_json, sa_run_experiment, sa_string_free, sa_version, SaConfig,
    SaReport, SaStatus,
};
use std::ffi::{c_char, CStr, CString};
use std::ptr;

unsafe fn take_string(raw: *mut c_char) -> String {
    assert!(!raw.is_null());
    let s = CStr::from_ptr(raw).to_str().unwrap().to_string();
    sa_string_free(raw);
    s
}

unsafe fn last_error_string() -> String {
    let raw = sa_last_error();
    assert!(!raw.is_null(), "expected an error message");
    CStr::from_ptr(raw).to_str().unwrap().to_string()
}

#[test]
fn default_config_runs_and_renders() {
    unsafe {
        let name = CString::new("lms-compare").unwrap();
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(sa_config_default(name.as_ptr(), &mut config), SaStatus::Ok);
        assert!(!config.is_null());

        let mut report: *mut SaReport = ptr::null_mut();
        assert_eq!(sa_run_experiment(config, &mut report), SaStatus::Ok);
        assert!(!report.is_null());

        let mut csv: *mut c_char = ptr::null_mut();
        assert_eq!(sa_report_to_csv(report, &mut csv), SaStatus::Ok);
        let csv = take_string(csv);
        assert!(csv.starts_with("step,max_abs_diff\n"));
        assert_eq!(csv.lines().count(), 10_001);

        let mut json: *mut c_char = ptr::null_mut();
        assert_eq!(sa_report_to_json(report, &mut json), SaStatus::Ok);
        let json = take_string(json);
        let doc: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(doc["meta"]["config"]["experiment"], "lms-compare");
        assert_eq!(doc["rows"].as_array().unwrap().len(), 10_000);

        sa_report_free(report);
        sa_config_free(config);
    }
}

#[test]
fn json_config_overrides_defaults_and_runs() {
    unsafe {
        let json = CString::new(
            r#"{"experiment": "quantile-fig", "replications": 3, "horizon": 200,
                "gamma1_grid": [1.0], "K": 25, "seed": 7}"#,
        )
        .unwrap();
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(
            sa_config_from_json(json.as_ptr(), &mut config),
            SaStatus::Ok
        );

        let mut report: *mut SaReport = ptr::null_mut();
        assert_eq!(sa_run_experiment(config, &mut report), SaStatus::Ok);
        let mut csv: *mut c_char = ptr::null_mut();
        assert_eq!(sa_report_to_csv(report, &mut csv), SaStatus::Ok);
        let csv = take_string(csv);
        // header + 3 replications x 2 methods x 1 gamma1
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("gamma1,method,replication,final_theta,diverged,stuck\n"));

        sa_report_free(report);
        sa_config_free(config);
    }
}

#[test]
fn same_config_gives_identical_bytes_across_handles() {
    unsafe {
        let run = || {
            let json = CString::new(
                r#"{"experiment": "sim-expfam", "replications": 2, "horizon": 50, "workers": 2}"#,
            )
            .unwrap();
            let mut config: *mut SaConfig = ptr::null_mut();
            assert_eq!(
                sa_config_from_json(json.as_ptr(), &mut config),
                SaStatus::Ok
            );
            let mut report: *mut SaReport = ptr::null_mut();
            assert_eq!(sa_run_experiment(config, &mut report), SaStatus::Ok);
            let mut csv: *mut c_char = ptr::null_mut();
            assert_eq!(sa_report_to_csv(report, &mut csv), SaStatus::Ok);
            let csv = take_string(csv);
            sa_report_free(report);
            sa_config_free(config);
            csv
        };
        assert_eq!(run(), run());
    }
}

#[test]
fn unknown_experiment_reports_invalid_config() {
    unsafe {
        let name = CString::new("quintile-fog").unwrap();
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(
            sa_config_default(name.as_ptr(), &mut config),
            SaStatus::InvalidConfig
        );
        assert!(config.is_null());
        assert!(last_error_string().contains("quintile-fog"));
    }
}

#[test]
fn malformed_json_names_the_location() {
    unsafe {
        let json = CString::new("{\"experiment\": \"rates\",\n  \"horizon\": }").unwrap();
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(
            sa_config_from_json(json.as_ptr(), &mut config),
            SaStatus::InvalidConfig
        );
        let message = last_error_string();
        assert!(message.contains("line 2"), "message: {message}");
    }
}

#[test]
fn invalid_values_are_rejected_with_message() {
    unsafe {
        let json = CString::new(r#"{"experiment": "rates", "gamma": 0.3}"#).unwrap();
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(
            sa_config_from_json(json.as_ptr(), &mut config),
            SaStatus::InvalidConfig
        );
        assert!(last_error_string().contains("gamma"));
    }
}

#[test]
fn null_arguments_are_status_not_crash() {
    unsafe {
        let mut config: *mut SaConfig = ptr::null_mut();
        assert_eq!(
            sa_config_default(ptr::null(), &mut config),
            SaStatus::NullArgument
        );
        let name = CString::new("rates").unwrap();
        assert_eq!(
            sa_config_default(name.as_ptr(), ptr::null_mut()),
            SaStatus::NullArgument
        );
        let mut report: *mut SaReport = ptr::null_mut();
        assert_eq!(
            sa_run_experiment(ptr::null(), &mut report),
            SaStatus::NullArgument
        );
        let mut out: *mut c_char = ptr::null_mut();
        assert_eq!(
            sa_report_to_csv(ptr::null(), &mut out),
            SaStatus::NullArgument
        );
        // freeing null is a no-op
        sa_config_free(ptr::null_mut());
        sa_report_free(ptr::null_mut());
        sa_string_free(ptr::null_mut());
    }
}

#[test]
fn version_matches_crate() {
    unsafe {
        let v = CStr::from_ptr(sa_version()).to_str().unwrap();
        assert_eq!(v, env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn generated_header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/include/sa_ffi.h"
    ))
    .unwrap();
    for symbol in [
        "sa_config_default",
        "sa_config_from_json",
        "sa_config_free",
        "sa_run_experiment",
        "sa_report_to_csv",
        "sa_report_to_json",
        "sa_report_free",
        "sa_string_free",
        "sa_last_error",
        "sa_version",
        "SaStatus",
    ] {
        assert!(header.contains(symbol), "header missing {symbol}");
    }
}
