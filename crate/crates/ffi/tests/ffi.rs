use std::ffi::{CStr, CString};
use std::ptr;

use lyapgen_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_owned();
    lyapgen_string_free(p);
    s
}

unsafe fn system(name: &str) -> *mut LyapgenSystem {
    let mut sys = ptr::null_mut();
    assert_eq!(lyapgen_system_new(c(name).as_ptr(), &mut sys), LyapgenStatus::Ok);
    sys
}

unsafe fn expr(text: &str) -> *mut LyapgenExpr {
    let mut e = ptr::null_mut();
    assert_eq!(lyapgen_expr_parse(c(text).as_ptr(), &mut e), LyapgenStatus::Ok);
    e
}

#[test]
fn system_lookup_and_errors() {
    unsafe {
        let sys = system("power_3bus");
        assert_eq!(lyapgen_system_dim(sys), 6);
        lyapgen_system_free(sys);

        let mut out = ptr::null_mut();
        assert_eq!(lyapgen_system_new(c("nosuch").as_ptr(), &mut out), LyapgenStatus::UnknownSystem);
        assert!(out.is_null());
        assert!(take_string(lyapgen_last_error_message()).contains("nosuch"));

        assert_eq!(lyapgen_system_new(ptr::null(), &mut out), LyapgenStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(lyapgen_system_new(bad.as_ptr().cast(), &mut out), LyapgenStatus::InvalidUtf8);
        assert_eq!(lyapgen_system_dim(ptr::null()), 0);
        lyapgen_system_free(ptr::null_mut());
    }
}

#[test]
fn expression_round_trip_and_eval() {
    unsafe {
        let e = expr("x1^2 + 3*x2");
        let text = take_string(lyapgen_expr_to_string(e));
        let again = expr(&text);
        let x = [2.0, -1.0];
        let (mut a, mut b) = (0.0, 0.0);
        assert_eq!(lyapgen_expr_eval(e, x.as_ptr(), 2, &mut a), LyapgenStatus::Ok);
        assert_eq!(lyapgen_expr_eval(again, x.as_ptr(), 2, &mut b), LyapgenStatus::Ok);
        assert_eq!(a, 1.0);
        assert_eq!(a, b);
        assert_eq!(lyapgen_expr_eval(e, x.as_ptr(), 1, &mut a), LyapgenStatus::DimensionMismatch);
        lyapgen_expr_free(e);
        lyapgen_expr_free(again);

        let mut out = ptr::null_mut();
        assert_eq!(lyapgen_expr_parse(c("x1 +").as_ptr(), &mut out), LyapgenStatus::Parse);
        let pole = expr("1/x1");
        assert_eq!(lyapgen_expr_eval(pole, [0.0].as_ptr(), 1, &mut a), LyapgenStatus::Failed);
        lyapgen_expr_free(pole);
    }
}

#[test]
fn lie_derivative_on_path_following() {
    unsafe {
        let sys = system("path_following");
        let v = expr("x1^2 + x2^2/2");
        let mut lie = ptr::null_mut();
        assert_eq!(lyapgen_lie_derivative(sys, v, &mut lie), LyapgenStatus::Ok);
        let mut val = 0.0;
        assert_eq!(lyapgen_expr_eval(lie, [0.3, 0.7].as_ptr(), 2, &mut val), LyapgenStatus::Ok);
        assert!((val + 0.49).abs() < 1e-12, "{val}");
        lyapgen_expr_free(lie);

        let wide = expr("x3^2");
        assert_eq!(lyapgen_lie_derivative(sys, wide, &mut lie), LyapgenStatus::DimensionMismatch);
        lyapgen_expr_free(wide);
        lyapgen_expr_free(v);
        lyapgen_system_free(sys);
    }
}

#[test]
fn verify_reports_verdicts_and_counterexamples() {
    unsafe {
        let sys = system("van_der_pol");
        let good = expr("x1^2 + x2^2");
        let mut rep = ptr::null_mut();
        assert_eq!(lyapgen_verify(sys, good, 1e-4, 5000, 0, &mut rep), LyapgenStatus::Ok);
        let mut verdict = LyapgenVerdict::Invalid;
        assert_eq!(lyapgen_report_verdict(rep, &mut verdict), LyapgenStatus::Ok);
        assert_eq!(verdict, LyapgenVerdict::Valid);
        let (mut lie, mut neg) = (f64::NAN, f64::NAN);
        assert_eq!(lyapgen_report_violations(rep, &mut lie, &mut neg), LyapgenStatus::Ok);
        assert!(lie <= 1e-4);
        let json: serde_json::Value = serde_json::from_str(&take_string(lyapgen_report_to_json(rep))).unwrap();
        assert_eq!(json["status"], "valid");
        lyapgen_report_free(rep);

        let bad = expr("-(x1^2 + x2^2)");
        assert_eq!(lyapgen_verify(sys, bad, 1e-4, 5000, 0, &mut rep), LyapgenStatus::Ok);
        assert_eq!(lyapgen_report_verdict(rep, &mut verdict), LyapgenStatus::Ok);
        assert_eq!(verdict, LyapgenVerdict::Invalid);
        let n = lyapgen_report_counterexample_count(rep);
        assert!(n > 0);
        let mut buf = [0.0; 2];
        assert_eq!(lyapgen_report_counterexample(rep, 0, buf.as_mut_ptr(), 2), LyapgenStatus::Ok);
        assert!(buf[0].abs() <= 1.0 && buf[1].abs() <= 1.0);
        assert_eq!(lyapgen_report_counterexample(rep, n, buf.as_mut_ptr(), 2), LyapgenStatus::OutOfRange);
        assert_eq!(lyapgen_report_counterexample(rep, 0, buf.as_mut_ptr(), 1), LyapgenStatus::DimensionMismatch);
        lyapgen_report_free(rep);

        assert_eq!(lyapgen_verify(sys, good, -1.0, 5000, 0, &mut rep), LyapgenStatus::InvalidConfig);
        assert_eq!(lyapgen_verify(ptr::null(), good, 1e-4, 5000, 0, &mut rep), LyapgenStatus::NullPointer);
        lyapgen_expr_free(good);
        lyapgen_expr_free(bad);
        lyapgen_system_free(sys);
    }
}

#[test]
fn run_returns_a_json_report() {
    unsafe {
        let cfg = c(r#"{"system": "path_following", "max_epochs": 1, "inner_steps": 5, "initial_pool": 200,
                      "regression_samples": 200, "hidden": [8],
                      "gp": {"population": 100, "generations": 3}, "check": {"n_check": 2000}}"#);
        let mut out = ptr::null_mut();
        assert_eq!(lyapgen_run(cfg.as_ptr(), &mut out), LyapgenStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
        assert_eq!(json["system"], "path_following");
        assert_eq!(json["config"]["max_epochs"], 1);

        let bad = c(r#"{"max_epoch": 1}"#);
        assert_eq!(lyapgen_run(bad.as_ptr(), &mut out), LyapgenStatus::InvalidConfig);
        assert!(take_string(lyapgen_last_error_message()).contains("max_epoch"));
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/lyapgen.h")).unwrap();
    for name in [
        "lyapgen_last_error_message",
        "lyapgen_string_free",
        "lyapgen_system_new",
        "lyapgen_system_free",
        "lyapgen_system_dim",
        "lyapgen_expr_parse",
        "lyapgen_expr_free",
        "lyapgen_expr_to_string",
        "lyapgen_expr_eval",
        "lyapgen_lie_derivative",
        "lyapgen_verify",
        "lyapgen_report_free",
        "lyapgen_report_verdict",
        "lyapgen_report_counterexample_count",
        "lyapgen_report_counterexample",
        "lyapgen_report_violations",
        "lyapgen_report_to_json",
        "lyapgen_run",
        "LYAPGEN_STATUS_NULL_POINTER",
        "typedef struct LyapgenSystem LyapgenSystem",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
