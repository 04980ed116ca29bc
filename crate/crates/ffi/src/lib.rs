//! C interface to lyapgen.
//!
//! Systems, expressions and verification reports are opaque handles created
//! and destroyed through this API. Fallible calls return a [`LyapgenStatus`];
//! the message of the most recent failure on the calling thread is available
//! from [`lyapgen_last_error_message`]. Strings returned by the library must
//! be released with [`lyapgen_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use lyapgen::dynamics::{get_system, DynamicalSystem};
use lyapgen::expr::{lie_derivative, parse, Expression};
use lyapgen::falsifier::{check_candidate, CheckConfig, Status, VerificationReport};
use lyapgen::orchestrator::{run, RunConfig};
use lyapgen::report::ReportFile;
use lyapgen::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapgenStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    UnknownSystem = 3,
    Parse = 4,
    DimensionMismatch = 5,
    InvalidConfig = 6,
    OutOfRange = 7,
    /// Evaluation, training or I/O failure.
    Failed = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LyapgenVerdict {
    Valid = 0,
    Invalid = 1,
    Indeterminate = 2,
}

/// A registered dynamical system.
pub struct LyapgenSystem(DynamicalSystem);

/// A symbolic expression over `x1..xn`.
pub struct LyapgenExpr(Expression);

/// Outcome of checking one candidate.
pub struct LyapgenReport(VerificationReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(LyapgenStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::UnknownSystem(_) => LyapgenStatus::UnknownSystem,
            Error::Parse(_) => LyapgenStatus::Parse,
            Error::DimensionMismatch { .. } => LyapgenStatus::DimensionMismatch,
            Error::Config(_) | Error::Json(_) => LyapgenStatus::InvalidConfig,
            _ => LyapgenStatus::Failed,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(LyapgenStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> LyapgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LyapgenStatus::Ok,
        Ok(Err(Failure(code, msg))) => {
            set_error(msg);
            code
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            LyapgenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(LyapgenStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(v);
    Ok(())
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(std::ptr::null_mut(), CString::into_raw)
}

/// Copy of the last error message on this thread, or NULL if there was none.
/// Free with [`lyapgen_string_free`].
#[no_mangle]
pub extern "C" fn lyapgen_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null_mut(), |c| c.clone().into_raw()))
}

/// # Safety
/// `s` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Looks up a registered system by name; networked systems are flattened.
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_system_new(name: *const c_char, out: *mut *mut LyapgenSystem) -> LyapgenStatus {
    guard(|| {
        let name = str_arg(name, "name")?;
        let sys = get_system(name)?;
        put(out, Box::into_raw(Box::new(LyapgenSystem(sys))), "out")
    })
}

/// # Safety
/// `sys` must come from [`lyapgen_system_new`] and not have been freed. NULL
/// is ignored.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_system_free(sys: *mut LyapgenSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// State dimension, or 0 for NULL.
///
/// # Safety
/// `sys` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_system_dim(sys: *const LyapgenSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.0.dim)
}

/// # Safety
/// `text` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_expr_parse(text: *const c_char, out: *mut *mut LyapgenExpr) -> LyapgenStatus {
    guard(|| {
        let e = parse(str_arg(text, "text")?).map_err(Error::from)?;
        put(out, Box::into_raw(Box::new(LyapgenExpr(e))), "out")
    })
}

/// # Safety
/// `e` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_expr_free(e: *mut LyapgenExpr) {
    if !e.is_null() {
        drop(Box::from_raw(e));
    }
}

/// Printed form in the parser's syntax, or NULL for a NULL handle. Free with
/// [`lyapgen_string_free`].
///
/// # Safety
/// `e` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_expr_to_string(e: *const LyapgenExpr) -> *mut c_char {
    e.as_ref().map_or(std::ptr::null_mut(), |e| into_c_string(e.0.to_string()))
}

/// Evaluates `e` at the point `x[0..n]`.
///
/// # Safety
/// `x` must point to `n` readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_expr_eval(e: *const LyapgenExpr, x: *const f64, n: usize, out: *mut f64) -> LyapgenStatus {
    guard(|| {
        let e = handle(e, "e")?;
        if x.is_null() && n > 0 {
            return Err(null("x"));
        }
        let xs = if n == 0 { &[][..] } else { std::slice::from_raw_parts(x, n) };
        if e.0.arity() > n {
            return Err(Error::DimensionMismatch { expected: e.0.arity(), found: n }.into());
        }
        let v = e.0.eval(xs).map_err(Error::from)?;
        put(out, v, "out")
    })
}

/// Symbolic Lie derivative of `v` along the system's vector field.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_lie_derivative(
    sys: *const LyapgenSystem,
    v: *const LyapgenExpr,
    out: *mut *mut LyapgenExpr,
) -> LyapgenStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        let v = handle(v, "v")?;
        let e = sys.0.expand_auxiliary(&v.0);
        if e.arity() > sys.0.dim {
            return Err(Error::DimensionMismatch { expected: sys.0.dim, found: e.arity() }.into());
        }
        let l = lie_derivative(&e, &sys.0.rhs)?;
        put(out, Box::into_raw(Box::new(LyapgenExpr(l))), "out")
    })
}

/// Falsifies the candidate `v` with tolerance `tol`, `n_check` dense samples
/// and the given seed; other settings take their defaults.
///
/// # Safety
/// Handles must be live and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_verify(
    sys: *const LyapgenSystem,
    v: *const LyapgenExpr,
    tol: f64,
    n_check: usize,
    seed: u64,
    out: *mut *mut LyapgenReport,
) -> LyapgenStatus {
    guard(|| {
        let sys = handle(sys, "sys")?;
        let v = handle(v, "v")?;
        let cfg = CheckConfig { tol, n_check, seed, ..CheckConfig::default() };
        let r = check_candidate(&v.0, &sys.0, &cfg)?;
        put(out, Box::into_raw(Box::new(LyapgenReport(r))), "out")
    })
}

/// # Safety
/// `r` must come from this library and not have been freed. NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_free(r: *mut LyapgenReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// # Safety
/// `r` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_verdict(r: *const LyapgenReport, out: *mut LyapgenVerdict) -> LyapgenStatus {
    guard(|| {
        let v = match handle(r, "r")?.0.status {
            Status::Valid => LyapgenVerdict::Valid,
            Status::Invalid => LyapgenVerdict::Invalid,
            Status::Indeterminate => LyapgenVerdict::Indeterminate,
        };
        put(out, v, "out")
    })
}

/// Number of counterexamples, or 0 for NULL.
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_counterexample_count(r: *const LyapgenReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.counterexamples.len())
}

/// Copies counterexample `index` into `buf[0..len]`; `len` must be at least
/// the system dimension.
///
/// # Safety
/// `r` must be a live handle and `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_counterexample(
    r: *const LyapgenReport,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> LyapgenStatus {
    guard(|| {
        let r = handle(r, "r")?;
        let x = r.0.counterexamples.get(index).ok_or_else(|| {
            Failure(LyapgenStatus::OutOfRange, format!("counterexample {index} of {}", r.0.counterexamples.len()))
        })?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < x.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), found: len }.into());
        }
        std::ptr::copy_nonoverlapping(x.as_ptr(), buf, x.len());
        Ok(())
    })
}

/// Largest `LfV` and `-V` over the probes; NaN when not measured.
///
/// # Safety
/// `r` must be a live handle; each output pointer may be NULL.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_violations(r: *const LyapgenReport, max_lie: *mut f64, max_neg_v: *mut f64) -> LyapgenStatus {
    guard(|| {
        let r = handle(r, "r")?;
        if !max_lie.is_null() {
            max_lie.write(r.0.max_lie.unwrap_or(f64::NAN));
        }
        if !max_neg_v.is_null() {
            max_neg_v.write(r.0.max_neg_v.unwrap_or(f64::NAN));
        }
        Ok(())
    })
}

/// Full report as JSON, or NULL for a NULL handle. Free with
/// [`lyapgen_string_free`].
///
/// # Safety
/// `r` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_report_to_json(r: *const LyapgenReport) -> *mut c_char {
    r.as_ref().and_then(|r| serde_json::to_string(&r.0).ok()).map_or(std::ptr::null_mut(), into_c_string)
}

/// Runs the discovery loop for a JSON run configuration (every field
/// optional) and writes the JSON run report to `out`. Free it with
/// [`lyapgen_string_free`].
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lyapgen_run(config_json: *const c_char, out: *mut *mut c_char) -> LyapgenStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: RunConfig = serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?;
        let result = run(&cfg)?;
        let json = ReportFile::new(&cfg, &result).to_json()?;
        put(out, into_c_string(json), "out")
    })
}
