//! C ABI over tunnelkit.
//!
//! Handles are opaque pointers owned by the caller and released with the
//! matching `tk_*_free`. Every function returns a [`TkStatus`]; on failure the
//! message is available from [`tk_last_error`] on the same thread. Panics
//! never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use tunnelkit::config;
use tunnelkit::pipeline::{run, Command, Problem, Report};
use tunnelkit::Error;

/// Status codes returned by every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TkStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Domain = 4,
    Potential = 5,
    Numerics = 6,
    Io = 7,
    OutOfRange = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Which stages a report covers.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TkCommand {
    Wells = 0,
    Spectrum = 1,
    Interaction = 2,
    Sweep = 3,
    Report = 4,
}

/// A parsed config with its mesh, fields and wells.
pub struct TkProblem(Problem);

/// The result of running a command on a problem.
pub struct TkReport(Report);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> TkStatus {
    match e {
        Error::Context { source, .. } => status_of(source),
        Error::Config { .. } | Error::Syntax { .. } | Error::UnknownIdentifier { .. } => TkStatus::Config,
        Error::InvalidDomain(_) | Error::Disconnected { .. } => TkStatus::Domain,
        Error::Evaluation { .. }
        | Error::RankMismatch { .. }
        | Error::NegativePotential { .. }
        | Error::DegenerateWell { .. }
        | Error::NoWells
        | Error::NotSymmetric { .. } => TkStatus::Potential,
        Error::Io(_) => TkStatus::Io,
        _ => TkStatus::Numerics,
    }
}

fn guard(f: impl FnOnce() -> Result<(), TkStatus>) -> TkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TkStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            TkStatus::Panic
        }
    }
}

fn fail(status: TkStatus, msg: impl Into<String>) -> TkStatus {
    set_error(msg.into());
    status
}

fn lift<T>(r: tunnelkit::Result<T>) -> Result<T, TkStatus> {
    r.map_err(|e| fail(status_of(&e), e.to_string()))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, TkStatus> {
    if p.is_null() {
        return Err(fail(TkStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(TkStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, TkStatus> {
    p.as_mut().ok_or_else(|| fail(TkStatus::NullArgument, "null output pointer"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, TkStatus> {
    p.as_ref().ok_or_else(|| fail(TkStatus::NullArgument, "null handle"))
}

/// Copies `s` plus a NUL into `buf`; `needed` receives the required size.
/// Does not touch the thread's error message.
unsafe fn copy_out(s: &str, buf: *mut c_char, len: usize, needed: *mut usize) -> Result<(), TkStatus> {
    if let Some(n) = needed.as_mut() {
        *n = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return Err(TkStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tk_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn tk_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> TkStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    guard(|| copy_out(&msg, buf, len, needed))
}

/// Builds a problem from config text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_from_str(text: *const c_char, seed: u64, out: *mut *mut TkProblem) -> TkStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cfg = lift(config::parse(str_arg(text)?))?;
        let p = lift(Problem::new(cfg, seed))?;
        *out = Box::into_raw(Box::new(TkProblem(p)));
        Ok(())
    })
}

/// Builds a problem from a config file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_load(path: *const c_char, seed: u64, out: *mut *mut TkProblem) -> TkStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cfg = lift(config::load(Path::new(str_arg(path)?)))?;
        let p = lift(Problem::new(cfg, seed))?;
        *out = Box::into_raw(Box::new(TkProblem(p)));
        Ok(())
    })
}

/// Releases a problem. Null is ignored.
///
/// # Safety
/// `p` must come from `tk_problem_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_free(p: *mut TkProblem) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of mesh nodes.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_node_count(p: *const TkProblem, out: *mut usize) -> TkStatus {
    guard(|| {
        *out_arg(out)? = handle(p)?.0.graph.node_count();
        Ok(())
    })
}

/// Number of selected wells.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_well_count(p: *const TkProblem, out: *mut usize) -> TkStatus {
    guard(|| {
        *out_arg(out)? = handle(p)?.0.wells.len();
        Ok(())
    })
}

/// Coordinates and harmonic frequencies of well `j`. `lambda` receives up
/// to `lambda_len` values; `n_lambda` the number available.
///
/// # Safety
/// `p` must be a live handle; `coords` must point to two doubles; `lambda`
/// must point to `lambda_len` doubles or be null; `n_lambda` may be null.
#[no_mangle]
pub unsafe extern "C" fn tk_problem_well(
    p: *const TkProblem,
    j: usize,
    coords: *mut f64,
    lambda: *mut f64,
    lambda_len: usize,
    n_lambda: *mut usize,
) -> TkStatus {
    guard(|| {
        let p = &handle(p)?.0;
        let w = p
            .wells
            .get(j)
            .ok_or_else(|| fail(TkStatus::OutOfRange, format!("well {j} of {}", p.wells.len())))?;
        if coords.is_null() {
            return Err(fail(TkStatus::NullArgument, "null coords"));
        }
        *coords = w.coords[0];
        *coords.add(1) = w.coords[1];
        if let Some(n) = n_lambda.as_mut() {
            *n = w.lambda.len();
        }
        if !lambda.is_null() {
            for (k, &l) in w.lambda.iter().take(lambda_len).enumerate() {
                *lambda.add(k) = l;
            }
        }
        Ok(())
    })
}

/// Runs `command` on a problem.
///
/// # Safety
/// `p` must be a live problem handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_run(p: *const TkProblem, command: TkCommand, out: *mut *mut TkReport) -> TkStatus {
    guard(|| {
        let out = out_arg(out)?;
        *out = ptr::null_mut();
        let cmd = match command {
            TkCommand::Wells => Command::Wells,
            TkCommand::Spectrum => Command::Spectrum,
            TkCommand::Interaction => Command::Interaction,
            TkCommand::Sweep => Command::Sweep,
            TkCommand::Report => Command::Report,
        };
        let r = lift(run(&handle(p)?.0, cmd))?;
        *out = Box::into_raw(Box::new(TkReport(r)));
        Ok(())
    })
}

/// Releases a report. Null is ignored.
///
/// # Safety
/// `r` must come from `tk_run` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tk_report_free(r: *mut TkReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Pretty JSON of the report. Call with a null buffer to size it.
///
/// # Safety
/// `r` must be a live report; `buf` must point to `len` bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn tk_report_json(r: *const TkReport, buf: *mut c_char, len: usize, needed: *mut usize) -> TkStatus {
    guard(|| {
        let json = lift(handle(r)?.0.to_json())?;
        copy_out(&json, buf, len, needed)
    })
}

/// Number of hbar values with interaction data (0 for reports without it).
///
/// # Safety
/// `r` must be a live report and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tk_report_hbar_count(r: *const TkReport, out: *mut usize) -> TkStatus {
    guard(|| {
        let r = &handle(r)?.0;
        *out_arg(out)? = r.interaction.as_ref().map_or(0, |s| s.per_hbar.len());
        Ok(())
    })
}

/// Lowest direct and predicted gaps at the `i`-th hbar of the interaction stage.
///
/// # Safety
/// `r` must be a live report; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn tk_report_splitting(
    r: *const TkReport,
    i: usize,
    hbar: *mut f64,
    direct: *mut f64,
    predicted: *mut f64,
) -> TkStatus {
    guard(|| {
        let r = &handle(r)?.0;
        let rows = r
            .interaction
            .as_ref()
            .map(|s| s.per_hbar.as_slice())
            .unwrap_or(&[]);
        let row = rows
            .get(i)
            .ok_or_else(|| fail(TkStatus::OutOfRange, format!("hbar index {i} of {}", rows.len())))?;
        let (d, q) = match (row.direct_gaps.first(), row.predicted_gaps.first()) {
            (Some(&d), Some(&q)) => (d, q),
            _ => return Err(fail(TkStatus::OutOfRange, "fewer than two levels")),
        };
        *out_arg(hbar)? = row.hbar;
        *out_arg(direct)? = d;
        *out_arg(predicted)? = q;
        Ok(())
    })
}

/// Fitted (S, p, c) of `ln Delta = -S/hbar + p ln hbar + c` from a sweep.
///
/// # Safety
/// `r` must be a live report and `out` must point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn tk_report_fit(r: *const TkReport, out: *mut f64) -> TkStatus {
    guard(|| {
        let r = &handle(r)?.0;
        let fit = r
            .sweep
            .as_ref()
            .and_then(|s| s.record.fit.as_ref())
            .ok_or_else(|| fail(TkStatus::OutOfRange, "report has no sweep fit"))?;
        if out.is_null() {
            return Err(fail(TkStatus::NullArgument, "null output pointer"));
        }
        *out = fit.s;
        *out.add(1) = fit.p;
        *out.add(2) = fit.c;
        Ok(())
    })
}
