use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use tunnelkit_ffi::*;

const CONFIG: &str = "schema = 1
[domain]
kind = interval
extents = -2, 2
resolution = 401
[potential]
V = (1 - x^2)^2
[hbar]
sweep = 0.12, 0.1, 0.09, 0.08
";

fn last_error() -> String {
    let mut need = 0usize;
    unsafe {
        tk_last_error(ptr::null_mut(), 0, &mut need);
        let mut buf = vec![0 as std::ffi::c_char; need];
        assert_eq!(tk_last_error(buf.as_mut_ptr(), need, ptr::null_mut()), TkStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn problem(text: &str) -> Result<*mut TkProblem, TkStatus> {
    let c = CString::new(text).unwrap();
    let mut p = ptr::null_mut();
    match unsafe { tk_problem_from_str(c.as_ptr(), 3, &mut p) } {
        TkStatus::Ok => Ok(p),
        s => {
            assert!(p.is_null());
            Err(s)
        }
    }
}

#[test]
fn round_trip_matches_library() {
    let p = problem(CONFIG).unwrap();
    unsafe {
        let mut wells = 0;
        assert_eq!(tk_problem_well_count(p, &mut wells), TkStatus::Ok);
        assert_eq!(wells, 2);
        let mut coords = [0.0; 2];
        let mut lambda = [0.0; 2];
        let mut n = 0;
        assert_eq!(tk_problem_well(p, 1, coords.as_mut_ptr(), lambda.as_mut_ptr(), 2, &mut n), TkStatus::Ok);
        assert_eq!(n, 1);
        assert!((coords[0] - 1.0).abs() < 1e-6, "{coords:?}");
        assert!((lambda[0] - 2.0).abs() < 1e-3, "{lambda:?}");
        assert_eq!(tk_problem_well(p, 2, coords.as_mut_ptr(), ptr::null_mut(), 0, ptr::null_mut()), TkStatus::OutOfRange);

        let mut r = ptr::null_mut();
        assert_eq!(tk_run(p, TkCommand::Report, &mut r), TkStatus::Ok);
        let mut count = 0;
        assert_eq!(tk_report_hbar_count(r, &mut count), TkStatus::Ok);
        assert_eq!(count, 4);

        let cfg = tunnelkit::config::parse(CONFIG).unwrap();
        let lib = tunnelkit::pipeline::Problem::new(cfg, 3).unwrap();
        let report = tunnelkit::pipeline::run(&lib, tunnelkit::pipeline::Command::Report).unwrap();
        let rows = &report.interaction.as_ref().unwrap().per_hbar;
        for (i, row) in rows.iter().enumerate() {
            let (mut h, mut d, mut q) = (0.0, 0.0, 0.0);
            assert_eq!(tk_report_splitting(r, i, &mut h, &mut d, &mut q), TkStatus::Ok);
            assert_eq!((h, d, q), (row.hbar, row.direct_gaps[0], row.predicted_gaps[0]));
        }
        let mut fit = [0.0; 3];
        assert_eq!(tk_report_fit(r, fit.as_mut_ptr()), TkStatus::Ok);
        assert_eq!(fit[0], report.sweep.as_ref().unwrap().record.fit.as_ref().unwrap().s);

        let mut need = 0;
        assert_eq!(tk_report_json(r, ptr::null_mut(), 0, &mut need), TkStatus::BufferTooSmall);
        let mut buf = vec![0 as std::ffi::c_char; need];
        assert_eq!(tk_report_json(r, buf.as_mut_ptr(), need, ptr::null_mut()), TkStatus::Ok);
        let json = CStr::from_ptr(buf.as_ptr()).to_str().unwrap();
        assert_eq!(json, report.to_json().unwrap());

        tk_report_free(r);
        tk_problem_free(p);
    }
}

#[test]
fn errors_map_to_status_codes() {
    assert_eq!(problem("schema = 1\n[domain]\nshape = disk\n").unwrap_err(), TkStatus::Config);
    assert!(last_error().contains("line"));
    let neg = CONFIG.replace("(1 - x^2)^2", "x - 3");
    assert_eq!(problem(&neg).unwrap_err(), TkStatus::Potential);
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(tk_problem_from_str(ptr::null(), 0, &mut p), TkStatus::NullArgument);
        let bad = [0xffu8 as std::ffi::c_char, 0];
        assert_eq!(tk_problem_from_str(bad.as_ptr(), 0, &mut p), TkStatus::InvalidUtf8);
        let path = CString::new("/nonexistent/problem.tk").unwrap();
        assert_eq!(tk_problem_load(path.as_ptr(), 0, &mut p), TkStatus::Io);
        let mut n = 0;
        assert_eq!(tk_problem_node_count(ptr::null(), &mut n), TkStatus::NullArgument);
        tk_problem_free(ptr::null_mut());
        tk_report_free(ptr::null_mut());

        let p = problem(CONFIG).unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(tk_run(p, TkCommand::Wells, &mut r), TkStatus::Ok);
        let mut fit = [0.0; 3];
        assert_eq!(tk_report_fit(r, fit.as_mut_ptr()), TkStatus::OutOfRange);
        let mut count = 9;
        assert_eq!(tk_report_hbar_count(r, &mut count), TkStatus::Ok);
        assert_eq!(count, 0);
        tk_report_free(r);
        tk_problem_free(p);
    }
    let v = unsafe { CStr::from_ptr(tk_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

/// Compiles a C program against the generated header and the static library.
#[test]
fn c_program_links_against_header() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir: PathBuf = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libtunnelkit_ffi.a");
    assert!(lib.is_file(), "static library not built at {}", lib.display());
    let exe = Path::new(env!("CARGO_TARGET_TMPDIR")).join("tk_smoke");
    let status = Command::new("cc")
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .expect("C compiler");
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    let line = String::from_utf8(out.stdout).unwrap();
    assert!(line.starts_with(env!("CARGO_PKG_VERSION")), "{line}");
    assert!(line.contains("hbar index 5 of 2"), "{line}");
}
