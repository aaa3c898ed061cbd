use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use polysls_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(polysls_last_error()) }.to_str().unwrap().to_string()
}

fn model(name: &str, params: Option<&str>) -> *mut PolyslsModel {
    let name = CString::new(name).unwrap();
    let params = params.map(|p| CString::new(p).unwrap());
    let mut out = ptr::null_mut();
    let st = unsafe {
        polysls_model_builtin(name.as_ptr(), params.as_ref().map_or(ptr::null(), |p| p.as_ptr()), &mut out)
    };
    assert_eq!(st, PolyslsStatus::Ok, "{}", last_error());
    out
}

fn synth(m: *const PolyslsModel, horizon: usize, alpha: &[f64]) -> (PolyslsStatus, *mut PolyslsClm) {
    let mut out = ptr::null_mut();
    let st = unsafe { polysls_synthesize(m, horizon, alpha.as_ptr(), alpha.len(), &mut out) };
    (st, out)
}

#[test]
fn synthesize_evaluate_and_verify() {
    let m = model("scalar_quadratic", None);
    let mut slots = 0;
    assert_eq!(unsafe { polysls_slot_count(m, 2, &mut slots) }, PolyslsStatus::Ok);
    assert_eq!(slots, 8);
    let (st, clm) = synth(m, 2, &[0.5]);
    assert_eq!(st, PolyslsStatus::Ok);

    let (mut h, mut n) = (0, 0);
    assert_eq!(unsafe { polysls_clm_shape(clm, &mut h, &mut n) }, PolyslsStatus::Ok);
    assert_eq!((h, n), (2, 1));

    let window = [0.3, -0.2, 0.1];
    let (mut x, mut u) = ([0.0], [0.0]);
    assert_eq!(unsafe { polysls_clm_state(clm, window.as_ptr(), 3, x.as_mut_ptr(), 1) }, PolyslsStatus::Ok);
    assert_eq!(unsafe { polysls_clm_input(clm, window.as_ptr(), 3, u.as_mut_ptr(), 1) }, PolyslsStatus::Ok);
    assert!(x[0].is_finite() && u[0].is_finite());

    let mut residual = f64::NAN;
    assert_eq!(unsafe { polysls_verify(clm, m, 200, 1, 1e-9, &mut residual) }, PolyslsStatus::Ok);
    assert!(residual <= 1e-9);

    let (st, _) = synth(m, 2, &[0.5, 0.5]);
    assert_eq!(st, PolyslsStatus::InvalidArgument);
    assert!(last_error().contains("expected 1 or 8"));
    unsafe {
        polysls_clm_free(clm);
        polysls_model_free(m);
    }
}

#[test]
fn controller_cancels_an_impulse() {
    let m = model("cylinder_wake", Some(r#"{"lambda": 0.5}"#));
    let (st, clm) = synth(m, 2, &[1.0]);
    assert_eq!(st, PolyslsStatus::Ok);
    let mut ctrl = ptr::null_mut();
    assert_eq!(unsafe { polysls_controller_new(clm, &mut ctrl) }, PolyslsStatus::Ok);

    // Plant x_{t+1} = f(x_t) + u_t + w_t with a single disturbance at t = 0.
    let f = |x: &[f64; 3]| {
        let (mu, om, a, la) = (0.1, 1.0, -0.1, 0.5);
        [
            mu * x[0] - om * x[1] + a * x[0] * x[1],
            om * x[0] + mu * x[1] + a * x[1] * x[2],
            -la * (x[2] - x[0] * x[0] - x[1] * x[1]),
        ]
    };
    let mut x = [0.0; 3];
    for t in 0..8 {
        let mut u = [0.0; 3];
        let st = unsafe { polysls_controller_step(ctrl, clm, m, x.as_ptr(), 3, u.as_mut_ptr()) };
        assert_eq!(st, PolyslsStatus::Ok);
        let w = if t == 0 { [0.4, -0.3, 0.2] } else { [0.0; 3] };
        let fx = f(&x);
        x = [fx[0] + u[0] + w[0], fx[1] + u[1] + w[1], fx[2] + u[2] + w[2]];
        if t >= 1 {
            assert!(x.iter().all(|v| v.abs() <= 1e-12), "t = {t}: {x:?}");
        }
    }
    unsafe {
        polysls_controller_free(ctrl);
        polysls_clm_free(clm);
        polysls_model_free(m);
    }
}

#[test]
fn archive_round_trip_and_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("clm.json").to_str().unwrap()).unwrap();
    let quad = model("scalar_quadratic", None);
    let cyl = model("cylinder_wake", None);
    let (_, clm) = synth(quad, 1, &[0.25]);
    assert_eq!(unsafe { polysls_clm_save(clm, path.as_ptr()) }, PolyslsStatus::Ok);

    let mut back = ptr::null_mut();
    assert_eq!(unsafe { polysls_clm_load(path.as_ptr(), quad, &mut back) }, PolyslsStatus::Ok);
    let window = [0.7, -0.4];
    let (mut a, mut b) = ([0.0], [0.0]);
    unsafe {
        polysls_clm_input(clm, window.as_ptr(), 2, a.as_mut_ptr(), 1);
        polysls_clm_input(back, window.as_ptr(), 2, b.as_mut_ptr(), 1);
    }
    assert_eq!(a[0].to_bits(), b[0].to_bits());

    let mut other = ptr::null_mut();
    assert_eq!(unsafe { polysls_clm_load(path.as_ptr(), cyl, &mut other) }, PolyslsStatus::Config);
    assert!(last_error().contains("fingerprint"));
    let missing = CString::new(dir.path().join("nope.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { polysls_clm_load(missing.as_ptr(), quad, &mut other) }, PolyslsStatus::Io);
    assert!(other.is_null());
    unsafe {
        polysls_clm_free(back);
        polysls_clm_free(clm);
        polysls_model_free(quad);
        polysls_model_free(cyl);
    }
}

#[test]
fn argument_errors() {
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { polysls_model_builtin(ptr::null(), ptr::null(), &mut out) }, PolyslsStatus::InvalidArgument);
    let name = CString::new("no_such_model").unwrap();
    assert_eq!(unsafe { polysls_model_builtin(name.as_ptr(), ptr::null(), &mut out) }, PolyslsStatus::Config);
    let cyl = CString::new("cylinder_wake").unwrap();
    let bad = CString::new(r#"{"nu": 1}"#).unwrap();
    assert_eq!(unsafe { polysls_model_builtin(cyl.as_ptr(), bad.as_ptr(), &mut out) }, PolyslsStatus::Config);
    assert!(last_error().contains("nu"));

    let m = model("scalar_quadratic", None);
    let (st, _) = synth(m, 0, &[0.5]);
    assert_eq!(st, PolyslsStatus::Config);
    let (_, clm) = synth(m, 1, &[0.5]);
    let mut x = [0.0];
    let short = [0.1];
    assert_ne!(unsafe { polysls_clm_state(clm, short.as_ptr(), 1, x.as_mut_ptr(), 1) }, PolyslsStatus::Ok);
    let window = [0.1, 0.2];
    assert_eq!(
        unsafe { polysls_clm_state(clm, window.as_ptr(), 2, x.as_mut_ptr(), 0) },
        PolyslsStatus::InvalidArgument
    );
    unsafe {
        polysls_clm_free(clm);
        polysls_model_free(m);
        polysls_model_free(ptr::null_mut());
    }
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include").join("polysls.h")
}

fn cc_available() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_compiles_as_c_and_cpp() {
    if !cc_available() {
        eprintln!("cc not found; skipping header check");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("check.c");
    std::fs::write(&src, "#include \"polysls.h\"\nint main(void) { return POLYSLS_STATUS_OK; }\n").unwrap();
    let include = header().parent().unwrap().to_path_buf();
    for lang in ["c", "c++"] {
        let out = Command::new("cc")
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang, "-I"])
            .arg(&include)
            .arg(&src)
            .output()
            .unwrap();
        assert!(out.status.success(), "{lang}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

/// Shared library built alongside this test binary, if present.
fn shared_library() -> Option<PathBuf> {
    let exe = std::env::current_exe().ok()?;
    let dir = exe.parent()?.parent()?;
    let lib = dir.join("libpolysls_ffi.so");
    lib.exists().then_some(lib)
}

#[test]
fn c_program_links_and_runs() {
    let Some(lib) = shared_library().filter(|_| cc_available()) else {
        eprintln!("shared library or cc not available; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include "polysls.h"
int main(void) {
    PolyslsModel *m = NULL;
    PolyslsClm *c = NULL;
    double alpha = 0.5, residual = 0.0;
    if (polysls_model_builtin("scalar_quadratic", NULL, &m) != POLYSLS_STATUS_OK) return 10;
    if (polysls_synthesize(m, 2, &alpha, 1, &c) != POLYSLS_STATUS_OK) return 11;
    if (polysls_verify(c, m, 100, 3, 1e-9, &residual) != POLYSLS_STATUS_OK) return 12;
    if (polysls_synthesize(m, 0, &alpha, 1, &c) != POLYSLS_STATUS_CONFIG) return 13;
    printf("residual %g error '%s'\n", residual, polysls_last_error());
    polysls_clm_free(c);
    polysls_model_free(m);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let libdir = lib.parent().unwrap();
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(libdir)
        .args(["-lpolysls_ffi", "-o"])
        .arg(&exe)
        .arg(format!("-Wl,-rpath,{}", libdir.display()))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stdout));
    assert!(String::from_utf8_lossy(&run.stdout).contains("horizon"));
}
