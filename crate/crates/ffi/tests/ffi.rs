use std::ffi::{CStr, CString};
use std::ptr;

use rhfe::estimator::{EstimatorGain, StackedWindow};
use rhfe::simulator::{simulate_closed_loop, simulate_fault_free, vtol_model};
use rhfe::system_model::FaultConfig;
use rhfe_ffi::*;

fn last_error() -> String {
    let p = rhfe_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn row_major(m: &rhfe::linalg::Mat) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

#[test]
fn null_and_missing_inputs_are_reported() {
    let mut h: *mut RhfeEstimator = ptr::null_mut();
    let st = unsafe { rhfe_estimator_load(ptr::null(), &mut h) };
    assert_eq!(st, RhfeStatus::NullPointer);
    assert!(last_error().contains("path"));

    let path = CString::new("/nonexistent/estimator.json").unwrap();
    let st = unsafe { rhfe_estimator_load(path.as_ptr(), &mut h) };
    assert_eq!(st, RhfeStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("nonexistent"));

    let st = unsafe { rhfe_estimator_dims(ptr::null(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut(), ptr::null_mut()) };
    assert_eq!(st, RhfeStatus::NullPointer);
    unsafe { rhfe_estimator_free(ptr::null_mut()) };
}

#[test]
fn bad_fault_spec_is_a_validation_error() {
    let plant = CString::new("vtol").unwrap();
    let fault = CString::new("wing:3").unwrap();
    let mut h: *mut RhfeEstimator = ptr::null_mut();
    let st = unsafe { rhfe_design_exact(plant.as_ptr(), fault.as_ptr(), 10, 5, &mut h) };
    assert_eq!(st, RhfeStatus::Validation);
    assert!(h.is_null());
    // success clears the message
    let ok = CString::new("sensor:1").unwrap();
    let st = unsafe { rhfe_design_exact(plant.as_ptr(), ok.as_ptr(), 10, 5, &mut h) };
    assert_eq!(st, RhfeStatus::Ok);
    assert!(rhfe_last_error().is_null());
    unsafe { rhfe_estimator_free(h) };
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(rhfe_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn identify_design_estimate_matches_library() {
    let (model, ctrl) = vtol_model();
    let id = simulate_fault_free(&model, &ctrl, 600, 3).unwrap();
    let (y, u) = (row_major(&id.y), row_major(&id.u));

    let mut ident: *mut RhfeIdentification = ptr::null_mut();
    let st = unsafe { rhfe_identify(y.as_ptr(), u.as_ptr(), id.len(), id.n_y(), id.n_u(), 6, 0, &mut ident) };
    assert_eq!(st, RhfeStatus::Ok, "{}", last_error());

    let fault = CString::new("actuator:1,2").unwrap();
    let mut est: *mut RhfeEstimator = ptr::null_mut();
    let st = unsafe { rhfe_design_nominal(ident, fault.as_ptr(), 12, 0, &mut est) };
    assert_eq!(st, RhfeStatus::Ok, "{}", last_error());

    let (mut l, mut ny, mut nu, mut nf, mut tau) = (0, 0, 0, 0, 0);
    assert_eq!(unsafe { rhfe_estimator_dims(est, &mut l, &mut ny, &mut nu, &mut nf, &mut tau) }, RhfeStatus::Ok);
    assert_eq!((l, ny, nu, nf, tau), (12, id.n_y(), id.n_u(), 2, 1));

    let cfg: FaultConfig = "actuator:1,2".parse().unwrap();
    let run = simulate_closed_loop(&model, &ctrl.with_constant_reference(1.0), &rhfe::bench::evaluation_profile(2), &cfg, 80, 9).unwrap();
    let win = StackedWindow::from_trajectory(&run, 70, l).unwrap();
    let mut f_hat = [0.0; 2];
    let st = unsafe { rhfe_estimator_estimate(est, win.y_win.as_ptr(), win.u_win.as_ptr(), f_hat.as_mut_ptr()) };
    assert_eq!(st, RhfeStatus::Ok, "{}", last_error());

    // save through the C API, reload with the library, compare
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("est.json");
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(unsafe { rhfe_estimator_save(est, cpath.as_ptr()) }, RhfeStatus::Ok);
    let gain = EstimatorGain::load(&path).unwrap();
    assert_eq!(gain.fault.as_deref(), Some("actuator:1,2"));
    let lib = gain.estimate(&win).unwrap();
    assert_eq!(lib.as_slice(), &f_hat);

    unsafe {
        rhfe_estimator_free(est);
        rhfe_identification_free(ident);
    }
}

#[test]
fn robust_design_respects_tuning_range() {
    let (model, ctrl) = vtol_model();
    let id = simulate_fault_free(&model, &ctrl, 600, 4).unwrap();
    let (y, u) = (row_major(&id.y), row_major(&id.u));
    let mut ident: *mut RhfeIdentification = ptr::null_mut();
    assert_eq!(unsafe { rhfe_identify(y.as_ptr(), u.as_ptr(), id.len(), id.n_y(), id.n_u(), 4, 0, &mut ident) }, RhfeStatus::Ok);
    let fault = CString::new("sensor:1,2").unwrap();
    let mut est: *mut RhfeEstimator = ptr::null_mut();
    // gamma_f2 = 0 is below any attainable bound
    let st = unsafe { rhfe_design_robust(ident, fault.as_ptr(), 8, 0, 0.0, f64::NAN, &mut est) };
    assert_eq!(st, RhfeStatus::Validation);
    assert!(last_error().contains("gamma_f2"));
    let st = unsafe { rhfe_design_robust(ident, fault.as_ptr(), 8, 0, f64::NAN, f64::NAN, &mut est) };
    assert_eq!(st, RhfeStatus::Ok, "{}", last_error());
    unsafe {
        rhfe_estimator_free(est);
        rhfe_identification_free(ident);
    }
}

#[test]
fn header_compiles_as_c() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/rhfe.h");
    assert!(std::path::Path::new(header).exists());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"rhfe.h\"\nint main(void) { RhfeEstimator *h = 0; return rhfe_estimator_dims(h, 0, 0, 0, 0, 0) == RHFE_STATUS_NULL_POINTER ? 0 : 1; }\n",
    )
    .unwrap();
    let out = match std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .output()
    {
        Ok(o) => o,
        Err(_) => {
            eprintln!("no C compiler; skipping");
            return;
        }
    };
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
