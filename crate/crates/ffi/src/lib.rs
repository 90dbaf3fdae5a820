//! C ABI over the `rhfe` library.
//!
//! Conventions:
//! - every fallible call returns an `RhfeStatus`; on failure a message is
//!   kept per thread and read with `rhfe_last_error`;
//! - objects are opaque handles created by `*_load`, `rhfe_identify` or a
//!   design call and released with the matching `*_free`;
//! - matrices and windows are row-major `double` arrays, row `k` = sample `k`;
//! - no panic crosses the boundary (reported as `RHFE_PANIC`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use rhfe::estimator::{design_nominal, EstimatorGain, StackedWindow};
use rhfe::identification::{extract_markov, identify, Feedthrough, IdentificationResult};
use rhfe::linalg::{Mat, Vector};
use rhfe::robust::RobustDesigner;
use rhfe::sdp::ClarabelBackend;
use rhfe::simulator::TrajectoryDataset;
use rhfe::system_model::{relative_degree, FaultConfig};
use rhfe::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RhfeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Input failed validation (shapes, assumptions, tuning range, ...).
    Validation = 3,
    /// The conic solver did not reach an acceptable solution.
    SolverFailure = 4,
    /// File missing, unreadable or malformed.
    Io = 5,
    Panic = 6,
}

/// Identified predictor model.
pub struct RhfeIdentification(IdentificationResult);

/// Fault estimator: gain plus residual generator.
pub struct RhfeEstimator(EstimatorGain);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RhfeStatus {
    match e {
        Error::SolverFailure { .. } => RhfeStatus::SolverFailure,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Format(_) => RhfeStatus::Io,
        _ => RhfeStatus::Validation,
    }
}

enum Fail {
    Null(&'static str),
    Arg(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RhfeStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RhfeStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RhfeStatus::NullPointer
        }
        Ok(Err(Fail::Arg(msg))) => {
            set_error(msg);
            RhfeStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            RhfeStatus::Panic
        }
    }
}

unsafe fn cstr<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail::Arg(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(Fail::Null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. Valid until
/// the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn rhfe_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn rhfe_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Identifies a predictor model of order `p` from fault-free closed-loop
/// data: `y` is `t x n_y`, `u` is `t x n_u`, both row-major.
/// `estimate_feedthrough` != 0 also fits the direct input term.
///
/// # Safety
/// `y` and `u` must point to `t*n_y` and `t*n_u` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_identify(
    y: *const f64,
    u: *const f64,
    t: usize,
    n_y: usize,
    n_u: usize,
    p: usize,
    estimate_feedthrough: i32,
    out: *mut *mut RhfeIdentification,
) -> RhfeStatus {
    guard(|| {
        if n_y == 0 || n_u == 0 || p == 0 {
            return Err(Fail::Arg("n_y, n_u and p must be positive".into()));
        }
        let y = Mat::from_row_slice(t, n_y, slice(y, t * n_y, "y")?);
        let u = Mat::from_row_slice(t, n_u, slice(u, t * n_u, "u")?);
        let traj = TrajectoryDataset { u, y, f_true: Mat::zeros(t, 0), reference: Mat::zeros(t, 0), seed: None };
        let ft = if estimate_feedthrough != 0 { Feedthrough::Estimate } else { Feedthrough::KnownZero };
        put(out, RhfeIdentification(identify(&traj, p, ft)?))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_identification_load(path: *const c_char, out: *mut *mut RhfeIdentification) -> RhfeStatus {
    guard(|| {
        let path = PathBuf::from(cstr(path, "path")?);
        put(out, RhfeIdentification(IdentificationResult::load(&path)?))
    })
}

/// # Safety
/// `h` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rhfe_identification_save(h: *const RhfeIdentification, path: *const c_char) -> RhfeStatus {
    guard(|| {
        let h = handle(h, "identification")?;
        h.0.save(&PathBuf::from(cstr(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rhfe_identification_free(h: *mut RhfeIdentification) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

unsafe fn designer(ident: *const RhfeIdentification, fault: *const c_char, l: usize, m: usize) -> Result<RobustDesigner, Fail> {
    let ident = &handle(ident, "identification")?.0;
    let cfg: FaultConfig = cstr(fault, "fault")?.parse()?;
    let markov = extract_markov(ident, &cfg)?;
    let tau = relative_degree(&markov, cfg.n_f())?;
    let m = if m == 0 { ident.p } else { m };
    Ok(RobustDesigner::new(&markov, l, m, tau)?)
}

fn tag(mut g: EstimatorGain, fault: &str) -> EstimatorGain {
    g.fault = Some(fault.to_string());
    g
}

/// Nominal estimator from an identified model. `fault` is e.g.
/// `"actuator:1,2"`; `m = 0` uses the identification order.
///
/// # Safety
/// `ident` must be a live handle, `fault` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_design_nominal(
    ident: *const RhfeIdentification,
    fault: *const c_char,
    l: usize,
    m: usize,
    out: *mut *mut RhfeEstimator,
) -> RhfeStatus {
    guard(|| {
        let d = designer(ident, fault, l, m)?;
        put(out, RhfeEstimator(tag(d.nominal, cstr(fault, "fault")?)))
    })
}

/// Offline robust estimator. Pass NaN for `gamma_f2` / `gamma_z2` to use
/// the default tuning.
///
/// # Safety
/// As for `rhfe_design_nominal`.
#[no_mangle]
pub unsafe extern "C" fn rhfe_design_robust(
    ident: *const RhfeIdentification,
    fault: *const c_char,
    l: usize,
    m: usize,
    gamma_f2: f64,
    gamma_z2: f64,
    out: *mut *mut RhfeEstimator,
) -> RhfeStatus {
    guard(|| {
        let d = designer(ident, fault, l, m)?;
        let be = ClarabelBackend::default();
        let gz = (!gamma_z2.is_nan()).then_some(gamma_z2);
        let mut t = if gamma_f2.is_nan() { d.default_tuning(&be)? } else { d.tuning_for(gamma_f2, gz, &be)? };
        if let Some(gz) = gz {
            t.gamma_z2 = gz;
        }
        let g = d.solve_offline(t.gamma_f2, t.gamma_z2, &be)?;
        put(out, RhfeEstimator(tag(g, cstr(fault, "fault")?)))
    })
}

/// Nominal estimator from the exact model of a plant file (`"vtol"` for the
/// built-in aircraft model).
///
/// # Safety
/// `plant` and `fault` must be NUL-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_design_exact(
    plant: *const c_char,
    fault: *const c_char,
    l: usize,
    m: usize,
    out: *mut *mut RhfeEstimator,
) -> RhfeStatus {
    guard(|| {
        let plant = rhfe::bench::load_plant(cstr(plant, "plant")?)?;
        let fs = cstr(fault, "fault")?;
        let cfg: FaultConfig = fs.parse()?;
        cfg.validate(plant.model.n_y(), plant.model.n_u())?;
        let pred = rhfe::system_model::steady_state_predictor(&plant.model)?;
        let exact = rhfe::system_model::markov_parameters(&pred, &cfg, l + m)?;
        let tau = relative_degree(&exact, cfg.n_f())?;
        put(out, RhfeEstimator(tag(design_nominal(&exact, l, m, tau)?, fs)))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_estimator_load(path: *const c_char, out: *mut *mut RhfeEstimator) -> RhfeStatus {
    guard(|| {
        let path = PathBuf::from(cstr(path, "path")?);
        put(out, RhfeEstimator(EstimatorGain::load(&path)?))
    })
}

/// # Safety
/// `h` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rhfe_estimator_save(h: *const RhfeEstimator, path: *const c_char) -> RhfeStatus {
    guard(|| {
        let h = handle(h, "estimator")?;
        h.0.save(&PathBuf::from(cstr(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `h` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn rhfe_estimator_free(h: *mut RhfeEstimator) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Horizon, channel counts and delay of an estimator. Any output pointer
/// may be NULL.
///
/// # Safety
/// `h` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn rhfe_estimator_dims(
    h: *const RhfeEstimator,
    l: *mut usize,
    n_y: *mut usize,
    n_u: *mut usize,
    n_f: *mut usize,
    tau: *mut usize,
) -> RhfeStatus {
    guard(|| {
        let g = &handle(h, "estimator")?.0;
        for (p, v) in [(l, g.l), (n_y, g.n_y), (n_u, g.n_u), (n_f, g.n_f), (tau, g.tau)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Fault estimate for one window. `y_win` is `L x n_y` and `u_win` is
/// `L x n_u`, oldest sample first; writes `n_f` values to `f_hat`, the
/// estimate of `f(k - tau)` where `k` is the newest sample.
///
/// # Safety
/// Array sizes must match the estimator dimensions.
#[no_mangle]
pub unsafe extern "C" fn rhfe_estimator_estimate(
    h: *const RhfeEstimator,
    y_win: *const f64,
    u_win: *const f64,
    f_hat: *mut f64,
) -> RhfeStatus {
    guard(|| {
        let g = &handle(h, "estimator")?.0;
        if f_hat.is_null() {
            return Err(Fail::Null("f_hat"));
        }
        let win = StackedWindow {
            y_win: Vector::from_column_slice(slice(y_win, g.l * g.n_y, "y_win")?),
            u_win: Vector::from_column_slice(slice(u_win, g.l * g.n_u, "u_win")?),
            k: g.l - 1,
            l: g.l,
        };
        let est = g.estimate(&win)?;
        std::slice::from_raw_parts_mut(f_hat, g.n_f).copy_from_slice(est.as_slice());
        Ok(())
    })
}
