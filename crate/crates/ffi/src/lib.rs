//! C ABI for the `rdrp` crate.
//!
//! Every fallible function returns an [`RdrpStatus`]; on failure the message
//! is available from [`rdrp_last_error_message`] on the same thread. Models
//! and calibrations are opaque handles released with their `_free` function.
//! Feature matrices are row-major `n x d` arrays of `double`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use rdrp::allocation::{greedy_allocate, AllocationInstance};
use rdrp::conformal::{
    calibrate, predict_calibrated, BinarySearchConfig, CalibrationForm, ConformalCalibration, McConfig,
    RdrpConfig,
};
use rdrp::dataset::{RctDataset, RctSample};
use rdrp::evaluation::{aucc, cost_curve};
use rdrp::model::{load_params, predict_roi, save_params, train, MlpParams, Objective, TrainConfig};
use rdrp::RdrpError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdrpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Format = 5,
    AssumptionViolation = 6,
    Degenerate = 7,
    CalibrationDegenerate = 8,
    SizeLimit = 9,
    Panic = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RdrpForm {
    Product = 0,
    Ratio = 1,
    Sum = 2,
    Identity = 3,
}

impl From<CalibrationForm> for RdrpForm {
    fn from(f: CalibrationForm) -> Self {
        match f {
            CalibrationForm::Product => RdrpForm::Product,
            CalibrationForm::Ratio => RdrpForm::Ratio,
            CalibrationForm::Sum => RdrpForm::Sum,
            CalibrationForm::Identity => RdrpForm::Identity,
        }
    }
}

/// A trained network.
pub struct RdrpModel {
    params: MlpParams,
}

/// A frozen conformal calibration.
pub struct RdrpCalibration {
    inner: ConformalCalibration,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &RdrpError) -> RdrpStatus {
    match e {
        RdrpError::InvalidConfig(_) | RdrpError::InvalidArgument(_) => RdrpStatus::InvalidArgument,
        RdrpError::Shape { .. } => RdrpStatus::ShapeMismatch,
        RdrpError::DegenerateDataset(_)
        | RdrpError::DegenerateBatch { .. }
        | RdrpError::DegenerateNormalization(_) => RdrpStatus::Degenerate,
        RdrpError::AssumptionViolation(_) | RdrpError::RoiScope { .. } => RdrpStatus::AssumptionViolation,
        RdrpError::CalibrationDegenerate(_) => RdrpStatus::CalibrationDegenerate,
        RdrpError::SizeLimit { .. } => RdrpStatus::SizeLimit,
        RdrpError::Io { .. } => RdrpStatus::Io,
        RdrpError::Schema(_)
        | RdrpError::Parse { .. }
        | RdrpError::Validation { .. }
        | RdrpError::Format(_)
        | RdrpError::Corruption(_)
        | RdrpError::Csv(_)
        | RdrpError::Json(_) => RdrpStatus::Format,
    }
}

struct Fail(RdrpStatus, String);

impl From<RdrpError> for Fail {
    fn from(e: RdrpError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(RdrpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> RdrpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RdrpStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            RdrpStatus::Panic
        }
    }
}

unsafe fn slice_in<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn path_in(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(RdrpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn rows<'a>(x: &'a [f64], n: usize, d: usize) -> Result<Vec<&'a [f64]>, Fail> {
    if d == 0 {
        return Err(Fail(RdrpStatus::InvalidArgument, "d must be positive".into()));
    }
    Ok((0..n).map(|i| &x[i * d..(i + 1) * d]).collect())
}

unsafe fn dataset_in(
    x: *const f64,
    t: *const u8,
    y_r: *const f64,
    y_c: *const f64,
    n: usize,
    d: usize,
) -> Result<RctDataset, Fail> {
    let n_d = n
        .checked_mul(d)
        .ok_or_else(|| Fail(RdrpStatus::InvalidArgument, "n * d overflows".into()))?;
    let x = slice_in(x, n_d, "x")?;
    let t = slice_in(t, n, "t")?;
    let y_r = slice_in(y_r, n, "y_r")?;
    let y_c = slice_in(y_c, n, "y_c")?;
    let samples = rows(x, n, d)?
        .into_iter()
        .enumerate()
        .map(|(i, xi)| RctSample {
            x: xi.to_vec(),
            t: t[i] != 0,
            y_r: y_r[i],
            y_c: y_c[i],
        })
        .collect();
    Ok(RctDataset::with_dim(samples, d)?)
}

unsafe fn handle_out<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("out"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn rdrp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not have been freed, or be null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a weight file written by `rdrp train` or [`rdrp_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_load(path: *const c_char, out: *mut *mut RdrpModel) -> RdrpStatus {
    guard(|| {
        let params = load_params(&path_in(path)?)?;
        handle_out(out, RdrpModel { params })
    })
}

/// Trains a DRP network on an RCT sample. `t[i]` is nonzero for treated rows.
///
/// # Safety
/// `x` holds `n * d` values; `t`, `y_r`, `y_c` hold `n` values; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_train(
    x: *const f64,
    t: *const u8,
    y_r: *const f64,
    y_c: *const f64,
    n: usize,
    d: usize,
    epochs: usize,
    hidden: usize,
    learning_rate: f64,
    seed: u64,
    out: *mut *mut RdrpModel,
) -> RdrpStatus {
    guard(|| {
        let ds = dataset_in(x, t, y_r, y_c, n, d)?;
        let cfg = TrainConfig {
            epochs,
            hidden,
            learning_rate,
            seed,
            objective: Objective::Drp,
            ..TrainConfig::default()
        };
        let params = train(&ds, &cfg)?;
        handle_out(out, RdrpModel { params })
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_save(model: *const RdrpModel, path: *const c_char) -> RdrpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        Ok(save_params(&m.params, &path_in(path)?)?)
    })
}

/// Feature dimension the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_input_dim(model: *const RdrpModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.input_dim())
}

/// Hidden width of the model, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_hidden(model: *const RdrpModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.hidden())
}

/// Deterministic ROI predictions for `n` rows.
///
/// # Safety
/// `x` holds `n * d` values and `out` has room for `n`.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_predict(
    model: *const RdrpModel,
    x: *const f64,
    n: usize,
    d: usize,
    out: *mut f64,
) -> RdrpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let x = slice_in(x, n * d, "x")?;
        let out = slice_out(out, n, "out")?;
        for (o, xi) in out.iter_mut().zip(rows(x, n, d)?) {
            *o = predict_roi(&m.params, xi)?;
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be a handle from this library, or null. Freeing twice is
/// undefined behavior.
#[no_mangle]
pub unsafe extern "C" fn rdrp_model_free(model: *mut RdrpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Fits the conformal calibration of `model` on an RCT calibration sample.
///
/// # Safety
/// Same layout rules as [`rdrp_model_train`]; `model` must be live.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_fit(
    model: *const RdrpModel,
    x: *const f64,
    t: *const u8,
    y_r: *const f64,
    y_c: *const f64,
    n: usize,
    d: usize,
    alpha: f64,
    mc_passes: usize,
    retention: f64,
    seed: u64,
    out: *mut *mut RdrpCalibration,
) -> RdrpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = dataset_in(x, t, y_r, y_c, n, d)?;
        let cfg = RdrpConfig {
            alpha,
            mc: McConfig {
                passes: mc_passes,
                retention,
                seed,
            },
            search: BinarySearchConfig::default(),
            ..RdrpConfig::default()
        };
        let inner = calibrate(&m.params, &ds, &cfg)?;
        handle_out(out, RdrpCalibration { inner })
    })
}

/// Parses a calibration JSON document.
///
/// # Safety
/// `json` must be NUL-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_from_json(
    json: *const c_char,
    out: *mut *mut RdrpCalibration,
) -> RdrpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let s = CStr::from_ptr(json)
            .to_str()
            .map_err(|_| Fail(RdrpStatus::InvalidArgument, "json is not UTF-8".into()))?;
        let inner = ConformalCalibration::from_json(s)?;
        handle_out(out, RdrpCalibration { inner })
    })
}

/// Serializes a calibration; release the string with [`rdrp_string_free`].
///
/// # Safety
/// `cal` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_to_json(
    cal: *const RdrpCalibration,
    out: *mut *mut c_char,
) -> RdrpStatus {
    guard(|| {
        let c = cal.as_ref().ok_or_else(|| null("calibration"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let s = CString::new(c.inner.to_json()?).map_err(|e| Fail(RdrpStatus::Format, e.to_string()))?;
        *out = s.into_raw();
        Ok(())
    })
}

/// Conformal quantile (may be `+inf`), or NaN for a null handle.
///
/// # Safety
/// `cal` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_q_hat(cal: *const RdrpCalibration) -> f64 {
    cal.as_ref().map_or(f64::NAN, |c| c.inner.q_hat)
}

/// Calibration-set `roi*`, or NaN for a null handle.
///
/// # Safety
/// `cal` must be live or null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_roi_star(cal: *const RdrpCalibration) -> f64 {
    cal.as_ref().map_or(f64::NAN, |c| c.inner.roi_star)
}

/// # Safety
/// `cal` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_form(cal: *const RdrpCalibration, out: *mut RdrpForm) -> RdrpStatus {
    guard(|| {
        let c = cal.as_ref().ok_or_else(|| null("calibration"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = c.inner.form.into();
        Ok(())
    })
}

/// # Safety
/// `cal` must be a handle from this library, or null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_calibration_free(cal: *mut RdrpCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Calibrated predictions for `n` rows. Any of the output arrays may be
/// null to skip it; non-null ones need room for `n` values.
///
/// # Safety
/// `model` and `cal` must be live; `x` holds `n * d` values.
#[no_mangle]
pub unsafe extern "C" fn rdrp_predict_calibrated(
    model: *const RdrpModel,
    cal: *const RdrpCalibration,
    x: *const f64,
    n: usize,
    d: usize,
    roi_hat: *mut f64,
    r_hat: *mut f64,
    lo: *mut f64,
    hi: *mut f64,
    roi_tilde: *mut f64,
) -> RdrpStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let c = cal.as_ref().ok_or_else(|| null("calibration"))?;
        let x = slice_in(x, n * d, "x")?;
        let preds = predict_calibrated(&m.params, &c.inner, &rows(x, n, d)?)?;
        let write = |p: *mut f64, get: fn(&rdrp::conformal::RoiPrediction) -> f64| {
            if !p.is_null() {
                let s = slice::from_raw_parts_mut(p, n);
                for (o, pr) in s.iter_mut().zip(&preds) {
                    *o = get(pr);
                }
            }
        };
        write(roi_hat, |p| p.roi_hat);
        write(r_hat, |p| p.r_hat);
        write(lo, |p| p.lo);
        write(hi, |p| p.hi);
        write(roi_tilde, |p| p.roi_tilde);
        Ok(())
    })
}

/// Greedy budgeted assignment by true ROI. `z` receives 0/1 per individual.
///
/// # Safety
/// `tau_r`, `tau_c` and `z` hold `n` values; the totals may be null.
#[no_mangle]
pub unsafe extern "C" fn rdrp_greedy_allocate(
    tau_r: *const f64,
    tau_c: *const f64,
    n: usize,
    budget: f64,
    z: *mut u8,
    total_revenue: *mut f64,
    total_cost: *mut f64,
) -> RdrpStatus {
    guard(|| {
        let inst = AllocationInstance::new(
            slice_in(tau_r, n, "tau_r")?.to_vec(),
            slice_in(tau_c, n, "tau_c")?.to_vec(),
            budget,
        )?;
        let a = greedy_allocate(&inst)?;
        for (o, v) in slice_out(z, n, "z")?.iter_mut().zip(&a.z) {
            *o = u8::from(*v);
        }
        if let Some(r) = total_revenue.as_mut() {
            *r = a.total_revenue;
        }
        if let Some(c) = total_cost.as_mut() {
            *c = a.total_cost;
        }
        Ok(())
    })
}

/// AUCC of `scores` on an RCT sample.
///
/// # Safety
/// `scores`, `t`, `y_r`, `y_c` hold `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn rdrp_aucc(
    scores: *const f64,
    t: *const u8,
    y_r: *const f64,
    y_c: *const f64,
    n: usize,
    buckets: usize,
    out: *mut f64,
) -> RdrpStatus {
    guard(|| {
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let zeros = vec![0.0; n];
        let ds = dataset_in(zeros.as_ptr(), t, y_r, y_c, n, 1)?;
        let scores = slice_in(scores, n, "scores")?;
        *out = aucc(&cost_curve(scores, &ds, buckets)?);
        Ok(())
    })
}
