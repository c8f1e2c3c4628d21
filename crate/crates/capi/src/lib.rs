//! C ABI for the lactate-threshold estimator.
//!
//! Models trained with `ltcli train` are loaded into an opaque [`LtModel`]
//! handle; [`lt_estimate`] runs the deployment path (feature channels only,
//! no lactate) and returns the estimated threshold speed and pace. All
//! functions return an [`LtStatus`] code; no function panics across the
//! boundary.

use lactate_threshold::domain::{Stage, TestSession};
use lactate_threshold::standardize::resample_features;
use lactate_threshold::train::SavedModel;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every function in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LtStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The model file could not be read.
    Io = 3,
    /// The model file is malformed.
    BadModel = 4,
    /// The stage data violates the test protocol or is too short.
    BadSession = 5,
    /// The estimated lactate curve has no threshold.
    EstimationFailed = 6,
    /// An internal invariant failed.
    Internal = 7,
}

/// Opaque handle to a loaded model.
pub struct LtModel {
    inner: SavedModel,
}

/// Estimated threshold for one athlete.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LtEstimate {
    /// Threshold running speed, km/h.
    pub speed_kmh: f64,
    /// Threshold pace, s/km.
    pub pace_s_per_km: f64,
    /// Estimated blood lactate at the threshold, mmol/L.
    pub lactate_mmol_l: f64,
}

fn guard(f: impl FnOnce() -> LtStatus) -> LtStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or(LtStatus::Internal)
}

/// Version of the underlying library as a NUL-terminated static string.
#[no_mangle]
pub extern "C" fn lt_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Short English description of a status code (static storage).
#[no_mangle]
pub extern "C" fn lt_status_message(status: LtStatus) -> *const c_char {
    let msg: &'static str = match status {
        LtStatus::Ok => "ok\0",
        LtStatus::NullArgument => "required pointer argument was null\0",
        LtStatus::InvalidUtf8 => "string argument was not valid UTF-8\0",
        LtStatus::Io => "model file could not be read\0",
        LtStatus::BadModel => "model file is malformed\0",
        LtStatus::BadSession => "stage data violates the test protocol\0",
        LtStatus::EstimationFailed => "estimated curve has no threshold\0",
        LtStatus::Internal => "internal error\0",
    };
    msg.as_ptr() as *const c_char
}

/// Loads a model file produced by `ltcli train` into a new handle.
///
/// On success writes the handle to `out_model`; the caller owns it and must
/// release it with [`lt_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out_model` a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn lt_model_load(
    path: *const c_char,
    out_model: *mut *mut LtModel,
) -> LtStatus {
    if path.is_null() || out_model.is_null() {
        return LtStatus::NullArgument;
    }
    guard(|| {
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return LtStatus::InvalidUtf8,
        };
        let content = match std::fs::read_to_string(path) {
            Ok(c) => c,
            Err(_) => return LtStatus::Io,
        };
        match SavedModel::from_text(&content) {
            Ok(inner) => {
                *out_model = Box::into_raw(Box::new(LtModel { inner }));
                LtStatus::Ok
            }
            Err(_) => LtStatus::BadModel,
        }
    })
}

/// Parses a model from an in-memory NUL-terminated text buffer.
///
/// # Safety
/// `text` must be a valid NUL-terminated string and `out_model` a valid
/// pointer to writable memory.
#[no_mangle]
pub unsafe extern "C" fn lt_model_from_text(
    text: *const c_char,
    out_model: *mut *mut LtModel,
) -> LtStatus {
    if text.is_null() || out_model.is_null() {
        return LtStatus::NullArgument;
    }
    guard(|| {
        let text = match CStr::from_ptr(text).to_str() {
            Ok(t) => t,
            Err(_) => return LtStatus::InvalidUtf8,
        };
        match SavedModel::from_text(text) {
            Ok(inner) => {
                *out_model = Box::into_raw(Box::new(LtModel { inner }));
                LtStatus::Ok
            }
            Err(_) => LtStatus::BadModel,
        }
    })
}

/// Releases a handle returned by [`lt_model_load`] or
/// [`lt_model_from_text`]. Passing null is a no-op.
///
/// # Safety
/// `model` must be a handle returned by this library, released at most once.
#[no_mangle]
pub unsafe extern "C" fn lt_model_free(model: *mut LtModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of hidden units of the loaded model, or 0 for a null handle.
///
/// # Safety
/// `model` must be a live handle returned by this library, or null.
#[no_mangle]
pub unsafe extern "C" fn lt_model_hidden_units(model: *const LtModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.inner.config.hidden_units)
}

/// Number of recurrent delay taps of the loaded model, or 0 for a null
/// handle.
///
/// # Safety
/// `model` must be a live handle returned by this library, or null.
#[no_mangle]
pub unsafe extern "C" fn lt_model_delays(model: *const LtModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.delays)
}

/// Estimates the lactate threshold of one athlete from an incremental test
/// without lactate measurements.
///
/// `speeds` holds the completed stage speeds in km/h, following the test
/// protocol ladder (9.0, 10.5, 12.0, 13.5, 14.5, 15.5, ...). `hr_end`,
/// `hrr_1min` and `rpe` are parallel arrays of length `n_stages` with heart
/// rate at stage end, heart rate after one minute of recovery, and perceived
/// exertion (Borg 0-10). Arrays the model's feature set does not use may be
/// null; channels the model uses must be non-null.
///
/// # Safety
/// All non-null pointers must reference readable arrays of `n_stages`
/// elements; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn lt_estimate(
    model: *const LtModel,
    speeds: *const f64,
    hr_end: *const f64,
    hrr_1min: *const f64,
    rpe: *const f64,
    n_stages: usize,
    out: *mut LtEstimate,
) -> LtStatus {
    if model.is_null() || speeds.is_null() || out.is_null() {
        return LtStatus::NullArgument;
    }
    let model = &(*model).inner;
    let needs = model.features.n_inputs();
    if (needs >= 2 && hr_end.is_null())
        || (needs >= 3 && hrr_1min.is_null())
        || (needs >= 4 && rpe.is_null())
    {
        return LtStatus::NullArgument;
    }
    let channel = |ptr: *const f64, i: usize| {
        if ptr.is_null() {
            0.0
        } else {
            *ptr.add(i)
        }
    };
    let mut stages = Vec::with_capacity(n_stages);
    for i in 0..n_stages {
        stages.push(Stage {
            speed: *speeds.add(i),
            lactate: None,
            hr_end: channel(hr_end, i),
            hrr_1min: channel(hrr_1min, i),
            rpe_respiratory: channel(rpe, i),
            rpe_muscular: channel(rpe, i),
        });
    }
    guard(|| {
        let session = match TestSession::new("athlete", stages, "") {
            Ok(s) => s,
            Err(_) => return LtStatus::BadSession,
        };
        let series = match resample_features(&session, model.k) {
            Ok(s) => s,
            Err(_) => return LtStatus::BadSession,
        };
        match model.estimate(&series) {
            Ok(point) => {
                *out = LtEstimate {
                    speed_kmh: point.speed_at_lt,
                    pace_s_per_km: point.pace_at_lt,
                    lactate_mmol_l: point.lactate_at_lt,
                };
                LtStatus::Ok
            }
            Err(_) => LtStatus::EstimationFailed,
        }
    })
}
