//! C ABI over `wavemlp`.
//!
//! Every function returns a [`WmStatus`]. On failure a message is kept per
//! thread and can be read with [`wm_last_error`]. Models are opaque handles
//! created by `wm_model_from_*` and released with [`wm_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use wavemlp::model::{build, count_flops, count_params, ArchConfig, ModelParams};
use wavemlp::wave::{oracle_superpose, superpose_amplitude, superpose_phase};
use wavemlp::{Error, Tensor};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Dimension = 3,
    Domain = 4,
    Config = 5,
    UndefinedPhase = 6,
    UnsupportedMode = 7,
    Numeric = 8,
    Io = 9,
    Parse = 10,
    BufferTooSmall = 11,
    Internal = 12,
    Panic = 13,
}

/// Opaque model handle.
pub struct WmModel {
    inner: ModelParams,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> WmStatus {
    match e {
        Error::Dimension(_) => WmStatus::Dimension,
        Error::Domain(_) => WmStatus::Domain,
        Error::Config(_) => WmStatus::Config,
        Error::UndefinedPhase => WmStatus::UndefinedPhase,
        Error::UnsupportedMode(_) => WmStatus::UnsupportedMode,
        Error::Numeric { .. } | Error::Diverged { .. } => WmStatus::Numeric,
        Error::Io(_) => WmStatus::Io,
        Error::Json(_) | Error::Parse(_) => WmStatus::Parse,
        Error::Contract(_) => WmStatus::Internal,
    }
}

fn fail(status: WmStatus, msg: impl Into<String>) -> WmStatus {
    set_error(msg.into());
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), WmStatus>) -> WmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WmStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(WmStatus::Panic, format!("panic: {}", msg))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, WmStatus>;
}

impl<T> OrStatus<T> for wavemlp::Result<T> {
    fn or_status(self) -> Result<T, WmStatus> {
        self.map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), WmStatus> {
    if p.is_null() {
        Err(fail(WmStatus::NullPointer, format!("{} is null", name)))
    } else {
        Ok(())
    }
}

unsafe fn read_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, WmStatus> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(WmStatus::InvalidUtf8, format!("{} is not valid UTF-8", name)))
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn wm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Amplitude and phase of the sum of two waves from the closed forms.
/// Writes NaN to `phase` and returns `WM_STATUS_UNDEFINED_PHASE` when both
/// amplitudes are zero.
///
/// # Safety
/// `amplitude` and `phase` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_superpose(
    a1: f64,
    a2: f64,
    theta1: f64,
    theta2: f64,
    amplitude: *mut f64,
    phase: *mut f64,
) -> WmStatus {
    guard(|| {
        non_null(amplitude, "amplitude")?;
        non_null(phase, "phase")?;
        *amplitude = superpose_amplitude(a1, a2, theta1, theta2).or_status()?;
        match superpose_phase(a1, a2, theta1, theta2) {
            Ok(p) => {
                *phase = p;
                Ok(())
            }
            Err(e) => {
                *phase = f64::NAN;
                Err(fail(status_of(&e), e.to_string()))
            }
        }
    })
}

/// Same quantities through complex addition.
///
/// # Safety
/// `amplitude` and `phase` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_superpose_oracle(
    a1: f64,
    a2: f64,
    theta1: f64,
    theta2: f64,
    amplitude: *mut f64,
    phase: *mut f64,
) -> WmStatus {
    guard(|| {
        non_null(amplitude, "amplitude")?;
        non_null(phase, "phase")?;
        let o = oracle_superpose(a1, a2, theta1, theta2);
        *amplitude = o.amplitude();
        *phase = o.phase();
        Ok(())
    })
}

unsafe fn emit_model(cfg: ArchConfig, seed: u64, out: *mut *mut WmModel) -> Result<(), WmStatus> {
    let inner = build(&cfg, seed).or_status()?;
    *out = Box::into_raw(Box::new(WmModel { inner }));
    Ok(())
}

/// Builds a preset (`"T*"`, `"T"`, `"S"`, `"M"`, `"B"`, `"tiny"`).
///
/// # Safety
/// `name` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_from_preset(name: *const c_char, seed: u64, out: *mut *mut WmModel) -> WmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let name = read_str(name, "name")?;
        emit_model(ArchConfig::preset(name).or_status()?, seed, out)
    })
}

/// Builds a model from a JSON architecture.
///
/// # Safety
/// `json` must be a nul-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_from_json(json: *const c_char, seed: u64, out: *mut *mut WmModel) -> WmStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = ptr::null_mut();
        let text = read_str(json, "json")?;
        emit_model(ArchConfig::from_json(text).or_status()?, seed, out)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from `wm_model_from_*` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn wm_model_free(model: *mut WmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_param_count(model: *const WmModel, out: *mut u64) -> WmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = count_params(&(*model).inner) as u64;
        Ok(())
    })
}

/// Multiply-accumulate count of one `height × width` forward pass.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_flops(model: *const WmModel, height: usize, width: usize, out: *mut u64) -> WmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        if height == 0 || width == 0 {
            return Err(fail(WmStatus::Dimension, "resolution must be positive"));
        }
        *out = count_flops(&(*model).inner, height, width);
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn wm_model_num_classes(model: *const WmModel, out: *mut usize) -> WmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).inner.config.num_classes;
        Ok(())
    })
}

/// Logits for `batch` channels-last images of `height × width × channels`
/// doubles. `logits` receives `batch × num_classes` values row-major.
///
/// # Safety
/// `images` must hold `batch·height·width·channels` readable doubles and
/// `logits` `logits_len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wm_model_forward(
    model: *const WmModel,
    images: *const f64,
    batch: usize,
    height: usize,
    width: usize,
    channels: usize,
    logits: *mut f64,
    logits_len: usize,
) -> WmStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(images, "images")?;
        non_null(logits, "logits")?;
        let m = &(*model).inner;
        let need = batch * m.config.num_classes;
        if logits_len < need {
            return Err(fail(
                WmStatus::BufferTooSmall,
                format!("logits buffer holds {}, need {}", logits_len, need),
            ));
        }
        let n = batch
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .and_then(|v| v.checked_mul(channels))
            .ok_or_else(|| fail(WmStatus::Dimension, "image size overflows"))?;
        let data = std::slice::from_raw_parts(images, n).to_vec();
        let x = Tensor::new(vec![batch, height, width, channels], data).or_status()?;
        let y = m.forward(&x).or_status()?;
        std::slice::from_raw_parts_mut(logits, need).copy_from_slice(y.data());
        Ok(())
    })
}
