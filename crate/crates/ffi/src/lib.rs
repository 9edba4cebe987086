//! C ABI over the scenenet core.
//!
//! Every fallible call returns a [`ScnStatus`]; on failure a message for the
//! calling thread is available from [`scn_last_error`]. Models are opaque
//! [`ScnModel`] handles released with [`scn_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scenenet::corpus::AudioClip;
use scenenet::features::{FeatureConfig, FeatureExtractor, FeatureMap, FEATURE_CHANNELS};
use scenenet::nn::{load_model, predict, ModelParams, NetworkConfig, CLASS_COUNT};
use scenenet::quantize::{audit_budget, quantize_value, truncate_to_16, widen_to_32};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Shape = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Loaded network: preset layout plus parameters.
pub struct ScnModel {
    config: NetworkConfig,
    params: ModelParams,
}

/// Budget audit result.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScnBudget {
    pub nonzero: u64,
    pub bits: u32,
    pub size_kb: f64,
    pub limit_kb: f64,
    /// 1 when within the limit, else 0.
    pub pass: i32,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).expect("nul bytes removed"));
}

fn fail(status: ScnStatus, msg: impl Into<String>) -> ScnStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> ScnStatus) -> ScnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => {
            if status == ScnStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(ScnStatus::Panic, "internal panic"),
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, ScnStatus> {
    if p.is_null() {
        return Err(fail(ScnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(ScnStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Message describing the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn scn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn scn_status_name(status: ScnStatus) -> *const c_char {
    let s: &'static CStr = match status {
        ScnStatus::Ok => c"ok",
        ScnStatus::NullPointer => c"null pointer",
        ScnStatus::InvalidArgument => c"invalid argument",
        ScnStatus::Io => c"i/o error",
        ScnStatus::Format => c"malformed file",
        ScnStatus::Shape => c"shape mismatch",
        ScnStatus::BufferTooSmall => c"buffer too small",
        ScnStatus::Panic => c"internal panic",
    };
    s.as_ptr()
}

/// Number of output classes.
#[no_mangle]
pub extern "C" fn scn_class_count() -> u32 {
    CLASS_COUNT as u32
}

/// Load a model file for preset `"paper"` or `"tiny"` at input `height x width x 3`.
///
/// # Safety
/// `path` and `preset` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn scn_model_load(
    path: *const c_char,
    preset: *const c_char,
    height: u32,
    width: u32,
    out: *mut *mut ScnModel,
) -> ScnStatus {
    guard(|| {
        if out.is_null() {
            return fail(ScnStatus::NullPointer, "out is null");
        }
        *out = ptr::null_mut();
        let (path, preset) = match (str_arg(path, "path"), str_arg(preset, "preset")) {
            (Ok(p), Ok(n)) => (p, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let config = match NetworkConfig::preset(preset, height as usize, width as usize) {
            Ok(c) => c,
            Err(e) => return fail(ScnStatus::InvalidArgument, e.to_string()),
        };
        let params = match load_model(Path::new(path)) {
            Ok(p) => p,
            Err(scenenet::nn::ModelIoError::Io(e)) => return fail(ScnStatus::Io, format!("{path}: {e}")),
            Err(e) => return fail(ScnStatus::Format, format!("{path}: {e}")),
        };
        if let Err(e) = config.check_params(&params) {
            return fail(ScnStatus::Shape, e.to_string());
        }
        *out = Box::into_raw(Box::new(ScnModel { config, params }));
        ScnStatus::Ok
    })
}

/// Release a model; null is ignored.
///
/// # Safety
/// `model` must come from [`scn_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn scn_model_free(model: *mut ScnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Expected feature shape of a model.
///
/// # Safety
/// `model` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn scn_model_input_shape(
    model: *const ScnModel,
    height: *mut u32,
    width: *mut u32,
    channels: *mut u32,
) -> ScnStatus {
    guard(|| {
        if model.is_null() || height.is_null() || width.is_null() || channels.is_null() {
            return fail(ScnStatus::NullPointer, "null argument");
        }
        let (h, w, c) = (*model).config.input;
        *height = h as u32;
        *width = w as u32;
        *channels = c as u32;
        ScnStatus::Ok
    })
}

/// Class probabilities for one feature map laid out `(band, frame, channel)` row-major.
///
/// # Safety
/// `features` must hold `len` floats; `probs` must have room for `probs_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn scn_model_predict(
    model: *const ScnModel,
    features: *const f32,
    len: usize,
    probs: *mut f64,
    probs_len: usize,
) -> ScnStatus {
    guard(|| {
        if model.is_null() || features.is_null() || probs.is_null() {
            return fail(ScnStatus::NullPointer, "null argument");
        }
        let model = &*model;
        if probs_len < CLASS_COUNT {
            return fail(ScnStatus::BufferTooSmall, format!("need {CLASS_COUNT} outputs"));
        }
        let (h, w, _) = model.config.input;
        let values = std::slice::from_raw_parts(features, len).to_vec();
        let map = match FeatureMap::new(h, w, values) {
            Ok(m) => m,
            Err(e) => return fail(ScnStatus::Shape, e.to_string()),
        };
        match predict(&model.config, &model.params, &map) {
            Ok(p) => {
                std::slice::from_raw_parts_mut(probs, CLASS_COUNT).copy_from_slice(&p);
                ScnStatus::Ok
            }
            Err(e) => fail(ScnStatus::Shape, e.to_string()),
        }
    })
}

/// Audit a model against `limit_kb`.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn scn_model_audit(
    model: *const ScnModel,
    limit_kb: f64,
    out: *mut ScnBudget,
) -> ScnStatus {
    guard(|| {
        if model.is_null() || out.is_null() {
            return fail(ScnStatus::NullPointer, "null argument");
        }
        if !(limit_kb > 0.0) {
            return fail(ScnStatus::InvalidArgument, "limit_kb must be positive");
        }
        match audit_budget(&(*model).params, limit_kb) {
            Ok(r) => {
                *out = ScnBudget {
                    nonzero: r.nonzero_count as u64,
                    bits: r.bits_per_param,
                    size_kb: r.size_kb,
                    limit_kb: r.limit_kb,
                    pass: r.pass as i32,
                };
                ScnStatus::Ok
            }
            Err(e) => fail(ScnStatus::Format, e.to_string()),
        }
    })
}

/// Log-mel feature map of mono samples; `out` receives `n_mels * width * 3` floats.
///
/// # Safety
/// `samples` must hold `n` floats and `out` must have room for `out_len` floats.
#[no_mangle]
pub unsafe extern "C" fn scn_extract_features(
    samples: *const f32,
    n: usize,
    sample_rate: u32,
    n_mels: u32,
    width: u32,
    out: *mut f32,
    out_len: usize,
) -> ScnStatus {
    guard(|| {
        if samples.is_null() || out.is_null() {
            return fail(ScnStatus::NullPointer, "null argument");
        }
        let need = n_mels as usize * width as usize * FEATURE_CHANNELS;
        if out_len < need {
            return fail(ScnStatus::BufferTooSmall, format!("need {need} outputs"));
        }
        let clip = match AudioClip::new(std::slice::from_raw_parts(samples, n).to_vec(), sample_rate) {
            Ok(c) => c,
            Err(e) => return fail(ScnStatus::InvalidArgument, e.to_string()),
        };
        let config = FeatureConfig {
            n_mels: n_mels as usize,
            target_width: width as usize,
            ..Default::default()
        };
        let map = FeatureExtractor::new(config, sample_rate).and_then(|x| x.extract(&clip));
        match map {
            Ok(m) => {
                std::slice::from_raw_parts_mut(out, need).copy_from_slice(m.values());
                ScnStatus::Ok
            }
            Err(e) => fail(ScnStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Upper 16 bits of a 32-bit float word.
#[no_mangle]
pub extern "C" fn scn_truncate_to_16(word: u32) -> u16 {
    truncate_to_16(word)
}

/// Float whose upper 16 bits are `word` and lower 16 bits zero.
#[no_mangle]
pub extern "C" fn scn_widen_to_32(word: u16) -> f32 {
    widen_to_32(word)
}

/// `widen(truncate(x))`.
#[no_mangle]
pub extern "C" fn scn_quantize_value(x: f32) -> f32 {
    quantize_value(x)
}
