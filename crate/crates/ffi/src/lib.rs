//! C interface to the intent/entity engine.
//!
//! Every function returns a [`DnluStatus`]. On failure the message is kept in
//! a per-thread slot readable with [`dnlu_last_error`]. Strings handed out by
//! the library must be released with [`dnlu_string_free`]; models with
//! [`dnlu_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use diet_nlu::corpus::{class_distribution, compute_stats, load_dataset};
use diet_nlu::error::Error;
use diet_nlu::featurizer::{hash_embed, parse_provider_spec};
use diet_nlu::pipeline::TrainedModel;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DnluStatus {
    Ok = 0,
    InvalidArgument = 1,
    Io = 2,
    Format = 3,
    ProviderMismatch = 4,
    Numeric = 5,
    Panic = 6,
}

/// Opaque handle to a loaded model.
pub struct DnluModel {
    inner: TrainedModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}

struct Failure(DnluStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => DnluStatus::Io,
            Error::ProviderMismatch(_) => DnluStatus::ProviderMismatch,
            Error::Numeric(_) | Error::Shape(_) => DnluStatus::Numeric,
            Error::Config(_) => DnluStatus::InvalidArgument,
            _ => DnluStatus::Format,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: &str) -> Failure {
    Failure(DnluStatus::InvalidArgument, msg.to_string())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> DnluStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DnluStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            DnluStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(&format!("{what} is not valid UTF-8")))
}

fn to_c_string(s: String) -> Result<*mut c_char, Failure> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| Failure(DnluStatus::Format, "output contains a NUL byte".into()))
}

/// Loads a model file. `dense_spec` may be null to rebuild the dense provider
/// recorded in the model, or a spec such as `hash:64:7` or `file:PATH`.
///
/// # Safety
/// `path` and a non-null `dense_spec` must be NUL-terminated strings;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn dnlu_model_load(
    path: *const c_char,
    dense_spec: *const c_char,
    out: *mut *mut DnluModel,
) -> DnluStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = ptr::null_mut();
        let path = read_str(path, "path")?;
        let provider = if dense_spec.is_null() {
            None
        } else {
            parse_provider_spec(read_str(dense_spec, "dense_spec")?)?
        };
        let inner = TrainedModel::load(path, provider)?;
        *out = Box::into_raw(Box::new(DnluModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`dnlu_model_load`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn dnlu_model_free(model: *mut DnluModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of intents the model ranks.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn dnlu_model_intent_count(model: *const DnluModel, out: *mut usize) -> DnluStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        *out = m.inner.intents().len();
        Ok(())
    })
}

/// Ranks intents for `text` and writes a JSON object with `intent`,
/// `ranking` and `entities`. Free the result with [`dnlu_string_free`].
///
/// # Safety
/// `model` must be a live handle, `text` NUL-terminated, `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn dnlu_predict_json(
    model: *const DnluModel,
    text: *const c_char,
    out_json: *mut *mut c_char,
) -> DnluStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(invalid("out_json is null"));
        }
        *out_json = ptr::null_mut();
        let m = model.as_ref().ok_or_else(|| invalid("model is null"))?;
        let text = read_str(text, "text")?;
        let p = m.inner.predict_text(text)?;
        let v = serde_json::json!({
            "intent": p.intent(),
            "ranking": p.ranking,
            "entities": p.entities,
        });
        *out_json = to_c_string(v.to_string())?;
        Ok(())
    })
}

/// Writes dataset statistics and the class distribution of a JSONL corpus
/// as JSON. Free the result with [`dnlu_string_free`].
///
/// # Safety
/// `path` must be NUL-terminated and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn dnlu_dataset_stats_json(path: *const c_char, out_json: *mut *mut c_char) -> DnluStatus {
    guard(|| {
        if out_json.is_null() {
            return Err(invalid("out_json is null"));
        }
        *out_json = ptr::null_mut();
        let ds = load_dataset(read_str(path, "path")?)?;
        let v = serde_json::json!({
            "stats": compute_stats(&ds)?,
            "class_distribution": class_distribution(&ds),
        });
        *out_json = to_c_string(v.to_string())?;
        Ok(())
    })
}

/// Fills `out[0..dim]` with the unit-norm hash embedding of `key`.
///
/// # Safety
/// `key` must be NUL-terminated and `out` must hold `dim` floats.
#[no_mangle]
pub unsafe extern "C" fn dnlu_hash_embed(key: *const c_char, dim: usize, seed: u64, out: *mut f32) -> DnluStatus {
    guard(|| {
        if out.is_null() {
            return Err(invalid("out is null"));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let v = hash_embed(read_str(key, "key")?, dim, seed);
        ptr::copy_nonoverlapping(v.as_ptr(), out, dim);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library, or be null.
#[no_mangle]
pub unsafe extern "C" fn dnlu_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn dnlu_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn dnlu_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
