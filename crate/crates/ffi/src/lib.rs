//! C interface to `smtk` models.
//!
//! Every function returns an [`SmtkStatus`]; on failure the message is
//! available from [`smtk_last_error`] on the same thread. Handles come from
//! `smtk_model_build` or `smtk_model_load` and are released with
//! `smtk_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use smtk::geometry::PointCloud;
use smtk::network::{Model, NetworkConfig};
use smtk::tensor::Tensor;
use smtk::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmtkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Format = 4,
    Io = 5,
    Numerical = 6,
    /// A Rust panic was caught at the boundary.
    Internal = 7,
}

/// Opaque model handle.
pub struct SmtkModel {
    model: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SmtkStatus {
    match e {
        Error::Config(_) | Error::Parse { .. } => SmtkStatus::Config,
        Error::Format(_) => SmtkStatus::Format,
        Error::Io { .. } => SmtkStatus::Io,
        Error::Diverged { .. } => SmtkStatus::Numerical,
        _ => SmtkStatus::InvalidArgument,
    }
}

struct Fail(SmtkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> SmtkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SmtkStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            SmtkStatus::Internal
        }
    }
}

fn null(what: &str) -> Fail {
    Fail(SmtkStatus::NullPointer, format!("{what} is null"))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(SmtkStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn model_ref<'a>(m: *const SmtkModel) -> Result<&'a Model, Fail> {
    m.as_ref().map(|h| &h.model).ok_or_else(|| null("model"))
}

unsafe fn emit(out: *mut *mut SmtkModel, model: Model) {
    *out = Box::into_raw(Box::new(SmtkModel { model }));
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn smtk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Builds a freshly initialised model from `key = value` config text (an
/// empty string gives the defaults).
///
/// # Safety
/// `config` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_build(config: *const c_char, seed: u64, out: *mut *mut SmtkModel) -> SmtkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = NetworkConfig::parse(text(config, "config")?)?;
        emit(out, Model::build(&config, seed)?);
        Ok(())
    })
}

/// # Safety
/// `path` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_load(path: *const c_char, out: *mut *mut SmtkModel) -> SmtkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        emit(out, Model::load(Path::new(text(path, "path")?))?);
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_save(model: *const SmtkModel, path: *const c_char) -> SmtkStatus {
    guard(|| {
        model_ref(model)?.save(Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// Number of distinct learnable scalars.
///
/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_param_count(model: *const SmtkModel, out: *mut u64) -> SmtkStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.count_parameters().total as u64;
        Ok(())
    })
}

/// # Safety
/// `model` must come from this library and `out` be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_num_classes(model: *const SmtkModel, out: *mut usize) -> SmtkStatus {
    guard(|| {
        let m = model_ref(model)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = m.config.classes;
        Ok(())
    })
}

/// Per-point class logits for `n` points.
///
/// `positions` holds `n * 3` doubles. `features` holds `n * in_channels`
/// doubles, or is null to use the positions. `logits` receives
/// `n * classes` doubles, row-major; `logits_len` is its capacity.
///
/// # Safety
/// All non-null pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_forward(
    model: *const SmtkModel,
    positions: *const f64,
    features: *const f64,
    n: usize,
    logits: *mut f64,
    logits_len: usize,
) -> SmtkStatus {
    guard(|| {
        let m = model_ref(model)?;
        if positions.is_null() {
            return Err(null("positions"));
        }
        if logits.is_null() {
            return Err(null("logits"));
        }
        if n == 0 {
            return Err(Fail(SmtkStatus::InvalidArgument, "no points".into()));
        }
        let need = n * m.config.classes;
        if logits_len < need {
            return Err(Fail(
                SmtkStatus::InvalidArgument,
                format!("logits buffer holds {logits_len} values, {need} needed"),
            ));
        }
        let pos = Tensor::new(vec![n, 3], std::slice::from_raw_parts(positions, n * 3).to_vec())?;
        let cloud = if features.is_null() {
            PointCloud::from_positions(pos, None)?
        } else {
            let c = m.config.in_channels;
            let f = Tensor::new(vec![n, c], std::slice::from_raw_parts(features, n * c).to_vec())?;
            PointCloud::new(pos, f, None)?
        };
        let out = m.forward(&cloud)?;
        if out.data().iter().any(|v| !v.is_finite()) {
            return Err(Fail(SmtkStatus::Numerical, "non-finite logits".into()));
        }
        std::slice::from_raw_parts_mut(logits, need).copy_from_slice(out.data());
        Ok(())
    })
}

/// Releases a handle; null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn smtk_model_free(model: *mut SmtkModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
