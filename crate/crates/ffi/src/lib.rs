//! C ABI over `kshift`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free`. Every fallible call returns a
//! [`KsStatus`]; on failure the message is available from
//! [`ks_last_error_message`] on the same thread until the next failing call.
//! Panics are caught and reported as `KS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kshift::artifact::ArtifactSpec;
use kshift::data::{write_phantom_dir, PhantomConfig};
use kshift::io::{read_real, write_real};
use kshift::nn::{load_model, predict_proba, Model};
use kshift::{Error, Tensor};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// Invalid parameter, configuration or string encoding.
    InvalidArgument = 2,
    InvalidShape = 3,
    Io = 4,
    /// Malformed file contents.
    Format = 5,
    /// Metric undefined for the input, e.g. a single class.
    UndefinedMetric = 6,
    InvalidState = 7,
    /// Output buffer too small; the required length was written back.
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque real-valued tensor.
pub struct KsTensor(Tensor<f64>);

/// Opaque trained classifier.
pub struct KsModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> KsStatus {
    match e {
        Error::InvalidShape(_) => KsStatus::InvalidShape,
        Error::InvalidParam(_) | Error::InvalidRange { .. } | Error::Config(_) | Error::Json(_) | Error::InvalidLabel { .. } => {
            KsStatus::InvalidArgument
        }
        Error::Format(_) | Error::Csv(_) => KsStatus::Format,
        Error::MissingFile(_) | Error::Io { .. } => KsStatus::Io,
        Error::UndefinedMetric(_) => KsStatus::UndefinedMetric,
        Error::InvalidState(_) | Error::Divergence(_) | Error::Layer { .. } => KsStatus::InvalidState,
    }
}

struct Fail(KsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            KsStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), Fail> {
    if p.is_null() {
        Err(Fail(KsStatus::NullArgument, format!("{name} is null")))
    } else {
        Ok(())
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    non_null(p, name)?;
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(KsStatus::InvalidArgument, format!("{name} is not UTF-8")))
}

unsafe fn put<T>(out: *mut *mut T, value: T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `dims[0..ndim]` and `data[0..prod(dims)]` into a new tensor.
///
/// # Safety
/// `dims` and `data` must be valid for the stated lengths; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_new(dims: *const usize, ndim: usize, data: *const f64, out: *mut *mut KsTensor) -> KsStatus {
    guard(|| {
        non_null(dims, "dims")?;
        non_null(out, "out")?;
        let dims = std::slice::from_raw_parts(dims, ndim).to_vec();
        let len: usize = dims.iter().product();
        if len > 0 {
            non_null(data, "data")?;
        }
        let data = if len == 0 { Vec::new() } else { std::slice::from_raw_parts(data, len).to_vec() };
        put(out, KsTensor(Tensor::new(dims, data)?));
        Ok(())
    })
}

/// # Safety
/// `t` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_free(t: *mut KsTensor) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_ndim(t: *const KsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.ndim())
}

/// Element count.
///
/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_len(t: *const KsTensor) -> usize {
    t.as_ref().map_or(0, |t| t.0.len())
}

/// Writes up to `cap` dimensions into `dims`.
///
/// # Safety
/// `dims` must be writable for `cap` elements.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_dims(t: *const KsTensor, dims: *mut usize, cap: usize) -> KsStatus {
    guard(|| {
        non_null(t, "tensor")?;
        let d = (*t).0.dims();
        if cap < d.len() {
            return Err(Fail(KsStatus::BufferTooSmall, format!("need {} dims, have {cap}", d.len())));
        }
        non_null(dims, "dims")?;
        ptr::copy_nonoverlapping(d.as_ptr(), dims, d.len());
        Ok(())
    })
}

/// Row-major element pointer, valid while the handle lives.
///
/// # Safety
/// `t` must be a live tensor handle.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_data(t: *const KsTensor) -> *const f64 {
    t.as_ref().map_or(ptr::null(), |t| t.0.data().as_ptr())
}

/// # Safety
/// `path` must be a nul-terminated string; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_read_mrt1(path: *const c_char, out: *mut *mut KsTensor) -> KsStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        non_null(out, "out")?;
        put(out, KsTensor(read_real(path)?));
        Ok(())
    })
}

/// # Safety
/// `t` must be a live handle; `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn ks_tensor_write_mrt1(t: *const KsTensor, path: *const c_char) -> KsStatus {
    guard(|| {
        non_null(t, "tensor")?;
        let path = str_arg(path, "path")?;
        write_real(path, &(*t).0)?;
        Ok(())
    })
}

/// Applies an artifact spec given as JSON (e.g.
/// `{"kind":"rician","snr":10,"seed":1}`) to a 2-D image, as item `index`
/// of a dataset.
///
/// # Safety
/// Pointers must be valid; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_artifact_apply(
    spec_json: *const c_char,
    image: *const KsTensor,
    index: u64,
    out: *mut *mut KsTensor,
) -> KsStatus {
    guard(|| {
        let text = str_arg(spec_json, "spec_json")?;
        non_null(image, "image")?;
        non_null(out, "out")?;
        let spec: ArtifactSpec = serde_json::from_str(text).map_err(Error::from)?;
        spec.params.validate()?;
        put(out, KsTensor(spec.apply_indexed(&(*image).0, index)?));
        Ok(())
    })
}

/// Writes a phantom dataset directory; `config_json` may be null or a
/// (partial) phantom config object.
///
/// # Safety
/// Strings must be nul-terminated when non-null.
#[no_mangle]
pub unsafe extern "C" fn ks_phantom_generate(config_json: *const c_char, out_dir: *const c_char) -> KsStatus {
    guard(|| {
        let cfg: PhantomConfig = if config_json.is_null() {
            PhantomConfig::default()
        } else {
            serde_json::from_str(str_arg(config_json, "config_json")?).map_err(Error::from)?
        };
        let dir = PathBuf::from(str_arg(out_dir, "out_dir")?);
        write_phantom_dir(&cfg, dir)?;
        Ok(())
    })
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `dir` must be nul-terminated; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_model_load(dir: *const c_char, out: *mut *mut KsModel) -> KsStatus {
    guard(|| {
        let dir = str_arg(dir, "dir")?;
        non_null(out, "out")?;
        put(out, KsModel(load_model(dir)?));
        Ok(())
    })
}

/// # Safety
/// `m` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ks_model_free(m: *mut KsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Positive-class probabilities for a `[H, W]` image or `[N, H, W]` stack,
/// in eval mode. Writes `N` scores; with `cap < N` nothing is written,
/// `*n_out` receives `N` and `KS_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `scores` must be writable for `cap` values; other pointers valid.
#[no_mangle]
pub unsafe extern "C" fn ks_model_predict(
    m: *const KsModel,
    images: *const KsTensor,
    scores: *mut f64,
    cap: usize,
    n_out: *mut usize,
) -> KsStatus {
    guard(|| {
        non_null(m, "model")?;
        non_null(images, "images")?;
        non_null(n_out, "n_out")?;
        let x = &(*images).0;
        let stack: Vec<Tensor<f64>> = match *x.dims() {
            [_, _] => vec![x.clone()],
            [n, h, w] => x
                .data()
                .chunks(h * w)
                .take(n)
                .map(|c| Tensor::new(vec![h, w], c.to_vec()))
                .collect::<kshift::Result<_>>()?,
            _ => return Err(Error::InvalidShape(format!("expected [H, W] or [N, H, W], got {:?}", x.dims())).into()),
        };
        *n_out = stack.len();
        if cap < stack.len() {
            return Err(Fail(KsStatus::BufferTooSmall, format!("need {} scores, have {cap}", stack.len())));
        }
        non_null(scores, "scores")?;
        let p = predict_proba(&(*m).0, &stack, 64)?;
        ptr::copy_nonoverlapping(p.as_ptr(), scores, p.len());
        Ok(())
    })
}

/// Number of normalization layers, or 0 for a null handle.
///
/// # Safety
/// `m` must be a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ks_model_num_norm_layers(m: *const KsModel) -> usize {
    m.as_ref().map_or(0, |m| m.0.clone().num_norm_layers())
}

/// AUROC of `scores` against 0/1 `labels`, both of length `n`.
///
/// # Safety
/// Arrays must be valid for `n` elements; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_auroc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> KsStatus {
    guard(|| {
        non_null(scores, "scores")?;
        non_null(labels, "labels")?;
        non_null(out, "out")?;
        let s = std::slice::from_raw_parts(scores, n);
        let l: Vec<usize> = std::slice::from_raw_parts(labels, n).iter().map(|&v| v as usize).collect();
        *out = kshift::metrics::auroc(s, &l)?;
        Ok(())
    })
}
