//! C ABI over `transdr`.
//!
//! Models are opaque `TdrModel` handles created by [`tdr_model_load`] or
//! [`tdr_pca_fit`] and released with [`tdr_model_free`]. Every fallible
//! function returns a [`TdrStatus`]; on failure [`tdr_last_error`] gives a
//! message for the calling thread.
//!
//! Images cross the boundary as `n × height × width × channels` row-major
//! `double` arrays with values in [0, 1]; codes as `n × code_dim`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use transdr::baselines::pca_fit;
use transdr::data::ImageBatch;
use transdr::training::Model;
use transdr::{Error, Tensor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TdrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque model handle.
pub struct TdrModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> TdrStatus {
    match e {
        Error::Numeric(_) => TdrStatus::Numeric,
        Error::Parse { .. } | Error::Io { .. } | Error::Checkpoint(_) => TdrStatus::Data,
        Error::Config(_) => TdrStatus::Config,
        Error::Dimension { .. } | Error::Shape(_) | Error::Contract(_) => TdrStatus::InvalidArgument,
    }
}

struct Failure(TdrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TdrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            TdrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TdrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(TdrStatus::NullPointer, format!("{what} is null"))
}

unsafe fn model_ref<'a>(m: *const TdrModel) -> Result<&'a Model, Failure> {
    m.as_ref().map(|m| &m.inner).ok_or_else(|| null("model"))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Failure(TdrStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn input<'a>(ptr: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if ptr.is_null() {
        return Err(null(what));
    }
    if len == 0 {
        return Err(Failure(TdrStatus::InvalidArgument, format!("{what} is empty")));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

unsafe fn write_out(out: *mut f64, out_len: usize, values: &[f64]) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if out_len < values.len() {
        return Err(Failure(
            TdrStatus::BufferTooSmall,
            format!("output needs {} values, buffer holds {out_len}", values.len()),
        ));
    }
    std::ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

fn image_len(model: &Model, n: usize) -> Result<usize, Failure> {
    let (h, w, c) = model.image_shape();
    n.checked_mul(h * w * c)
        .ok_or_else(|| Failure(TdrStatus::InvalidArgument, "size overflow".into()))
}

fn images(model: &Model, pixels: &[f64], n: usize) -> Result<ImageBatch, Failure> {
    let (h, w, c) = model.image_shape();
    let t = Tensor::new(&[n, h, w, c], pixels.to_vec())?;
    Ok(ImageBatch::new(t, None)?)
}

/// Message describing the last failure on this thread; empty after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn tdr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tdr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads any checkpoint written by the library or the `transdr` CLI.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_load(path: *const c_char, out: *mut *mut TdrModel) -> TdrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let (inner, _) = Model::load(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(TdrModel { inner }));
        Ok(())
    })
}

/// Writes the model as a checkpoint (without training state).
///
/// # Safety
/// `model` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_save(model: *const TdrModel, path: *const c_char) -> TdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        m.save(None, path_arg(path)?)?;
        Ok(())
    })
}

/// Fits PCA with `k` components to `n` images of `height × width × channels`.
///
/// # Safety
/// `pixels` must hold `n·height·width·channels` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdr_pca_fit(
    pixels: *const f64,
    n: usize,
    height: usize,
    width: usize,
    channels: usize,
    k: usize,
    out: *mut *mut TdrModel,
) -> TdrStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let d = height
            .checked_mul(width)
            .and_then(|v| v.checked_mul(channels))
            .filter(|&d| d > 0)
            .ok_or_else(|| Failure(TdrStatus::InvalidArgument, "bad image shape".into()))?;
        let len = n
            .checked_mul(d)
            .ok_or_else(|| Failure(TdrStatus::InvalidArgument, "size overflow".into()))?;
        let data = Tensor::new(&[n, d], input(pixels, len, "pixels")?.to_vec())?;
        let inner = Model::Pca {
            model: pca_fit(&data, k)?,
            image_shape: (height, width, channels),
        };
        *out = Box::into_raw(Box::new(TdrModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_free(model: *mut TdrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Code width per image, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_code_dim(model: *const TdrModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.code_dim())
}

/// Writes the expected image shape.
///
/// # Safety
/// `model` must be a live handle; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_image_shape(
    model: *const TdrModel,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> TdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        if height.is_null() || width.is_null() || channels.is_null() {
            return Err(null("shape output"));
        }
        let (h, w, c) = m.image_shape();
        *height = h;
        *width = w;
        *channels = c;
        Ok(())
    })
}

/// Model kind ("transformer-dr", "transformer-drr", "ae" or "pca") as a
/// static string, or null for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_kind(model: *const TdrModel) -> *const c_char {
    let Some(m) = model.as_ref() else {
        return std::ptr::null();
    };
    let s: &'static [u8] = match m.inner.kind() {
        "transformer-dr" => b"transformer-dr\0",
        "transformer-drr" => b"transformer-drr\0",
        "ae" => b"ae\0",
        _ => b"pca\0",
    };
    s.as_ptr().cast()
}

/// Encodes `n` images into `codes_out` (`n × code_dim` values).
///
/// # Safety
/// `pixels` must hold `n` images of the model's shape; `codes_out` must
/// hold `codes_len` values.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_encode(
    model: *const TdrModel,
    pixels: *const f64,
    n: usize,
    codes_out: *mut f64,
    codes_len: usize,
) -> TdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let batch = images(m, input(pixels, image_len(m, n)?, "pixels")?, n)?;
        let codes = m.encode(&batch)?;
        write_out(codes_out, codes_len, codes.data())
    })
}

/// Decodes `n` codes into `pixels_out` (`n × height × width × channels`).
/// Outputs are not clamped.
///
/// # Safety
/// `codes` must hold `n × code_dim` values; `pixels_out` must hold
/// `pixels_len` values.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_decode(
    model: *const TdrModel,
    codes: *const f64,
    n: usize,
    pixels_out: *mut f64,
    pixels_len: usize,
) -> TdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let k = m.code_dim();
        let len = n
            .checked_mul(k)
            .ok_or_else(|| Failure(TdrStatus::InvalidArgument, "size overflow".into()))?;
        let t = Tensor::new(&[n, k], input(codes, len, "codes")?.to_vec())?;
        let out = m.decode(&t)?;
        write_out(pixels_out, pixels_len, out.pixels().data())
    })
}

/// Encodes then decodes `n` images.
///
/// # Safety
/// As for [`tdr_model_encode`], with `pixels_out` holding `pixels_len` values.
#[no_mangle]
pub unsafe extern "C" fn tdr_model_reconstruct(
    model: *const TdrModel,
    pixels: *const f64,
    n: usize,
    pixels_out: *mut f64,
    pixels_len: usize,
) -> TdrStatus {
    guard(|| {
        let m = model_ref(model)?;
        let batch = images(m, input(pixels, image_len(m, n)?, "pixels")?, n)?;
        let out = m.reconstruct(&batch)?;
        write_out(pixels_out, pixels_len, out.pixels().data())
    })
}
