//! C ABI for loading embedding datasets and checkpoints and scoring samples.
//!
//! Every fallible function returns a [`SelfiStatus`]; on failure the message
//! is available from [`selfi_last_error`] on the calling thread. Handles are
//! opaque and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use selfi::dataio::{read_checkpoint, read_dataset, EmbeddingDataset};
use selfi::experiments::evaluate;
use selfi::linalg::Vector;
use selfi::metrics::{roc_auc, ScoredSet};
use selfi::model::{run, Mode, Sample};
use selfi::optim::Checkpoint;
use selfi::Error;

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfiStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    DimMismatch = 5,
    Degenerate = 6,
    Panic = 7,
}

/// Model variants.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SelfiMode {
    BaselineVisual = 0,
    IdentityProbe = 1,
    FaiaConcat = 2,
    FaiaIafm = 3,
    FullSelfi = 4,
}

impl From<Mode> for SelfiMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::BaselineVisual => SelfiMode::BaselineVisual,
            Mode::IdentityProbe => SelfiMode::IdentityProbe,
            Mode::FaiaConcat => SelfiMode::FaiaConcat,
            Mode::FaiaIafm => SelfiMode::FaiaIafm,
            Mode::FullSelfi => SelfiMode::FullSelfi,
        }
    }
}

/// Opaque embedding dataset.
pub struct SelfiDataset {
    inner: EmbeddingDataset,
}

/// Opaque trained model.
pub struct SelfiModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> SelfiStatus {
    match e {
        Error::Io(_) => SelfiStatus::Io,
        Error::BadMagic { .. }
        | Error::Version { .. }
        | Error::Truncated(_)
        | Error::TooLarge { .. }
        | Error::Malformed(_)
        | Error::Json(_)
        | Error::InvalidLabel(_) => SelfiStatus::Format,
        Error::DimMismatch(_) | Error::Shape { .. } => SelfiStatus::DimMismatch,
        Error::SingleClass(_) | Error::EmptyDataset(_) | Error::MixedGroup(_) | Error::MissingGroups => {
            SelfiStatus::Degenerate
        }
        _ => SelfiStatus::InvalidArgument,
    }
}

/// Runs `f`, recording errors and converting panics into [`SelfiStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), (SelfiStatus, String)>) -> SelfiStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SelfiStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SelfiStatus::Panic
        }
    }
}

fn lib(e: Error) -> (SelfiStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (SelfiStatus, String) {
    (SelfiStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg<'a>(path: *const c_char) -> Result<&'a str, (SelfiStatus, String)> {
    if path.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(path)
        .to_str()
        .map_err(|_| (SelfiStatus::InvalidArgument, "path is not valid UTF-8".to_string()))
}

unsafe fn slice_arg<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (SelfiStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (SelfiStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn selfi_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn selfi_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Reads a `.semb` file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selfi_dataset_read(path: *const c_char, out: *mut *mut SelfiDataset) -> SelfiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ds = read_dataset(path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(SelfiDataset { inner: ds }));
        Ok(())
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `ds` must come from [`selfi_dataset_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn selfi_dataset_free(ds: *mut SelfiDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// # Safety
/// Pointers must be valid; `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfi_dataset_len(ds: *const SelfiDataset, out: *mut usize) -> SelfiStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        *out_arg(out, "out")? = ds.inner.len();
        Ok(())
    })
}

/// # Safety
/// Pointers must be valid; `ds` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfi_dataset_dims(
    ds: *const SelfiDataset,
    d_id: *mut usize,
    d_backbone: *mut usize,
) -> SelfiStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        *out_arg(d_id, "d_id")? = ds.inner.d_id;
        *out_arg(d_backbone, "d_backbone")? = ds.inner.d_backbone;
        Ok(())
    })
}

/// Reads a `.sckpt` file. On success `*out` owns a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn selfi_model_read(path: *const c_char, out: *mut *mut SelfiModel) -> SelfiStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ck = read_checkpoint(path_arg(path)?).map_err(lib)?;
        *out = Box::into_raw(Box::new(SelfiModel { inner: ck }));
        Ok(())
    })
}

/// Releases a model handle; null is ignored.
///
/// # Safety
/// `model` must come from [`selfi_model_read`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn selfi_model_free(model: *mut SelfiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// Pointers must be valid; `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn selfi_model_info(
    model: *const SelfiModel,
    mode: *mut SelfiMode,
    d_id: *mut usize,
    d_backbone: *mut usize,
    h_rel: *mut usize,
) -> SelfiStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = &m.inner.config.model;
        *out_arg(mode, "mode")? = cfg.mode.into();
        *out_arg(d_id, "d_id")? = cfg.dims.d_id;
        *out_arg(d_backbone, "d_backbone")? = cfg.dims.d_backbone;
        *out_arg(h_rel, "h_rel")? = cfg.dims.h_rel;
        Ok(())
    })
}

/// Scores one sample. `*score` receives the fake-class probability and
/// `*rho` the relevance score, or NaN for modes without a relevance
/// predictor. `rho` may be null.
///
/// # Safety
/// `f_id` and `f_vis` must point to `d_id` and `d_backbone` doubles.
#[no_mangle]
pub unsafe extern "C" fn selfi_model_predict(
    model: *const SelfiModel,
    f_id: *const f64,
    d_id: usize,
    f_vis: *const f64,
    d_backbone: usize,
    score: *mut f64,
    rho: *mut f64,
) -> SelfiStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let cfg = &m.inner.config.model;
        if d_id != cfg.dims.d_id || d_backbone != cfg.dims.d_backbone {
            return Err((
                SelfiStatus::DimMismatch,
                format!(
                    "model expects ({}, {}), got ({d_id}, {d_backbone})",
                    cfg.dims.d_id, cfg.dims.d_backbone
                ),
            ));
        }
        let score = out_arg(score, "score")?;
        let sample = Sample {
            f_id: Vector::new(slice_arg(f_id, d_id, "f_id")?.to_vec()).map_err(lib)?,
            f_vis: Vector::new(slice_arg(f_vis, d_backbone, "f_vis")?.to_vec()).map_err(lib)?,
            y: 0,
            method: 0,
            group: None,
        };
        let t = run(&m.inner.params, &sample, cfg).map_err(lib)?;
        *score = t.score();
        if let Some(r) = rho.as_mut() {
            *r = t.rho.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// Frame-level AUC of `model` on `ds`, and video-level AUC (NaN when the
/// dataset has no group ids). `video_auc` may be null.
///
/// # Safety
/// Pointers must be valid; handles must be live.
#[no_mangle]
pub unsafe extern "C" fn selfi_model_evaluate(
    model: *const SelfiModel,
    ds: *const SelfiDataset,
    frame_auc: *mut f64,
    video_auc: *mut f64,
) -> SelfiStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let ds = ds.as_ref().ok_or_else(|| null("dataset"))?;
        let frame = out_arg(frame_auc, "frame_auc")?;
        let cfg = &m.inner.config.model;
        ds.inner.check_dims(cfg.dims).map_err(lib)?;
        let ev = evaluate(&m.inner.params, cfg, &ds.inner.samples).map_err(lib)?;
        *frame = ev.frame_auc;
        if let Some(v) = video_auc.as_mut() {
            *v = ev.video_auc.unwrap_or(f64::NAN);
        }
        Ok(())
    })
}

/// ROC-AUC of `n` scores against 0/1 labels.
///
/// # Safety
/// `scores` and `labels` must point to `n` elements.
#[no_mangle]
pub unsafe extern "C" fn selfi_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> SelfiStatus {
    guard(|| {
        let scores = slice_arg(scores, n, "scores")?;
        let labels = slice_arg(labels, n, "labels")?;
        let out = out_arg(out, "out")?;
        *out = roc_auc(&ScoredSet::new(scores.to_vec(), labels.to_vec())).map_err(lib)?;
        Ok(())
    })
}
