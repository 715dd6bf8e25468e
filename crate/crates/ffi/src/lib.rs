//! C ABI over the pietsp inference path.
//!
//! A checkpoint is loaded into an opaque `PietspModel` handle. Histories
//! cross the boundary in compressed-row form: set `j` holds
//! `ids[offsets[j] .. offsets[j + 1]]`, so `offsets` has `n_sets + 1`
//! entries starting at 0. Every fallible call returns a `PietspStatus`;
//! on failure `pietsp_last_error` describes what went wrong on that thread.
//!
//! The header `include/pietsp.h` is generated from this file at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pietsp::checkpoint::Checkpoint;
use pietsp::dataset::PreparedSample;
use pietsp::metrics::top_k;
use pietsp::model::{forward_sample, ModelParams, Variant};
use pietsp::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PietspStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Checkpoint = 4,
    InvalidInput = 5,
    BufferTooSmall = 6,
    Internal = 7,
}

/// A loaded model. Only ever handled through a pointer.
pub struct PietspModel {
    params: ModelParams,
    variant: Variant,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn fail(status: PietspStatus, msg: impl Into<String>) -> PietspStatus {
    set_error(msg);
    status
}

fn status_of(err: &Error) -> PietspStatus {
    match err {
        Error::Io { .. } => PietspStatus::Io,
        Error::Checkpoint(_) | Error::Json(_) => PietspStatus::Checkpoint,
        _ => PietspStatus::InvalidInput,
    }
}

/// Runs `body`, turning panics into `Internal`.
fn guarded(body: impl FnOnce() -> PietspStatus) -> PietspStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => {
            if status == PietspStatus::Ok {
                set_error("");
            }
            status
        }
        Err(_) => fail(PietspStatus::Internal, "internal panic"),
    }
}

/// # Safety
/// `ids` must hold `offsets[n_sets]` values and `offsets` must hold `n_sets + 1`.
unsafe fn read_history(
    ids: *const usize,
    offsets: *const usize,
    n_sets: usize,
) -> Result<Vec<Vec<usize>>, PietspStatus> {
    if offsets.is_null() {
        return Err(fail(PietspStatus::NullPointer, "offsets is null"));
    }
    if n_sets == 0 {
        return Err(fail(PietspStatus::InvalidInput, "history needs at least one set"));
    }
    let offsets = std::slice::from_raw_parts(offsets, n_sets + 1);
    if offsets[0] != 0 || offsets.windows(2).any(|w| w[1] < w[0]) {
        return Err(fail(
            PietspStatus::InvalidInput,
            "offsets must start at 0 and never decrease",
        ));
    }
    let total = offsets[n_sets];
    if total > 0 && ids.is_null() {
        return Err(fail(PietspStatus::NullPointer, "ids is null"));
    }
    let ids: &[usize] = if total == 0 {
        &[]
    } else {
        std::slice::from_raw_parts(ids, total)
    };
    Ok(offsets.windows(2).map(|w| ids[w[0]..w[1]].to_vec()).collect())
}

impl PietspModel {
    fn scores(&self, history: &[Vec<usize>]) -> Result<Vec<f64>, PietspStatus> {
        let dims = self.params.dims();
        let sample = PreparedSample::from_history(history, &[], dims.max_len, dims.vocab_size)
            .map_err(|e| fail(status_of(&e), e.to_string()))?;
        forward_sample(&sample, &self.params, self.variant)
            .map(|t| t.logits)
            .map_err(|e| fail(status_of(&e), e.to_string()))
    }
}

/// Load a checkpoint file. On success `*out` owns a model that must be
/// released with `pietsp_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_load(path: *const c_char, out: *mut *mut PietspModel) -> PietspStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(PietspStatus::NullPointer, "path and out must not be null");
        }
        *out = ptr::null_mut();
        let Ok(path) = CStr::from_ptr(path).to_str() else {
            return fail(PietspStatus::InvalidUtf8, "path is not valid UTF-8");
        };
        let loaded = Checkpoint::load(Path::new(path)).and_then(|ck| Ok((ck.params()?, ck.config.variant)));
        match loaded {
            Ok((params, variant)) => {
                *out = Box::into_raw(Box::new(PietspModel { params, variant }));
                PietspStatus::Ok
            }
            Err(e) => fail(status_of(&e), e.to_string()),
        }
    })
}

/// Release a model. Null is ignored.
///
/// # Safety
/// `model` must come from `pietsp_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_free(model: *mut PietspModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Domain size |E|, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_vocab_size(model: *const PietspModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.dims().vocab_size)
}

/// Embedding width D, or 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_dim(model: *const PietspModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.dims().dim)
}

/// Longest history K the model reads; older sets are ignored. 0 for a null model.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_max_len(model: *const PietspModel) -> usize {
    model.as_ref().map_or(0, |m| m.params.dims().max_len)
}

/// Score every domain element for the next set. `out_scores` must have room
/// for `out_len >= pietsp_model_vocab_size(model)` values.
///
/// # Safety
/// Pointers must be valid for the lengths described in the module docs.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_score(
    model: *const PietspModel,
    ids: *const usize,
    offsets: *const usize,
    n_sets: usize,
    out_scores: *mut f64,
    out_len: usize,
) -> PietspStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(PietspStatus::NullPointer, "model is null");
        };
        if out_scores.is_null() {
            return fail(PietspStatus::NullPointer, "out_scores is null");
        }
        let vocab = model.params.dims().vocab_size;
        if out_len < vocab {
            return fail(
                PietspStatus::BufferTooSmall,
                format!("out_len {out_len} < vocabulary size {vocab}"),
            );
        }
        let history = match read_history(ids, offsets, n_sets) {
            Ok(h) => h,
            Err(status) => return status,
        };
        match model.scores(&history) {
            Ok(scores) => {
                std::slice::from_raw_parts_mut(out_scores, vocab).copy_from_slice(&scores);
                PietspStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Write the `k` best element ids, best first, into `out_ids`, and their
/// scores into `out_scores` unless it is null. `*out_written` receives
/// `min(k, vocab_size)`.
///
/// # Safety
/// `out_ids` (and `out_scores` when not null) must have room for `k` values.
#[no_mangle]
pub unsafe extern "C" fn pietsp_model_predict_topk(
    model: *const PietspModel,
    ids: *const usize,
    offsets: *const usize,
    n_sets: usize,
    k: usize,
    out_ids: *mut usize,
    out_scores: *mut f64,
    out_written: *mut usize,
) -> PietspStatus {
    guarded(|| {
        let Some(model) = model.as_ref() else {
            return fail(PietspStatus::NullPointer, "model is null");
        };
        if out_ids.is_null() || out_written.is_null() {
            return fail(PietspStatus::NullPointer, "out_ids and out_written must not be null");
        }
        *out_written = 0;
        let history = match read_history(ids, offsets, n_sets) {
            Ok(h) => h,
            Err(status) => return status,
        };
        let scores = match model.scores(&history) {
            Ok(s) => s,
            Err(status) => return status,
        };
        let best = top_k(&scores, k);
        std::slice::from_raw_parts_mut(out_ids, best.len()).copy_from_slice(&best);
        if !out_scores.is_null() {
            let dst = std::slice::from_raw_parts_mut(out_scores, best.len());
            for (d, &id) in dst.iter_mut().zip(&best) {
                *d = scores[id];
            }
        }
        *out_written = best.len();
        PietspStatus::Ok
    })
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into this library on the
/// same thread.
#[no_mangle]
pub extern "C" fn pietsp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pietsp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
