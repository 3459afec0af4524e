//! C ABI over `ood-core`.
//!
//! Matrices and heads cross the boundary as opaque handles owned by the
//! caller and released with the matching `*_free`. Every function returns
//! an [`OodStatus`]; on failure [`ood_last_error_message`] describes the
//! error on the calling thread. Panics never unwind into C.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ood_core::adaptation::{extract_features, ClusterHead};
use ood_core::clustering::{cluster_accuracy, kmeans};
use ood_core::error::Error;
use ood_core::evaluation::roc_auc;
use ood_core::io::{
    l2_normalize, load_checkpoint, load_embeddings, save_embeddings, DatasetManifest, EmbeddingMatrix, LabelKind,
    LabelVector, Split,
};
use ood_core::scoring::{confidence_score, fit_gaussians, knn_score, mahalanobis_score};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Numerical = 5,
    Panic = 6,
}

/// Immutable n×d embedding matrix.
pub struct OodMatrix {
    inner: EmbeddingMatrix,
}

/// Trained cluster head.
pub struct OodHead {
    inner: ClusterHead,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> OodStatus {
    match e {
        Error::Io(_) => OodStatus::Io,
        Error::Json(_)
        | Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated(_)
        | Error::ChecksumMismatch { .. }
        | Error::Csv(_) => OodStatus::Format,
        Error::NonFinite { .. } | Error::ZeroNorm { .. } | Error::NotPositiveDefinite { .. } | Error::Diverged { .. } => {
            OodStatus::Numerical
        }
        Error::Stage { source, .. } => status_of(source),
        _ => OodStatus::InvalidArgument,
    }
}

struct Failure(OodStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(OodStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(OodStatus::InvalidArgument, msg.into())
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> OodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OodStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            OodStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn out_slice<'a, T>(p: *mut T, len: usize, needed: usize, what: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(invalid(format!("{what} holds {len} elements, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(p, needed))
}

unsafe fn in_slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_handle<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or null if none.
///
/// The string stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ood_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies `n*d` row-major floats into a new matrix.
///
/// # Safety
/// `data` must point to `n*d` readable floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_from_data(
    data: *const f32,
    n: usize,
    d: usize,
    out: *mut *mut OodMatrix,
) -> OodStatus {
    guard(|| {
        let len = n.checked_mul(d).ok_or_else(|| invalid("n*d overflows"))?;
        let values = in_slice(data, len, "data")?.to_vec();
        let inner = EmbeddingMatrix::new(n, d, values)?;
        write_handle(out, OodMatrix { inner })
    })
}

/// Loads an `.emb` file, verifying its checksum and manifest sidecar.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_load(path: *const c_char, out: *mut *mut OodMatrix) -> OodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let (inner, _) = load_embeddings(path)?;
        write_handle(out, OodMatrix { inner })
    })
}

/// Saves a matrix with a manifest sidecar. `split` is one of
/// `train_normal`, `test_in`, `test_out`.
///
/// # Safety
/// String arguments must be NUL-terminated; `m` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_save(
    m: *const OodMatrix,
    path: *const c_char,
    name: *const c_char,
    split: *const c_char,
) -> OodStatus {
    guard(|| {
        let m = as_ref(m, "matrix")?;
        let path = path_arg(path, "path")?;
        let name = path_arg(name, "name")?;
        let split: Split = path_arg(split, "split")?
            .to_string_lossy()
            .parse()
            .map_err(|e: Error| invalid(e.to_string()))?;
        let manifest = DatasetManifest::describe(name.to_string_lossy(), split, "ffi", &m.inner);
        save_embeddings(&m.inner, &manifest, path)?;
        Ok(())
    })
}

/// Row count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_rows(m: *const OodMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.n())
}

/// Column count, or 0 for a null handle.
///
/// # Safety
/// `m` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_cols(m: *const OodMatrix) -> usize {
    m.as_ref().map_or(0, |m| m.inner.d())
}

/// Copies the row-major values into `out`, which must hold `n*d` floats.
///
/// # Safety
/// `out` must point to `len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_copy_data(m: *const OodMatrix, out: *mut f32, len: usize) -> OodStatus {
    guard(|| {
        let m = as_ref(m, "matrix")?;
        let src = m.inner.as_slice();
        out_slice(out, len, src.len(), "out")?.copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `m` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_matrix_free(m: *mut OodMatrix) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// New matrix with every row scaled to unit norm.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_l2_normalize(m: *const OodMatrix, out: *mut *mut OodMatrix) -> OodStatus {
    guard(|| {
        let m = as_ref(m, "matrix")?;
        let inner = l2_normalize(&m.inner)?;
        write_handle(out, OodMatrix { inner })
    })
}

/// Mean of the `k` smallest cosine distances from each test row to the
/// train rows. Both matrices must be L2-normalized.
///
/// # Safety
/// Handles must be live; `scores` must hold `len >= rows(test)` doubles.
#[no_mangle]
pub unsafe extern "C" fn ood_knn_score(
    train: *const OodMatrix,
    test: *const OodMatrix,
    k: usize,
    scores: *mut f64,
    len: usize,
) -> OodStatus {
    guard(|| {
        let train = as_ref(train, "train")?;
        let test = as_ref(test, "test")?;
        let sv = knn_score(&train.inner, &test.inner, k)?;
        out_slice(scores, len, sv.len(), "scores")?.copy_from_slice(&sv.scores);
        Ok(())
    })
}

/// Nearest-cluster Mahalanobis distance with per-cluster covariances
/// fitted on `train` grouped by `labels` (values in `[0, k)`).
///
/// # Safety
/// `labels` must hold `rows(train)` entries; `scores` must hold
/// `len >= rows(test)` doubles.
#[no_mangle]
pub unsafe extern "C" fn ood_mahalanobis_score(
    train: *const OodMatrix,
    labels: *const usize,
    k: usize,
    shrinkage: f64,
    test: *const OodMatrix,
    scores: *mut f64,
    len: usize,
) -> OodStatus {
    guard(|| {
        let train = as_ref(train, "train")?;
        let test = as_ref(test, "test")?;
        let labels = in_slice(labels, train.inner.n(), "labels")?.to_vec();
        let labels = LabelVector::new(labels, k, LabelKind::Pseudo)?;
        let bank = fit_gaussians(&train.inner, &labels, shrinkage)?;
        let sv = mahalanobis_score(&bank, &test.inner)?;
        out_slice(scores, len, sv.len(), "scores")?.copy_from_slice(&sv.scores);
        Ok(())
    })
}

/// ROC-AUC with out-of-distribution scores as positives, ties counted half.
///
/// # Safety
/// Score arrays must hold the given counts; `auc` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_roc_auc(
    scores_in: *const f64,
    n_in: usize,
    scores_out: *const f64,
    n_out: usize,
    auc: *mut f64,
) -> OodStatus {
    guard(|| {
        let a = in_slice(scores_in, n_in, "scores_in")?;
        let b = in_slice(scores_out, n_out, "scores_out")?;
        let value = roc_auc(a, b)?;
        *auc.as_mut().ok_or_else(|| null("auc"))? = value;
        Ok(())
    })
}

/// k-means++ seeded Lloyd iterations; writes one label per row.
///
/// # Safety
/// `m` must be a live handle; `labels` must hold `len >= rows(m)` entries.
#[no_mangle]
pub unsafe extern "C" fn ood_kmeans(
    m: *const OodMatrix,
    k: usize,
    max_iters: usize,
    seed: u64,
    labels: *mut usize,
    len: usize,
) -> OodStatus {
    guard(|| {
        let m = as_ref(m, "matrix")?;
        let fit = kmeans(&m.inner, k, max_iters, seed)?;
        let src = fit.assignment.labels.labels();
        out_slice(labels, len, src.len(), "labels")?.copy_from_slice(src);
        Ok(())
    })
}

/// Best-bijection matched fraction between two labelings of `n` samples.
///
/// # Safety
/// `pred` and `truth` must hold `n` entries; `accuracy` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_cluster_accuracy(
    pred: *const usize,
    k_pred: usize,
    truth: *const usize,
    k_truth: usize,
    n: usize,
    accuracy: *mut f64,
) -> OodStatus {
    guard(|| {
        let pred = LabelVector::new(in_slice(pred, n, "pred")?.to_vec(), k_pred, LabelKind::Pseudo)?;
        let truth = LabelVector::new(in_slice(truth, n, "truth")?.to_vec(), k_truth, LabelKind::GroundTruth)?;
        let value = cluster_accuracy(&pred, &truth)?;
        *accuracy.as_mut().ok_or_else(|| null("accuracy"))? = value;
        Ok(())
    })
}

/// Loads a head checkpoint.
///
/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_head_load(path: *const c_char, out: *mut *mut OodHead) -> OodStatus {
    guard(|| {
        let path = path_arg(path, "path")?;
        let inner = load_checkpoint(path)?;
        write_handle(out, OodHead { inner })
    })
}

/// Writes `[input, hidden, classes]` into `dims`.
///
/// # Safety
/// `dims` must point to 3 writable entries.
#[no_mangle]
pub unsafe extern "C" fn ood_head_dims(head: *const OodHead, dims: *mut usize) -> OodStatus {
    guard(|| {
        let head = as_ref(head, "head")?;
        out_slice(dims, 3, 3, "dims")?.copy_from_slice(&head.inner.layer_dims());
        Ok(())
    })
}

/// # Safety
/// `head` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ood_head_free(head: *mut OodHead) {
    if !head.is_null() {
        drop(Box::from_raw(head));
    }
}

/// `1 - max class probability` for every test row.
///
/// # Safety
/// Handles must be live; `scores` must hold `len >= rows(test)` doubles.
#[no_mangle]
pub unsafe extern "C" fn ood_confidence_score(
    head: *const OodHead,
    test: *const OodMatrix,
    scores: *mut f64,
    len: usize,
) -> OodStatus {
    guard(|| {
        let head = as_ref(head, "head")?;
        let test = as_ref(test, "test")?;
        let sv = confidence_score(&head.inner, &test.inner)?;
        out_slice(scores, len, sv.len(), "scores")?.copy_from_slice(&sv.scores);
        Ok(())
    })
}

/// L2-normalized hidden-layer features of every row.
///
/// # Safety
/// Handles must be live; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ood_extract_features(
    head: *const OodHead,
    m: *const OodMatrix,
    out: *mut *mut OodMatrix,
) -> OodStatus {
    guard(|| {
        let head = as_ref(head, "head")?;
        let m = as_ref(m, "matrix")?;
        let inner = extract_features(&head.inner, &m.inner)?;
        write_handle(out, OodMatrix { inner })
    })
}
