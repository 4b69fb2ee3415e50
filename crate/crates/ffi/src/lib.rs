//! C ABI over the trilemma crate: model checkpoints, the privacy accountant
//! and the scalar metrics.
//!
//! Conventions:
//!
//! * Every fallible function returns a [`TrilemmaStatus`] and writes results
//!   through out-pointers. Out-pointers are left untouched on failure.
//! * After a non-OK status, [`trilemma_last_error`] returns a message for
//!   the calling thread.
//! * Handles are created by `*_new` / `*_load` and released with the matching
//!   `*_free`. Passing NULL to a `*_free` is a no-op.
//! * Panics never cross the boundary; they surface as `TRILEMMA_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use trilemma::nnkit::{self, Matrix, ModelParams};
use trilemma::privacy::{self, AccountantState};
use trilemma::{metrics, Error};

/// Result of every fallible call. The configuration, data and numeric codes
/// match the CLI's exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrilemmaStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numeric = 4,
    Panic = 5,
}

impl From<&Error> for TrilemmaStatus {
    fn from(e: &Error) -> Self {
        match e.exit_code() {
            2 => TrilemmaStatus::Config,
            3 => TrilemmaStatus::Data,
            _ => TrilemmaStatus::Numeric,
        }
    }
}

/// A loaded model checkpoint.
pub struct TrilemmaModel {
    inner: ModelParams,
}

/// Rényi-DP accountant state.
pub struct TrilemmaAccountant {
    inner: AccountantState,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn fail(status: TrilemmaStatus, msg: impl Into<String>) -> TrilemmaStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), TrilemmaStatus>) -> TrilemmaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TrilemmaStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => fail(TrilemmaStatus::Panic, "internal panic"),
    }
}

fn check(r: trilemma::Result<()>) -> Result<(), TrilemmaStatus> {
    r.map_err(|e| fail(TrilemmaStatus::from(&e), e.to_string()))
}

fn lift<T>(r: trilemma::Result<T>) -> Result<T, TrilemmaStatus> {
    r.map_err(|e| fail(TrilemmaStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, name: &str) -> Result<(), TrilemmaStatus> {
    if p.is_null() {
        Err(fail(TrilemmaStatus::NullPointer, format!("{name} is NULL")))
    } else {
        Ok(())
    }
}

/// Borrows `len` items; a zero length accepts NULL.
unsafe fn slice<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], TrilemmaStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, name)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn trilemma_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Loads a model checkpoint from a NUL-terminated UTF-8 path.
///
/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_model_load(path: *const c_char, out: *mut *mut TrilemmaModel) -> TrilemmaStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(TrilemmaStatus::Config, "path is not valid UTF-8"))?;
        let inner = lift(nnkit::load_checkpoint(path))?;
        *out = Box::into_raw(Box::new(TrilemmaModel { inner }));
        Ok(())
    })
}

/// Releases a model handle.
///
/// # Safety
/// `model` must come from [`trilemma_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trilemma_model_free(model: *mut TrilemmaModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Input and output widths of a model.
///
/// # Safety
/// `model` must be a live handle; out-pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_model_dims(
    model: *const TrilemmaModel,
    input_dim: *mut usize,
    output_dim: *mut usize,
) -> TrilemmaStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(input_dim, "input_dim")?;
        non_null(output_dim, "output_dim")?;
        let m = &(*model).inner;
        *input_dim = m.input_dim();
        *output_dim = m.output_dim();
        Ok(())
    })
}

/// Class probabilities for `rows` row-major samples of width `cols`.
/// `probs` receives `rows * output_dim` values; `labels`, if not NULL,
/// receives the arg-max class of each row.
///
/// # Safety
/// Buffers must hold the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn trilemma_model_predict(
    model: *const TrilemmaModel,
    features: *const f64,
    rows: usize,
    cols: usize,
    probs: *mut f64,
    probs_len: usize,
    labels: *mut usize,
) -> TrilemmaStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(probs, "probs")?;
        let m = &(*model).inner;
        let x = slice(features, rows * cols, "features")?;
        if probs_len < rows * m.output_dim() {
            return Err(fail(
                TrilemmaStatus::Config,
                format!("probs holds {probs_len} values, need {}", rows * m.output_dim()),
            ));
        }
        let inputs = lift(Matrix::new(rows, cols, x.to_vec()))?;
        let p = lift(nnkit::predict(m, &inputs))?;
        std::slice::from_raw_parts_mut(probs, rows * m.output_dim()).copy_from_slice(p.confidences.as_slice());
        if !labels.is_null() {
            std::slice::from_raw_parts_mut(labels, rows).copy_from_slice(&p.labels);
        }
        Ok(())
    })
}

/// New accountant over `orders` (NULL / 0 selects the default order grid).
///
/// # Safety
/// `orders` must hold `num_orders` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_accountant_new(
    orders: *const f64,
    num_orders: usize,
    out: *mut *mut TrilemmaAccountant,
) -> TrilemmaStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = if num_orders == 0 { privacy::default_orders() } else { slice(orders, num_orders, "orders")?.to_vec() };
        let inner = lift(AccountantState::new(grid))?;
        *out = Box::into_raw(Box::new(TrilemmaAccountant { inner }));
        Ok(())
    })
}

/// Releases an accountant handle.
///
/// # Safety
/// `acc` must come from [`trilemma_accountant_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn trilemma_accountant_free(acc: *mut TrilemmaAccountant) {
    if !acc.is_null() {
        drop(Box::from_raw(acc));
    }
}

/// Composes `steps` subsampled-Gaussian releases into the accountant.
///
/// # Safety
/// `acc` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn trilemma_accountant_compose(
    acc: *mut TrilemmaAccountant,
    noise_multiplier: f64,
    sampling_rate: f64,
    steps: u64,
) -> TrilemmaStatus {
    guard(|| {
        non_null(acc, "accountant")?;
        check((*acc).inner.record_steps(noise_multiplier, sampling_rate, steps))
    })
}

/// Converts the accumulated RDP to (epsilon, delta)-DP; `order` (optional)
/// receives the minimizing order.
///
/// # Safety
/// `acc` must be a live handle; `epsilon` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_accountant_epsilon(
    acc: *const TrilemmaAccountant,
    delta: f64,
    epsilon: *mut f64,
    order: *mut f64,
) -> TrilemmaStatus {
    guard(|| {
        non_null(acc, "accountant")?;
        non_null(epsilon, "epsilon")?;
        let (eps, alpha) = lift((*acc).inner.epsilon(delta))?;
        *epsilon = eps;
        if !order.is_null() {
            *order = alpha;
        }
        Ok(())
    })
}

/// Smallest noise multiplier meeting `target_epsilon` over `steps` releases.
///
/// # Safety
/// Out-pointers other than `noise_multiplier` may be NULL.
#[no_mangle]
pub unsafe extern "C" fn trilemma_calibrate_noise(
    target_epsilon: f64,
    delta: f64,
    sampling_rate: f64,
    steps: u64,
    noise_multiplier: *mut f64,
    achieved_epsilon: *mut f64,
    order: *mut f64,
) -> TrilemmaStatus {
    guard(|| {
        non_null(noise_multiplier, "noise_multiplier")?;
        let c = lift(privacy::calibrate_noise(target_epsilon, delta, sampling_rate, steps))?;
        *noise_multiplier = c.noise_multiplier;
        if !achieved_epsilon.is_null() {
            *achieved_epsilon = c.epsilon;
        }
        if !order.is_null() {
            *order = c.order;
        }
        Ok(())
    })
}

/// Mann–Whitney AUC of member scores against non-member scores.
///
/// # Safety
/// Score buffers must hold the stated counts; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_auc(
    members: *const f64,
    num_members: usize,
    nonmembers: *const f64,
    num_nonmembers: usize,
    out: *mut f64,
) -> TrilemmaStatus {
    guard(|| {
        non_null(out, "out")?;
        let m = slice(members, num_members, "members")?;
        let n = slice(nonmembers, num_nonmembers, "nonmembers")?;
        *out = lift(metrics::auc(m, n))?;
        Ok(())
    })
}

/// Harmonic score of accuracy, attack AUC and bias.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_harmonic_score(accuracy: f64, mia_auc: f64, bias: f64, out: *mut f64) -> TrilemmaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(metrics::harmonic_score(accuracy, mia_auc, bias))?.value;
        Ok(())
    })
}

/// Domain bias from per-class prediction counts on the gray and color test sets.
///
/// # Safety
/// Both buffers must hold `num_classes` counts; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_bias_synthetic(
    gray_counts: *const usize,
    color_counts: *const usize,
    num_classes: usize,
    out: *mut f64,
) -> TrilemmaStatus {
    guard(|| {
        non_null(out, "out")?;
        let g = slice(gray_counts, num_classes, "gray_counts")?;
        let c = slice(color_counts, num_classes, "color_counts")?;
        *out = lift(metrics::bias_synthetic(g, c))?.value;
        Ok(())
    })
}

/// Signed group bias of predicted positives relative to true positives.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn trilemma_bias_realworld(p_w: f64, p_m: f64, n_w: f64, n_m: f64, out: *mut f64) -> TrilemmaStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = lift(metrics::bias_realworld(p_w, p_m, n_w, n_m))?;
        Ok(())
    })
}
