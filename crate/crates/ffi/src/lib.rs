//! C interface to the permutation tests.
//!
//! Datasets are opaque handles created by `palmrt_dataset_new` and released
//! by `palmrt_dataset_free`. Every other call returns a `PalmrtStatus`; on
//! failure, `palmrt_last_error` gives a message that stays valid until the
//! next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use robust_palmrt::framework::{
    dispersion_test, palmrt_test_with_ties, Dataset, FrameworkError, Method, TestReport, TieRule,
};
use robust_palmrt::linalg::Matrix;
use robust_palmrt::regressors::QuantileConfig;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalmrtStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidData = 3,
    Numerical = 4,
    Panic = 5,
}

/// Fitter and evaluator pairs for the location test.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PalmrtMethod {
    OlsL2 = 0,
    OlsL1 = 1,
    OlsHuber = 2,
    HuberHuber = 3,
}

/// Opaque dataset handle.
pub struct PalmrtDataset {
    inner: Dataset,
}

/// Summary of one test.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PalmrtResult {
    pub p_value: f64,
    /// Sum of the comparison indicators.
    pub indicator_sum: f64,
    /// Mean of the statistic over the fits with x in its original order.
    pub omega_orig_mean: f64,
    pub permutations: usize,
    pub seed: u64,
    /// Fits that fell back to a floor scale or clamped spread.
    pub degenerate_fits: usize,
    /// Fits that hit the iteration limit.
    pub nonconverged_fits: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: PalmrtStatus, msg: impl Into<String>) -> PalmrtStatus {
    set_error(msg);
    status
}

fn framework_status(e: FrameworkError) -> PalmrtStatus {
    let status = match e {
        FrameworkError::InvalidDataset(_) => PalmrtStatus::InvalidData,
        FrameworkError::InvalidArgument(_) => PalmrtStatus::InvalidArgument,
        _ => PalmrtStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn guarded(f: impl FnOnce() -> PalmrtStatus) -> PalmrtStatus {
    catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|_| fail(PalmrtStatus::Panic, "internal panic"))
}

fn fill(out: &mut PalmrtResult, report: &TestReport) {
    let b = report.omega_orig.len().max(1) as f64;
    *out = PalmrtResult {
        p_value: report.p_value,
        indicator_sum: report.indicators.iter().sum(),
        omega_orig_mean: report.omega_orig.iter().sum::<f64>() / b,
        permutations: report.b,
        seed: report.seed,
        degenerate_fits: report.diagnostics.degenerate_scale + report.diagnostics.clamped_spread,
        nonconverged_fits: report.diagnostics.not_converged,
    };
}

/// Message for the most recent failure on this thread, or NULL if none.
/// The pointer is owned by the library.
#[no_mangle]
pub extern "C" fn palmrt_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Builds a dataset from column-major arrays: `y` has `n` entries, `x` has
/// `n * d` and `z` has `n * p`. `z` should include an intercept column if
/// one is wanted; `p` may be 0.
///
/// # Safety
/// Each non-null array must hold the stated number of doubles; `out` must
/// be writable.
#[no_mangle]
pub unsafe extern "C" fn palmrt_dataset_new(
    n: usize,
    y: *const f64,
    x: *const f64,
    d: usize,
    z: *const f64,
    p: usize,
    out: *mut *mut PalmrtDataset,
) -> PalmrtStatus {
    guarded(|| {
        if out.is_null() || y.is_null() || x.is_null() || (p > 0 && z.is_null()) {
            return fail(PalmrtStatus::NullPointer, "null pointer argument");
        }
        let (Some(nd), Some(np)) = (n.checked_mul(d), n.checked_mul(p)) else {
            return fail(PalmrtStatus::InvalidArgument, "dimensions overflow");
        };
        let y = slice::from_raw_parts(y, n).to_vec();
        let x = Matrix::from_column_major(n, d, slice::from_raw_parts(x, nd).to_vec());
        let z = if p == 0 {
            Matrix::from_column_major(n, 0, Vec::new())
        } else {
            Matrix::from_column_major(n, p, slice::from_raw_parts(z, np).to_vec())
        };
        match Dataset::new(y, x, z) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(PalmrtDataset { inner }));
                PalmrtStatus::Ok
            }
            Err(e) => framework_status(e),
        }
    })
}

/// Releases a dataset. NULL is ignored.
///
/// # Safety
/// `data` must come from `palmrt_dataset_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn palmrt_dataset_free(data: *mut PalmrtDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Number of rows in a dataset, or 0 for NULL.
///
/// # Safety
/// `data` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn palmrt_dataset_rows(data: *const PalmrtDataset) -> usize {
    data.as_ref().map_or(0, |d| d.inner.n())
}

/// Location test with `b` random permutations. `method` is a
/// `PalmrtMethod` value. With `half_ties` nonzero, exact ties count one
/// half instead of one.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn palmrt_test(
    data: *const PalmrtDataset,
    method: u32,
    b: usize,
    seed: u64,
    half_ties: i32,
    out: *mut PalmrtResult,
) -> PalmrtStatus {
    guarded(|| {
        let (Some(data), Some(out)) = (data.as_ref(), out.as_mut()) else {
            return fail(PalmrtStatus::NullPointer, "null pointer argument");
        };
        let method = match method {
            m if m == PalmrtMethod::OlsL2 as u32 => Method::OlsL2,
            m if m == PalmrtMethod::OlsL1 as u32 => Method::OlsL1,
            m if m == PalmrtMethod::OlsHuber as u32 => Method::OlsHuber,
            m if m == PalmrtMethod::HuberHuber as u32 => Method::HuberHuber,
            m => {
                return fail(
                    PalmrtStatus::InvalidArgument,
                    format!("unknown method code {m}"),
                )
            }
        };
        let ties = if half_ties != 0 {
            TieRule::HalfWeight
        } else {
            TieRule::Conservative
        };
        match palmrt_test_with_ties(
            &data.inner,
            &method.fitter(),
            &method.evaluator(),
            b,
            seed,
            ties,
        ) {
            Ok(report) => {
                fill(out, &report);
                PalmrtStatus::Ok
            }
            Err(e) => framework_status(e),
        }
    })
}

/// Dispersion test for a 0/1 group column in `x`, comparing the spread
/// between conditional quantiles `q_low` and `q_high`.
///
/// # Safety
/// `data` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn palmrt_dispersion_test(
    data: *const PalmrtDataset,
    q_low: f64,
    q_high: f64,
    b: usize,
    seed: u64,
    out: *mut PalmrtResult,
) -> PalmrtStatus {
    guarded(|| {
        let (Some(data), Some(out)) = (data.as_ref(), out.as_mut()) else {
            return fail(PalmrtStatus::NullPointer, "null pointer argument");
        };
        if !(0.0 < q_low && q_low < q_high && q_high < 1.0) {
            return fail(
                PalmrtStatus::InvalidArgument,
                format!("need 0 < q_low < q_high < 1, got {q_low} and {q_high}"),
            );
        }
        match dispersion_test(
            &data.inner,
            QuantileConfig::new(q_low),
            QuantileConfig::new(q_high),
            b,
            seed,
        ) {
            Ok(report) => {
                fill(out, &report);
                PalmrtStatus::Ok
            }
            Err(e) => framework_status(e),
        }
    })
}
