//! C ABI for the `gsc` library.
//!
//! Objects are exposed as opaque handles created by `*_new`, `gsc_sample` or
//! `gsc_fit` and released with the matching `*_free`. Every fallible call
//! returns a [`GscStatus`]; on failure a description is available from
//! [`gsc_last_error_message`] on the same thread. Matrices cross the boundary
//! as row-major `double` arrays.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use gsc::em::{multi_restart, FitOptions, FitResult};
use gsc::inference::build_state_contexts;
use gsc::metrics::amari_index;
use gsc::model::{sample_gsc, Dataset, ModelParams};
use gsc::GscError;
use nalgebra::{DMatrix, DVector};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GscStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidParams = 3,
    TooManyHidden = 4,
    Numerical = 5,
    Io = 6,
    Panic = 7,
}

/// Model parameters `W` (D×H), `Sigma` (D×D) and `pi` (H).
pub struct GscParams(ModelParams);

/// Observations, one row per data point.
pub struct GscDataset(Dataset);

/// Best run of a multi-restart fit.
pub struct GscFitResult(FitResult);

/// Settings for [`gsc_fit`]; obtain defaults from [`gsc_fit_options_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GscFitOptions {
    pub hidden: usize,
    pub max_iters: usize,
    pub rel_tol: f64,
    /// Non-zero constrains Sigma to a multiple of the identity.
    pub isotropic_sigma: c_int,
    /// Zero keeps pi at its initial value.
    pub update_pi: c_int,
    pub seed: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

struct Failure(GscStatus, String);

impl From<GscError> for Failure {
    fn from(e: GscError) -> Self {
        let status = match &e {
            GscError::InvalidParams(_) => GscStatus::InvalidParams,
            GscError::Input(_) => GscStatus::InvalidArgument,
            GscError::TooManyHidden { .. } => GscStatus::TooManyHidden,
            GscError::Numerical(_) => GscStatus::Numerical,
            _ => GscStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GscStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GscStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            GscStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(GscStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: String) -> Failure {
    Failure(GscStatus::InvalidArgument, msg)
}

unsafe fn input<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn output<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

fn copy_out(src: impl Iterator<Item = f64>, expected: usize, out: &mut [f64], what: &str) -> Result<(), Failure> {
    if out.len() != expected {
        return Err(invalid(format!("{what} needs {expected} values, buffer holds {}", out.len())));
    }
    for (o, v) in out.iter_mut().zip(src) {
        *o = v;
    }
    Ok(())
}

fn row_major(m: &DMatrix<f64>) -> impl Iterator<Item = f64> + '_ {
    (0..m.nrows()).flat_map(move |i| (0..m.ncols()).map(move |j| m[(i, j)]))
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gsc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gsc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a parameter handle from row-major `w` (d×h), `sigma` (d×d) and `pi` (h).
///
/// # Safety
/// The arrays must hold at least the stated number of values; `out` must be
/// a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_new(
    d: usize,
    h: usize,
    w: *const f64,
    sigma: *const f64,
    pi: *const f64,
    out: *mut *mut GscParams,
) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let w = DMatrix::from_row_slice(d, h, input(w, d * h, "w")?);
        let sigma = DMatrix::from_row_slice(d, d, input(sigma, d * d, "sigma")?);
        let pi = DVector::from_column_slice(input(pi, h, "pi")?);
        let params = ModelParams::new(w, sigma, pi)?;
        *out = Box::into_raw(Box::new(GscParams(params)));
        Ok(())
    })
}

/// Releases a parameter handle; null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_free(p: *mut GscParams) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Writes the observed dimension D and the hidden dimension H.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_dims(p: *const GscParams, d: *mut usize, h: *mut usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        if d.is_null() || h.is_null() {
            return Err(null("output"));
        }
        *d = p.observed_dim();
        *h = p.hidden_dim();
        Ok(())
    })
}

/// Copies `W` row-major into `out`, which must hold exactly D·H values.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_copy_w(p: *const GscParams, out: *mut f64, len: usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        copy_out(row_major(&p.w), p.w.len(), output(out, len, "out")?, "W")
    })
}

/// Copies `Sigma` row-major into `out`, which must hold exactly D·D values.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_copy_sigma(p: *const GscParams, out: *mut f64, len: usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        copy_out(row_major(&p.sigma), p.sigma.len(), output(out, len, "out")?, "Sigma")
    })
}

/// Copies `pi` into `out`, which must hold exactly H values.
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gsc_params_copy_pi(p: *const GscParams, out: *mut f64, len: usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "params")?.0;
        copy_out(p.pi.iter().copied(), p.pi.len(), output(out, len, "out")?, "pi")
    })
}

/// Creates a dataset from `n` row-major observations of dimension `d`.
///
/// # Safety
/// `y` must hold `n·d` values; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_dataset_new(n: usize, d: usize, y: *const f64, out: *mut *mut GscDataset) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let y = DMatrix::from_row_slice(n, d, input(y, n * d, "y")?);
        *out = Box::into_raw(Box::new(GscDataset(Dataset::new(y)?)));
        Ok(())
    })
}

/// Releases a dataset handle; null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsc_dataset_free(p: *mut GscDataset) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Writes the number of points N and the dimension D.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_dataset_dims(p: *const GscDataset, n: *mut usize, d: *mut usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "dataset")?.0;
        if n.is_null() || d.is_null() {
            return Err(null("output"));
        }
        *n = p.n_points();
        *d = p.dim();
        Ok(())
    })
}

/// Copies the observations row-major into `out` (exactly N·D values).
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gsc_dataset_copy_y(p: *const GscDataset, out: *mut f64, len: usize) -> GscStatus {
    guard(|| {
        let p = &handle(p, "dataset")?.0;
        copy_out(row_major(&p.y), p.y.len(), output(out, len, "out")?, "Y")
    })
}

/// Draws `n` points from the model; deterministic given `seed`.
///
/// # Safety
/// `params` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn gsc_sample(
    params: *const GscParams,
    n: usize,
    seed: u64,
    out: *mut *mut GscDataset,
) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let data = sample_gsc(&handle(params, "params")?.0, n, seed)?;
        *out = Box::into_raw(Box::new(GscDataset(data)));
        Ok(())
    })
}

/// Total log-likelihood of the dataset under the model.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_log_likelihood(
    params: *const GscParams,
    data: *const GscDataset,
    out: *mut f64,
) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = gsc::log_likelihood(&handle(params, "params")?.0, &handle(data, "dataset")?.0)?;
        Ok(())
    })
}

/// Posterior moments of one observation `y` (length D): `es` and `esz`
/// (H values each), `eszsz` (H·H row-major) and the log-likelihood.
///
/// # Safety
/// Buffers must hold the stated number of values; `log_lik` may be null.
#[no_mangle]
pub unsafe extern "C" fn gsc_point_moments(
    params: *const GscParams,
    y: *const f64,
    d: usize,
    es: *mut f64,
    esz: *mut f64,
    eszsz: *mut f64,
    log_lik: *mut f64,
) -> GscStatus {
    guard(|| {
        let p = &handle(params, "params")?.0;
        if d != p.observed_dim() {
            return Err(invalid(format!("y has length {d}, model expects {}", p.observed_dim())));
        }
        let h = p.hidden_dim();
        let y = DVector::from_column_slice(input(y, d, "y")?);
        let m = build_state_contexts(p)?.point_moments(&y)?;
        copy_out(m.es.iter().copied(), h, output(es, h, "es")?, "es")?;
        copy_out(m.esz.iter().copied(), h, output(esz, h, "esz")?, "esz")?;
        copy_out(row_major(&m.eszsz), h * h, output(eszsz, h * h, "eszsz")?, "eszsz")?;
        if !log_lik.is_null() {
            *log_lik = m.log_lik;
        }
        Ok(())
    })
}

/// Default fit settings for `hidden` units: 300 iterations, relative
/// tolerance 1e-8, full Sigma, learned pi, seed 0.
#[no_mangle]
pub extern "C" fn gsc_fit_options_default(hidden: usize) -> GscFitOptions {
    let d = FitOptions::default();
    GscFitOptions {
        hidden,
        max_iters: d.max_iters,
        rel_tol: d.rel_tol,
        isotropic_sigma: d.isotropic_sigma as c_int,
        update_pi: d.update_pi as c_int,
        seed: d.seed,
    }
}

/// Runs `restarts` EM fits and returns the one with the highest likelihood.
///
/// # Safety
/// Handles must be live and pointers valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit(
    data: *const GscDataset,
    options: *const GscFitOptions,
    restarts: usize,
    out: *mut *mut GscFitResult,
) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let data = &handle(data, "dataset")?.0;
        let o = handle(options, "options")?;
        let opts = FitOptions {
            hidden: o.hidden,
            max_iters: o.max_iters,
            rel_tol: o.rel_tol,
            isotropic_sigma: o.isotropic_sigma != 0,
            seed: o.seed,
            record_trace: true,
            update_pi: o.update_pi != 0,
        };
        let best = multi_restart(data, &opts, restarts)?.results.swap_remove(0);
        *out = Box::into_raw(Box::new(GscFitResult(best)));
        Ok(())
    })
}

/// Releases a fit result; null is ignored.
///
/// # Safety
/// `p` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_result_free(p: *mut GscFitResult) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// New parameter handle holding the learned parameters.
///
/// # Safety
/// `r` must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_result_params(r: *const GscFitResult, out: *mut *mut GscParams) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let params = handle(r, "fit result")?.0.params.clone();
        *out = Box::into_raw(Box::new(GscParams(params)));
        Ok(())
    })
}

/// Final log-likelihood, restart index and iteration count of the run.
///
/// # Safety
/// `r` must be live; output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_result_summary(
    r: *const GscFitResult,
    log_lik: *mut f64,
    restart: *mut usize,
    iterations: *mut usize,
) -> GscStatus {
    guard(|| {
        let r = &handle(r, "fit result")?.0;
        if !log_lik.is_null() {
            *log_lik = r.final_log_lik();
        }
        if !restart.is_null() {
            *restart = r.restart;
        }
        if !iterations.is_null() {
            *iterations = r.iterations_run;
        }
        Ok(())
    })
}

/// Length of the log-likelihood trace (initial value plus one per iteration).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_result_trace_len(r: *const GscFitResult, len: *mut usize) -> GscStatus {
    guard(|| {
        let r = &handle(r, "fit result")?.0;
        if len.is_null() {
            return Err(null("len"));
        }
        *len = r.log_lik_trace.len();
        Ok(())
    })
}

/// Copies the log-likelihood trace into `out` (exactly the trace length).
///
/// # Safety
/// `out` must point to `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn gsc_fit_result_copy_trace(r: *const GscFitResult, out: *mut f64, len: usize) -> GscStatus {
    guard(|| {
        let t = &handle(r, "fit result")?.0.log_lik_trace;
        copy_out(t.iter().copied(), t.len(), output(out, len, "out")?, "trace")
    })
}

/// Amari index between row-major `w` and `w_gen`, both d×h with d ≥ h.
///
/// # Safety
/// Both arrays must hold `d·h` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn gsc_amari_index(
    w: *const f64,
    w_gen: *const f64,
    d: usize,
    h: usize,
    out: *mut f64,
) -> GscStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let w = DMatrix::from_row_slice(d, h, input(w, d * h, "w")?);
        let g = DMatrix::from_row_slice(d, h, input(w_gen, d * h, "w_gen")?);
        *out = amari_index(&w, &g)?.index;
        Ok(())
    })
}
