//! C ABI for the core library: opaque model handles, integer status
//! codes, and flat buffers. The header `include/anderson_lab.h` is
//! generated by cbindgen at build time.
//!
//! Conventions: every function returns a status code (`AL_OK` on
//! success); results go through out-pointers supplied by the caller;
//! handles must be released with [`al_model_free`]. A thread-local copy
//! of the last error message is available via [`al_last_error`].

use anderson_lab::correlator::{correlator_profile, EnergyWindow};
use anderson_lab::ksoperator::{build_averaged_grid, opnorm_22, OperatorTag};
use anderson_lab::lyapunov::{block_transfer, exceptional_support, lyapunov_estimate, Mat2};
use anderson_lab::model::{
    BackgroundPotential, BlockProfile, ModelConfig, SingleSiteLaw,
};
use anderson_lab::spectrum::{spectrum_estimate, SpectrumScan};
use anderson_lab::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::slice;

/// Success.
pub const AL_OK: i32 = 0;
/// A required pointer was null or a buffer too small.
pub const AL_NULL_POINTER: i32 = 1;
/// The model description was rejected.
pub const AL_INVALID_MODEL: i32 = 2;
/// The computation failed numerically or was not applicable.
pub const AL_NUMERICAL: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn code_of(err: &Error) -> i32 {
    match err {
        Error::InvalidModel(_) | Error::ConfigParse(_) => AL_INVALID_MODEL,
        _ => AL_NUMERICAL,
    }
}

/// Message of the most recent failure on this thread; the pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn al_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Opaque model handle.
pub struct AlModel {
    cfg: ModelConfig,
}

unsafe fn build_model(
    f: *const f64,
    alpha: usize,
    law: SingleSiteLaw,
    v0_constant: f64,
    out: *mut *mut AlModel,
) -> i32 {
    if f.is_null() || out.is_null() || alpha == 0 {
        set_error("null pointer or empty profile");
        return AL_NULL_POINTER;
    }
    let profile = slice::from_raw_parts(f, alpha).to_vec();
    let v0 = if v0_constant == 0.0 {
        BackgroundPotential::Zero
    } else {
        BackgroundPotential::Constant(v0_constant)
    };
    let profile = match BlockProfile::new(profile) {
        Ok(p) => p,
        Err(e) => {
            set_error(&e.to_string());
            return AL_INVALID_MODEL;
        }
    };
    match ModelConfig::new(profile, law, v0) {
        Ok(cfg) => {
            *out = Box::into_raw(Box::new(AlModel { cfg }));
            AL_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            AL_INVALID_MODEL
        }
    }
}

/// Block model with couplings uniform on `[lo, hi]`.
///
/// # Safety
/// `f` must point to `alpha` doubles; `out` must be a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_model_new_uniform(
    f: *const f64,
    alpha: usize,
    lo: f64,
    hi: f64,
    v0_constant: f64,
    out: *mut *mut AlModel,
) -> i32 {
    build_model(f, alpha, SingleSiteLaw::uniform(lo, hi), v0_constant, out)
}

/// Block model with a piecewise-constant coupling density:
/// `n_break` breakpoints delimiting `n_break - 1` constant values.
///
/// # Safety
/// `f`, `breakpoints`, `values` must point to buffers of the stated
/// lengths; `out` must be a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_model_new_density(
    f: *const f64,
    alpha: usize,
    breakpoints: *const f64,
    n_break: usize,
    values: *const f64,
    v0_constant: f64,
    out: *mut *mut AlModel,
) -> i32 {
    if breakpoints.is_null() || values.is_null() || n_break < 2 {
        set_error("density needs at least two breakpoints");
        return AL_NULL_POINTER;
    }
    let law = SingleSiteLaw::Density {
        breakpoints: slice::from_raw_parts(breakpoints, n_break).to_vec(),
        values: slice::from_raw_parts(values, n_break - 1).to_vec(),
    };
    build_model(f, alpha, law, v0_constant, out)
}

/// Block model with finitely many coupling atoms; pass `probs = NULL`
/// for uniform weights.
///
/// # Safety
/// `f` and `points` (and `probs` when non-null) must point to buffers of
/// the stated lengths; `out` must be a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_model_new_atomic(
    f: *const f64,
    alpha: usize,
    points: *const f64,
    probs: *const f64,
    n_points: usize,
    v0_constant: f64,
    out: *mut *mut AlModel,
) -> i32 {
    if points.is_null() || n_points == 0 {
        set_error("atomic law needs at least one point");
        return AL_NULL_POINTER;
    }
    let pts = slice::from_raw_parts(points, n_points).to_vec();
    let pr = if probs.is_null() {
        vec![1.0 / n_points as f64; n_points]
    } else {
        slice::from_raw_parts(probs, n_points).to_vec()
    };
    build_model(
        f,
        alpha,
        SingleSiteLaw::Atomic {
            points: pts,
            probs: pr,
        },
        v0_constant,
        out,
    )
}

/// Release a model handle; accepts null.
///
/// # Safety
/// `model` must come from a constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn al_model_free(model: *mut AlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Block length α of the model.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn al_model_alpha(model: *const AlModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).cfg.alpha()
}

/// Deterministic spectrum enclosure `Σ₀ = [lo, hi]`.
///
/// # Safety
/// `model` must be a live handle; `lo`/`hi` valid out-pointers.
#[no_mangle]
pub unsafe extern "C" fn al_sigma0(
    model: *const AlModel,
    lo: *mut f64,
    hi: *mut f64,
) -> i32 {
    if model.is_null() || lo.is_null() || hi.is_null() {
        set_error("null pointer");
        return AL_NULL_POINTER;
    }
    let (a, b) = (*model).cfg.sigma0();
    *lo = a;
    *hi = b;
    AL_OK
}

/// Monte-Carlo Lyapunov exponent over `n_blocks` i.i.d. blocks.
///
/// # Safety
/// `model` must be a live handle; `gamma`/`stderr_out` valid
/// out-pointers.
#[no_mangle]
pub unsafe extern "C" fn al_lyapunov(
    model: *const AlModel,
    energy: f64,
    n_blocks: usize,
    seed: u64,
    gamma: *mut f64,
    stderr_out: *mut f64,
) -> i32 {
    if model.is_null() || gamma.is_null() || stderr_out.is_null() {
        set_error("null pointer");
        return AL_NULL_POINTER;
    }
    let est = lyapunov_estimate(&(*model).cfg, energy, n_blocks, seed);
    *gamma = est.gamma;
    *stderr_out = est.stderr;
    AL_OK
}

/// Averaged eigenfunction correlator from site 0 to the first `l` block
/// multiples; `rho` receives `l` values (`rho[0] = 1`).
///
/// # Safety
/// `model` must be a live handle; `rho` must hold `l` doubles.
#[no_mangle]
pub unsafe extern "C" fn al_correlator_profile(
    model: *const AlModel,
    l: usize,
    n_realizations: usize,
    seed: u64,
    rho: *mut f64,
) -> i32 {
    if model.is_null() || rho.is_null() || l == 0 {
        set_error("null pointer or empty profile request");
        return AL_NULL_POINTER;
    }
    match correlator_profile(&(*model).cfg, l, n_realizations, EnergyWindow::All, seed) {
        Ok(profile) => {
            let out = slice::from_raw_parts_mut(rho, l);
            out.copy_from_slice(&profile.rho[..l]);
            AL_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    }
}

/// Discretized L² norm of the contraction kernel at one energy
/// (`n`-cell averaged grid; requires an absolutely continuous law).
///
/// # Safety
/// `model` must be a live handle; `norm` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_contraction_norm(
    model: *const AlModel,
    energy: f64,
    n: usize,
    norm: *mut f64,
) -> i32 {
    if model.is_null() || norm.is_null() {
        set_error("null pointer");
        return AL_NULL_POINTER;
    }
    match build_averaged_grid(&(*model).cfg, OperatorTag::Tilde, energy, n) {
        Ok(grid) => {
            *norm = opnorm_22(&grid);
            AL_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    }
}

/// Almost-sure spectrum bands from periodic words. `bands` receives up
/// to `cap` `(lo, hi)` pairs (2·cap doubles); `n_bands` reports the
/// number of pairs written.
///
/// # Safety
/// `model` must be a live handle; `bands` must hold `2 * cap` doubles;
/// `n_bands` a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_spectrum_bands(
    model: *const AlModel,
    period_blocks: usize,
    grid_n: usize,
    seed: u64,
    bands: *mut f64,
    cap: usize,
    n_bands: *mut usize,
) -> i32 {
    if model.is_null() || bands.is_null() || n_bands.is_null() {
        set_error("null pointer");
        return AL_NULL_POINTER;
    }
    let scan = SpectrumScan {
        period_blocks,
        grid_n,
        max_words: 4096,
        seed,
    };
    match spectrum_estimate(&(*model).cfg, &scan) {
        Ok(est) => {
            if est.bands.len() > cap {
                set_error("band buffer too small");
                return AL_NULL_POINTER;
            }
            let out = slice::from_raw_parts_mut(bands, 2 * cap);
            for (i, &(a, b)) in est.bands.iter().enumerate() {
                out[2 * i] = a;
                out[2 * i + 1] = b;
            }
            *n_bands = est.bands.len();
            AL_OK
        }
        Err(e) => {
            set_error(&e.to_string());
            code_of(&e)
        }
    }
}

/// Worst deviation of the order-`n` exceptional monodromies from the
/// identity (zero when the exceptional support is empty).
///
/// # Safety
/// `max_dev` must be a valid out-pointer.
#[no_mangle]
pub unsafe extern "C" fn al_exceptional_deviation(n: u32, max_dev: *mut f64) -> i32 {
    if max_dev.is_null() {
        set_error("null pointer");
        return AL_NULL_POINTER;
    }
    if n < 2 {
        set_error("order must be at least 2");
        return AL_INVALID_MODEL;
    }
    let zeros = vec![0.0f64; n as usize];
    let mut worst = 0.0f64;
    for e in exceptional_support(n) {
        worst = worst.max(block_transfer(&zeros, e).distance_to(&Mat2::IDENTITY));
    }
    *max_dev = worst;
    AL_OK
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CStr;
    use std::ptr;

    unsafe fn uniform_model() -> *mut AlModel {
        let f = [1.0f64];
        let mut handle: *mut AlModel = ptr::null_mut();
        let code = al_model_new_uniform(f.as_ptr(), 1, 0.0, 1.0, 0.0, &mut handle);
        assert_eq!(code, AL_OK);
        handle
    }

    #[test]
    fn model_round_trip_reports_alpha_and_sigma0() {
        unsafe {
            let m = uniform_model();
            assert_eq!(al_model_alpha(m), 1);
            let (mut lo, mut hi) = (0.0, 0.0);
            assert_eq!(al_sigma0(m, &mut lo, &mut hi), AL_OK);
            assert_eq!((lo, hi), (-3.0, 3.0));
            al_model_free(m);
        }
    }

    #[test]
    fn invalid_profile_is_rejected_with_a_message() {
        unsafe {
            let f = [0.0f64];
            let mut handle: *mut AlModel = ptr::null_mut();
            let code = al_model_new_uniform(f.as_ptr(), 1, 0.0, 1.0, 0.0, &mut handle);
            assert_eq!(code, AL_INVALID_MODEL);
            let msg = CStr::from_ptr(al_last_error()).to_str().unwrap();
            assert!(msg.contains("profile"), "{msg}");
        }
    }

    #[test]
    fn null_pointers_are_reported() {
        unsafe {
            assert_eq!(
                al_model_new_uniform(ptr::null(), 1, 0.0, 1.0, 0.0, ptr::null_mut()),
                AL_NULL_POINTER
            );
            assert_eq!(al_sigma0(ptr::null(), ptr::null_mut(), ptr::null_mut()), AL_NULL_POINTER);
        }
    }

    #[test]
    fn lyapunov_matches_the_library_call() {
        unsafe {
            let m = uniform_model();
            let (mut g, mut s) = (0.0, 0.0);
            assert_eq!(al_lyapunov(m, 0.5, 5000, 7, &mut g, &mut s), AL_OK);
            let direct = lyapunov_estimate(&(*m).cfg, 0.5, 5000, 7);
            assert_eq!(g, direct.gamma);
            assert_eq!(s, direct.stderr);
            al_model_free(m);
        }
    }

    #[test]
    fn correlator_profile_is_normalized_at_zero() {
        unsafe {
            let m = uniform_model();
            let mut rho = [0.0f64; 6];
            assert_eq!(al_correlator_profile(m, 6, 20, 3, rho.as_mut_ptr()), AL_OK);
            assert!((rho[0] - 1.0).abs() < 1e-8);
            assert!(rho.iter().all(|&v| v > 0.0));
            al_model_free(m);
        }
    }

    #[test]
    fn contraction_norm_requires_a_density() {
        unsafe {
            let f = [1.0f64];
            let pts = [-1.0f64, 1.0];
            let mut m: *mut AlModel = ptr::null_mut();
            assert_eq!(
                al_model_new_atomic(f.as_ptr(), 1, pts.as_ptr(), ptr::null(), 2, 0.0, &mut m),
                AL_OK
            );
            let mut norm = 0.0;
            assert_eq!(al_contraction_norm(m, 0.5, 40, &mut norm), AL_NUMERICAL);
            al_model_free(m);
        }
    }

    #[test]
    fn spectrum_bands_cover_the_dirac_interval() {
        unsafe {
            let f = [1.0f64];
            let pts = [0.0f64];
            let mut m: *mut AlModel = ptr::null_mut();
            assert_eq!(
                al_model_new_atomic(f.as_ptr(), 1, pts.as_ptr(), ptr::null(), 1, 0.0, &mut m),
                AL_OK
            );
            let mut bands = [0.0f64; 16];
            let mut n = 0usize;
            assert_eq!(
                al_spectrum_bands(m, 2, 400, 1, bands.as_mut_ptr(), 8, &mut n),
                AL_OK
            );
            assert!(n >= 1);
            assert!((bands[0] + 2.0).abs() < 0.05);
            assert!((bands[2 * n - 1] - 2.0).abs() < 0.05);
            al_model_free(m);
        }
    }

    #[test]
    fn exceptional_deviation_is_tiny_for_small_orders() {
        unsafe {
            for n in 2..=8u32 {
                let mut dev = f64::INFINITY;
                assert_eq!(al_exceptional_deviation(n, &mut dev), AL_OK);
                assert!(dev < 1e-10, "N={n}: {dev}");
            }
        }
    }
}
