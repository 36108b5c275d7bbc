//! C ABI for the dp2erm library.
//!
//! Conventions:
//! - datasets are opaque handles created by `dp2erm_dataset_new` and
//!   released by `dp2erm_dataset_free`;
//! - every fallible call returns a `Dp2ermStatus` code and writes results
//!   through out-pointers supplied by the caller;
//! - `dp2erm_last_error` returns a thread-local message for the most recent
//!   failing call on this thread, valid until the next failing call.

use dp2erm_core::bench::composition_baseline;
use dp2erm_core::data::{Dataset, ProblemConstants, WeightVector};
use dp2erm_core::erm::{run_dp2erm, ErmSpec};
use dp2erm_core::error::Error;
use dp2erm_core::optim::PgdOptions;
use dp2erm_core::privacy::{calibrate, stream_rng, Mechanism, PrivacyParams};
use dp2erm_core::stability::{budget_universal, BudgetProvenance, StabilityBudget};
use dp2erm_core::weights::{EbwConfig, IpwConfig, MmdConfig, SchemeConfig};
use ndarray::{Array1, Array2};
use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::slice;

/// Result codes for every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dp2ermStatus {
    Ok = 0,
    /// Invalid argument or configuration.
    InvalidArgument = 1,
    /// A solver or other runtime step failed.
    RuntimeFailure = 2,
    /// A required pointer was null.
    NullPointer = 3,
}

/// Noise mechanisms exposed through the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dp2ermMechanism {
    Gamma = 0,
    Gaussian = 1,
}

/// Weighting schemes exposed through the ABI.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dp2ermScheme {
    IpwEstimated = 0,
    Mmd = 1,
    Ebw = 2,
}

/// Opaque dataset handle.
pub struct Dp2ermDataset {
    inner: Dataset,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn fail(e: &Error) -> Dp2ermStatus {
    set_error(&e.to_string());
    match e.exit_code() {
        1 => Dp2ermStatus::InvalidArgument,
        _ => Dp2ermStatus::RuntimeFailure,
    }
}

/// Message for the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn dp2erm_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| match &*slot.borrow() {
        Some(msg) => msg.as_ptr(),
        None => std::ptr::null(),
    })
}

/// ABI version; bump on incompatible changes.
#[no_mangle]
pub extern "C" fn dp2erm_abi_version() -> u32 {
    1
}

/// Build a dataset from row-major covariates (n x p), treatments in
/// {-1, +1}, and outcomes. The data is copied; the caller keeps ownership
/// of the input buffers and must free the handle with `dp2erm_dataset_free`.
///
/// # Safety
/// `covariates` must point to n*p doubles, `treatments` and `outcomes` to n
/// elements each, and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_dataset_new(
    covariates: *const f64,
    n: usize,
    p: usize,
    treatments: *const i32,
    outcomes: *const f64,
    out: *mut *mut Dp2ermDataset,
) -> Dp2ermStatus {
    if covariates.is_null() || treatments.is_null() || outcomes.is_null() || out.is_null() {
        set_error("null pointer passed to dp2erm_dataset_new");
        return Dp2ermStatus::NullPointer;
    }
    let x = slice::from_raw_parts(covariates, n * p);
    let a = slice::from_raw_parts(treatments, n);
    let y = slice::from_raw_parts(outcomes, n);
    let matrix = match Array2::from_shape_vec((n, p), x.to_vec()) {
        Ok(m) => m,
        Err(e) => {
            set_error(&e.to_string());
            return Dp2ermStatus::InvalidArgument;
        }
    };
    let treatments: Vec<i8> = a.iter().map(|v| *v as i8).collect();
    match Dataset::new(matrix, treatments, y.to_vec()) {
        Ok(ds) => {
            *out = Box::into_raw(Box::new(Dp2ermDataset { inner: ds }));
            Dp2ermStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Release a dataset handle. Null is a no-op.
///
/// # Safety
/// `handle` must be null or a pointer returned by `dp2erm_dataset_new` that
/// has not been freed already.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_dataset_free(handle: *mut Dp2ermDataset) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

unsafe fn dataset_ref<'a>(handle: *const Dp2ermDataset) -> Option<&'a Dataset> {
    handle.as_ref().map(|h| &h.inner)
}

unsafe fn write_weights(weights: &WeightVector, out: *mut f64) {
    let slice = slice::from_raw_parts_mut(out, weights.len());
    slice.copy_from_slice(weights.as_slice());
}

/// Randomized-trial inverse propensity weights; writes n doubles to `out`.
///
/// # Safety
/// `handle` must be a live dataset handle and `out` must hold n doubles.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_weights_ipw_randomized(
    handle: *const Dp2ermDataset,
    p0: f64,
    p1: f64,
    out: *mut f64,
) -> Dp2ermStatus {
    let Some(ds) = dataset_ref(handle) else {
        set_error("null dataset handle");
        return Dp2ermStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return Dp2ermStatus::NullPointer;
    }
    match dp2erm_core::weights::ipw_randomized(ds, p0, p1) {
        Ok(w) => {
            write_weights(&w, out);
            Dp2ermStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

fn scheme_config(
    scheme: Dp2ermScheme,
    ridge: f64,
    radius_or_alpha: f64,
) -> Result<SchemeConfig, Error> {
    Ok(match scheme {
        Dp2ermScheme::IpwEstimated => {
            SchemeConfig::Ipw(IpwConfig::Estimated { radius: radius_or_alpha, ridge })
        }
        Dp2ermScheme::Mmd => SchemeConfig::Mmd(MmdConfig::new(radius_or_alpha, ridge)?),
        Dp2ermScheme::Ebw => SchemeConfig::Ebw(EbwConfig::new(radius_or_alpha, ridge)?),
    })
}

/// Solve a stage-1 weighting problem; writes n doubles to `out`.
/// `radius_or_alpha` is the ball radius for ipw/ebw and the mixing
/// coefficient alpha for mmd.
///
/// # Safety
/// `handle` must be a live dataset handle and `out` must hold n doubles.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_weights_solve(
    handle: *const Dp2ermDataset,
    scheme: Dp2ermScheme,
    ridge: f64,
    radius_or_alpha: f64,
    out: *mut f64,
) -> Dp2ermStatus {
    let Some(ds) = dataset_ref(handle) else {
        set_error("null dataset handle");
        return Dp2ermStatus::NullPointer;
    };
    if out.is_null() {
        set_error("null output buffer");
        return Dp2ermStatus::NullPointer;
    }
    let cfg = match scheme_config(scheme, ridge, radius_or_alpha) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    match cfg.solve(ds, &PgdOptions::default()) {
        Ok(w) => {
            write_weights(&w, out);
            Dp2ermStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Universal worst-case stability budget at sample size n.
///
/// # Safety
/// `w1` and `w2` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_budget_universal(
    n: usize,
    w1: *mut f64,
    w2: *mut f64,
) -> Dp2ermStatus {
    if w1.is_null() || w2.is_null() {
        set_error("null output pointer");
        return Dp2ermStatus::NullPointer;
    }
    if n == 0 {
        set_error("n must be at least 1");
        return Dp2ermStatus::InvalidArgument;
    }
    let b = budget_universal(n);
    *w1 = b.w1_bar;
    *w2 = b.w2_bar;
    Dp2ermStatus::Ok
}

/// Minimal noise scale (1/beta or sigma) and ridge for the given privacy
/// parameters, loss bounds, and stability aggregates.
///
/// # Safety
/// `noise_scale` and `gamma_ridge` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_calibrate(
    mechanism: Dp2ermMechanism,
    epsilon: f64,
    delta: f64,
    zeta: f64,
    hessian_trace: f64,
    w1: f64,
    w2: f64,
    n: usize,
    p: usize,
    noise_scale: *mut f64,
    gamma_ridge: *mut f64,
) -> Dp2ermStatus {
    if noise_scale.is_null() || gamma_ridge.is_null() {
        set_error("null output pointer");
        return Dp2ermStatus::NullPointer;
    }
    let mech = match mechanism {
        Dp2ermMechanism::Gamma => Mechanism::Gamma,
        Dp2ermMechanism::Gaussian => Mechanism::Gaussian,
    };
    let result = (|| -> Result<(f64, f64), Error> {
        let privacy = PrivacyParams::new(epsilon, delta, mech)?;
        let constants = ProblemConstants {
            covariate_bound: 1.0,
            outcome_bound: 1.0,
            l1_radius: 1.0,
            grad_bound: zeta,
            hessian_trace_bound: hessian_trace,
        };
        let budget = StabilityBudget {
            w1_bar: w1,
            w2_bar: w2,
            scheme: "ffi".to_string(),
            provenance: BudgetProvenance::SchemeBound,
        };
        let cal = calibrate(&privacy, &constants, &budget, n, p)?;
        Ok((cal.noise_scale, cal.gamma_ridge))
    })();
    match result {
        Ok((scale, ridge)) => {
            *noise_scale = scale;
            *gamma_ridge = ridge;
            Dp2ermStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

#[allow(clippy::too_many_arguments)]
unsafe fn run_pipeline(
    handle: *const Dp2ermDataset,
    scheme: Dp2ermScheme,
    scheme_ridge: f64,
    radius_or_alpha: f64,
    l1_radius: f64,
    covariate_bound: f64,
    outcome_bound: f64,
    mechanism: Dp2ermMechanism,
    epsilon: f64,
    delta: f64,
    seed: u64,
    use_universal_budget: bool,
    out_theta: *mut f64,
) -> Dp2ermStatus {
    let Some(ds) = dataset_ref(handle) else {
        set_error("null dataset handle");
        return Dp2ermStatus::NullPointer;
    };
    if out_theta.is_null() {
        set_error("null output buffer");
        return Dp2ermStatus::NullPointer;
    }
    let mech = match mechanism {
        Dp2ermMechanism::Gamma => Mechanism::Gamma,
        Dp2ermMechanism::Gaussian => Mechanism::Gaussian,
    };
    let result = (|| -> Result<Array1<f64>, Error> {
        let cfg = scheme_config(scheme, scheme_ridge, radius_or_alpha)?;
        let constants = ProblemConstants::for_itr(covariate_bound, outcome_bound, l1_radius)?;
        let spec = ErmSpec::itr(constants)?;
        let privacy = PrivacyParams::new(epsilon, delta, mech)?;
        let mut rng = stream_rng(seed, 0);
        let opts = PgdOptions::default();
        let (solution, _, _) = if use_universal_budget {
            composition_baseline(ds, &cfg, &spec, &privacy, &mut rng, &opts)?
        } else {
            run_dp2erm(ds, &cfg, &spec, &privacy, &mut rng, &opts)?
        };
        Ok(solution.theta)
    })();
    match result {
        Ok(theta) => {
            let out = slice::from_raw_parts_mut(out_theta, theta.len());
            out.copy_from_slice(theta.as_slice().expect("contiguous"));
            Dp2ermStatus::Ok
        }
        Err(e) => fail(&e),
    }
}

/// Full two-stage private pipeline with the per-scheme stability budget.
/// Writes p doubles (the private parameter) to `out_theta`.
///
/// # Safety
/// `handle` must be a live dataset handle and `out_theta` must hold p
/// doubles.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_run(
    handle: *const Dp2ermDataset,
    scheme: Dp2ermScheme,
    scheme_ridge: f64,
    radius_or_alpha: f64,
    l1_radius: f64,
    covariate_bound: f64,
    outcome_bound: f64,
    mechanism: Dp2ermMechanism,
    epsilon: f64,
    delta: f64,
    seed: u64,
    out_theta: *mut f64,
) -> Dp2ermStatus {
    run_pipeline(
        handle,
        scheme,
        scheme_ridge,
        radius_or_alpha,
        l1_radius,
        covariate_bound,
        outcome_bound,
        mechanism,
        epsilon,
        delta,
        seed,
        false,
        out_theta,
    )
}

/// Same pipeline with the universal worst-case budget (the composition
/// baseline).
///
/// # Safety
/// Same contract as `dp2erm_run`.
#[no_mangle]
pub unsafe extern "C" fn dp2erm_run_composition_baseline(
    handle: *const Dp2ermDataset,
    scheme: Dp2ermScheme,
    scheme_ridge: f64,
    radius_or_alpha: f64,
    l1_radius: f64,
    covariate_bound: f64,
    outcome_bound: f64,
    mechanism: Dp2ermMechanism,
    epsilon: f64,
    delta: f64,
    seed: u64,
    out_theta: *mut f64,
) -> Dp2ermStatus {
    run_pipeline(
        handle,
        scheme,
        scheme_ridge,
        radius_or_alpha,
        l1_radius,
        covariate_bound,
        outcome_bound,
        mechanism,
        epsilon,
        delta,
        seed,
        true,
        out_theta,
    )
}
