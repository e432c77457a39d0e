//! C ABI for the effective-Hamiltonian laboratory.
//!
//! Opaque handles wrap environments and converged metric solutions; every
//! fallible call returns an [`HjStatus`] code and writes results through
//! out-pointers. The most recent error message per thread is available from
//! [`hj_last_error`]. The generated header lives in `include/hjhomog.h`.

use std::cell::RefCell;
use std::ffi::{c_char, CString};

use hjhomog::effective::{EnvSampler, HbarConfig, HbarPipeline, SolveGrid};
use hjhomog::environment::{build_environment, EnvKind, EnvParams, Environment, SigmaKind};
use hjhomog::grid::{GridDomain, SourceSpec};
use hjhomog::metric::{solve_metric, MetricConfig, MetricSolution};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum HjStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    SolverFailed = 3,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

/// Message for the most recent failure on this thread. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn hj_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn hj_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque environment handle.
pub struct HjEnv {
    env: Environment,
}

/// Opaque converged metric solution.
pub struct HjMetric {
    sol: MetricSolution,
}

/// Builds a constant-coefficient environment:
/// `H(p, y) = coef |p|^q`, `Sigma = sigma_a0 I`.
///
/// # Safety
/// `out` must be a valid pointer to an `HjEnv*` slot.
#[no_mangle]
pub unsafe extern "C" fn hj_env_new_deterministic(
    d: u32,
    q: f64,
    lambda: f64,
    coef: f64,
    sigma_a0: f64,
    out: *mut *mut HjEnv,
) -> HjStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return HjStatus::NullPointer;
    }
    let params = EnvParams {
        d: d as usize,
        q,
        lambda,
        kind: EnvKind::Deterministic { coef },
        sigma: if sigma_a0 > 0.0 {
            SigmaKind::ConstantIsotropic { a0: sigma_a0 }
        } else {
            SigmaKind::Zero
        },
        constrained: false,
        seed: 0,
        replica: 0,
    };
    match build_environment(params) {
        Ok(env) => {
            unsafe { *out = Box::into_raw(Box::new(HjEnv { env })) };
            HjStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            HjStatus::InvalidArgument
        }
    }
}

/// Builds a truncated-Poissonian environment with bump-modulated
/// coefficient. `constrained != 0` forces the potential to zero.
///
/// # Safety
/// `out` must be a valid pointer to an `HjEnv*` slot.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hj_env_new_poisson(
    d: u32,
    q: f64,
    lambda: f64,
    intensity: f64,
    bump_radius: f64,
    amp: f64,
    vmax: f64,
    coef_amp: f64,
    sigma_a0: f64,
    constrained: u32,
    seed: u64,
    replica: u64,
    out: *mut *mut HjEnv,
) -> HjStatus {
    if out.is_null() {
        set_error("out pointer is null");
        return HjStatus::NullPointer;
    }
    let params = EnvParams {
        d: d as usize,
        q,
        lambda,
        kind: EnvKind::PoissonBumps { intensity, bump_radius, amp, vmax, coef_amp },
        sigma: if sigma_a0 > 0.0 {
            SigmaKind::ConstantIsotropic { a0: sigma_a0 }
        } else {
            SigmaKind::Zero
        },
        constrained: constrained != 0,
        seed,
        replica,
    };
    match build_environment(params) {
        Ok(env) => {
            unsafe { *out = Box::into_raw(Box::new(HjEnv { env })) };
            HjStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            HjStatus::InvalidArgument
        }
    }
}

/// Frees an environment handle (null is a no-op).
///
/// # Safety
/// `env` must be a pointer previously returned by an `hj_env_new_*` call
/// and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hj_env_free(env: *mut HjEnv) {
    if !env.is_null() {
        drop(unsafe { Box::from_raw(env) });
    }
}

/// Evaluates `H(p, y)`. `p` and `y` point to `d` doubles each.
///
/// # Safety
/// `env`, `p`, `y`, `out` must be valid for the environment's dimension.
#[no_mangle]
pub unsafe extern "C" fn hj_env_hamiltonian(
    env: *const HjEnv,
    p: *const f64,
    y: *const f64,
    out: *mut f64,
) -> HjStatus {
    if env.is_null() || p.is_null() || y.is_null() || out.is_null() {
        set_error("null pointer argument");
        return HjStatus::NullPointer;
    }
    let env = unsafe { &*env };
    let d = env.env.dim();
    let mut pv = [0.0; 2];
    let mut yv = [0.0; 2];
    for i in 0..d {
        pv[i] = unsafe { *p.add(i) };
        yv[i] = unsafe { *y.add(i) };
    }
    unsafe { *out = env.env.hamiltonian(pv, yv) };
    HjStatus::Ok
}

/// Solves the metric problem from a unit ball at the origin on a box of
/// the given radius and spacing.
///
/// # Safety
/// `env` must be a live environment handle; `out` a valid slot.
#[no_mangle]
pub unsafe extern "C" fn hj_metric_solve(
    env: *const HjEnv,
    mu: f64,
    h: f64,
    radius: f64,
    out: *mut *mut HjMetric,
) -> HjStatus {
    if env.is_null() || out.is_null() {
        set_error("null pointer argument");
        return HjStatus::NullPointer;
    }
    let env = unsafe { &*env };
    let cfg = MetricConfig::for_mu(mu);
    let domain = match GridDomain::symmetric(env.env.dim(), h, radius) {
        Ok(d) => d,
        Err(e) => {
            set_error(&e.to_string());
            return HjStatus::InvalidArgument;
        }
    };
    match solve_metric(&env.env, mu, &SourceSpec::origin(), domain, &cfg) {
        Ok(sol) => {
            unsafe { *out = Box::into_raw(Box::new(HjMetric { sol })) };
            HjStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            HjStatus::SolverFailed
        }
    }
}

/// Frees a metric solution handle (null is a no-op).
///
/// # Safety
/// `m` must come from `hj_metric_solve` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn hj_metric_free(m: *mut HjMetric) {
    if !m.is_null() {
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Reads the converged field at a point (`y` points to `d` doubles).
///
/// # Safety
/// `m`, `y`, `out` must be valid; the point must lie inside the solve box.
#[no_mangle]
pub unsafe extern "C" fn hj_metric_value(
    m: *const HjMetric,
    y: *const f64,
    out: *mut f64,
) -> HjStatus {
    if m.is_null() || y.is_null() || out.is_null() {
        set_error("null pointer argument");
        return HjStatus::NullPointer;
    }
    let m = unsafe { &*m };
    let d = m.sol.domain().d;
    let mut yv = [0.0; 2];
    for i in 0..d {
        yv[i] = unsafe { *y.add(i) };
    }
    match m.sol.value_at(yv) {
        Some(v) => {
            unsafe { *out = v };
            HjStatus::Ok
        }
        None => {
            set_error("point outside the solve domain");
            HjStatus::InvalidArgument
        }
    }
}

/// Empirical slope extrema of the converged field.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn hj_metric_slopes(
    m: *const HjMetric,
    l_hat: *mut f64,
    big_l_hat: *mut f64,
) -> HjStatus {
    if m.is_null() || l_hat.is_null() || big_l_hat.is_null() {
        set_error("null pointer argument");
        return HjStatus::NullPointer;
    }
    let m = unsafe { &*m };
    unsafe {
        *l_hat = m.sol.slope_min;
        *big_l_hat = m.sol.slope_max;
    }
    HjStatus::Ok
}

/// Estimates the effective Hamiltonian at `p = (px, py)` by bisection over
/// the metric problem, using `n_replicas` copies of the handle's
/// environment family.
///
/// # Safety
/// `env`, `value`, `half_width` must be valid pointers.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn hj_hbar_estimate(
    env: *const HjEnv,
    px: f64,
    py: f64,
    n_replicas: u32,
    n_directions: u32,
    r_max: f64,
    h: f64,
    tol: f64,
    value: *mut f64,
    half_width: *mut f64,
) -> HjStatus {
    if env.is_null() || value.is_null() || half_width.is_null() {
        set_error("null pointer argument");
        return HjStatus::NullPointer;
    }
    let env = unsafe { &*env };
    let sampler = EnvSampler::new(env.env.params().clone());
    let cfg = HbarConfig {
        mu_min: 0.25,
        mu_max: 4.0,
        tol: tol.max(1e-4),
        n_directions: n_directions.max(2) as usize,
        radii: vec![0.5 * r_max, r_max],
        n_replicas: n_replicas.max(1) as usize,
        grid: SolveGrid { h, margin: 3.0 },
        sor: 1.0,
    };
    let mut pipe = HbarPipeline::new(&sampler, cfg);
    match pipe.estimate([px, py]) {
        Ok(est) => {
            unsafe {
                *value = est.value;
                *half_width = est.half_width;
            }
            HjStatus::Ok
        }
        Err(e) => {
            set_error(&e.to_string());
            HjStatus::SolverFailed
        }
    }
}
