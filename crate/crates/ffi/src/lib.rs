//! C ABI over `sdmpc`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_from_*`
//! functions and released by the matching `*_free`. Every fallible call
//! returns an [`SdmpcStatus`]; on failure a description is available from
//! [`sdmpc_last_error_message`] until the next failing call on the same
//! thread. Panics are caught and reported as `SDMPC_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use sdmpc::certify::care::plant_lq_constants;
use sdmpc::certify::condition::{check_condition, min_horizon_bound, ConditionInputs};
use sdmpc::config::ExperimentConfig;
use sdmpc::integrate::GridSpec;
use sdmpc::model::Plant;
use sdmpc::mpc::{run_mpc, smallest_horizon, MpcOptions, MpcRun};
use sdmpc::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Domain = 4,
    InfeasibleOcp = 5,
    ConstraintActive = 6,
    Divergence = 7,
    NotStabilizable = 8,
    Numerical = 9,
    Io = 10,
    Panic = 11,
}

/// A plant: dynamics, constraints and stage cost.
pub struct SdmpcPlant {
    inner: Plant,
}

/// A finished closed-loop simulation.
pub struct SdmpcRun {
    inner: MpcRun,
}

/// Horizon condition evaluated at `(delta, n)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SdmpcCertificate {
    pub delta: f64,
    pub n: usize,
    pub horizon: f64,
    pub gamma: f64,
    pub m: f64,
    pub c: f64,
    pub beta: f64,
    pub cbar: f64,
    pub condition_lhs: f64,
    pub alpha: f64,
    pub passes: bool,
}

/// Closed-loop simulation parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdmpcMpcParams {
    pub delta: f64,
    pub substeps: usize,
    pub horizon_steps: usize,
    pub t_sim: f64,
    pub goal_radius: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> SdmpcStatus {
    match e {
        Error::Dimension(_) => SdmpcStatus::InvalidArgument,
        Error::Config(_) => SdmpcStatus::Config,
        Error::Domain { .. } | Error::InfeasibleState { .. } | Error::OutsideKernel { .. } => {
            SdmpcStatus::Domain
        }
        Error::InfeasibleOcp { .. } => SdmpcStatus::InfeasibleOcp,
        Error::ConstraintActive { .. } => SdmpcStatus::ConstraintActive,
        Error::Divergence { .. } => SdmpcStatus::Divergence,
        Error::NotStabilizable(_) => SdmpcStatus::NotStabilizable,
        Error::Io(_) | Error::Csv(_) | Error::Json(_) => SdmpcStatus::Io,
        _ => SdmpcStatus::Numerical,
    }
}

/// Runs `f`, translating errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), SdmpcStatus>) -> SdmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdmpcStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            SdmpcStatus::Panic
        }
    }
}

fn fail(e: Error) -> SdmpcStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> SdmpcStatus {
    set_error(format!("{what} is null"));
    SdmpcStatus::NullPointer
}

fn invalid(msg: impl Into<String>) -> SdmpcStatus {
    set_error(msg.into());
    SdmpcStatus::InvalidArgument
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, SdmpcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not UTF-8")))
}

/// # Safety
/// `p` must be null or point to `len` readable doubles.
unsafe fn read_slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], SdmpcStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failing call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sdmpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sdmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a plant from the built-in registry (`"double_integrator"`,
/// `"scalar_unstable"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_plant_from_registry(
    name: *const c_char,
    out: *mut *mut SdmpcPlant,
) -> SdmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let name = read_str(name, "name")?;
        let plant = Plant::from_registry(name).map_err(fail)?;
        *out = Box::into_raw(Box::new(SdmpcPlant { inner: plant }));
        Ok(())
    })
}

/// Creates a plant from the `[system]`, `[constraints]` and `[cost]`
/// sections of a TOML document.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_plant_from_toml(
    toml: *const c_char,
    out: *mut *mut SdmpcPlant,
) -> SdmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = read_str(toml, "toml")?;
        let plant = ExperimentConfig::from_toml_str(text)
            .and_then(|c| c.plant())
            .map_err(fail)?;
        *out = Box::into_raw(Box::new(SdmpcPlant { inner: plant }));
        Ok(())
    })
}

/// Releases a plant; null is ignored.
///
/// # Safety
/// `plant` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_plant_free(plant: *mut SdmpcPlant) {
    if !plant.is_null() {
        drop(Box::from_raw(plant));
    }
}

/// State dimension, 0 for a null handle.
///
/// # Safety
/// `plant` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_plant_state_dim(plant: *const SdmpcPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.inner.system.state_dim())
}

/// Input dimension, 0 for a null handle.
///
/// # Safety
/// `plant` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_plant_input_dim(plant: *const SdmpcPlant) -> usize {
    plant.as_ref().map_or(0, |p| p.inner.system.input_dim())
}

/// Riccati solution `P` (`n×n`, row-major), LQR gain `F` (`m×n`,
/// row-major, `u = Fx`) and `γ = σmax(P)/σmin(Q)`. Any output may be null.
///
/// # Safety
/// Non-null outputs must hold `n²`, `m·n` and one double respectively.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_lq_constants(
    plant: *const SdmpcPlant,
    p_out: *mut f64,
    gain_out: *mut f64,
    gamma_out: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let plant = plant.as_ref().ok_or_else(|| null("plant"))?;
        let lq = plant_lq_constants(&plant.inner).map_err(fail)?;
        if !p_out.is_null() {
            let n = lq.p.nrows();
            for i in 0..n {
                for j in 0..n {
                    *p_out.add(i * n + j) = lq.p[(i, j)];
                }
            }
        }
        if !gain_out.is_null() {
            let (m, n) = lq.gain.shape();
            for i in 0..m {
                for j in 0..n {
                    *gain_out.add(i * n + j) = lq.gain[(i, j)];
                }
            }
        }
        if !gamma_out.is_null() {
            *gamma_out = lq.gamma;
        }
        Ok(())
    })
}

fn mpc_setup(params: &SdmpcMpcParams) -> Result<(GridSpec, MpcOptions), SdmpcStatus> {
    let grid = GridSpec::with_substeps(params.delta, params.substeps, params.horizon_steps)
        .map_err(fail)?;
    let options = MpcOptions {
        t_sim: params.t_sim,
        goal_radius: params.goal_radius,
        ..MpcOptions::default()
    };
    Ok((grid, options))
}

/// Default simulation parameters: `δ = 0.1`, 10 substeps, `N = 4`,
/// 40 s, goal radius `1e-2`.
#[no_mangle]
pub extern "C" fn sdmpc_mpc_params_default() -> SdmpcMpcParams {
    let o = MpcOptions::default();
    SdmpcMpcParams {
        delta: 0.1,
        substeps: 10,
        horizon_steps: 4,
        t_sim: o.t_sim,
        goal_radius: o.goal_radius,
    }
}

/// Simulates the receding-horizon closed loop from `x0`.
///
/// # Safety
/// `x0` must hold `x0_len` doubles, `params` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_mpc(
    plant: *const SdmpcPlant,
    x0: *const f64,
    x0_len: usize,
    params: *const SdmpcMpcParams,
    out: *mut *mut SdmpcRun,
) -> SdmpcStatus {
    guard(|| {
        let plant = plant.as_ref().ok_or_else(|| null("plant"))?;
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x0 = read_slice(x0, x0_len, "x0")?;
        let (grid, options) = mpc_setup(params)?;
        let run = run_mpc(&plant.inner, x0, grid, &options).map_err(fail)?;
        *out = Box::into_raw(Box::new(SdmpcRun { inner: run }));
        Ok(())
    })
}

/// Releases a run; null is ignored.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_free(run: *mut SdmpcRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Whether the run reached the goal radius without constraint violation.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_success(run: *const SdmpcRun) -> bool {
    run.as_ref().is_some_and(|r| r.inner.success)
}

/// Distance of the last sampled state from the equilibrium; NaN for null.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_final_distance(run: *const SdmpcRun) -> f64 {
    run.as_ref().map_or(f64::NAN, |r| r.inner.final_distance)
}

/// Largest node constraint residual of the run; NaN for null.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_max_violation(run: *const SdmpcRun) -> f64 {
    run.as_ref()
        .map_or(f64::NAN, |r| r.inner.max_node_violation)
}

/// Number of sampling instants at which an OCP was solved.
///
/// # Safety
/// `run` must be null or a valid handle.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_num_samples(run: *const SdmpcRun) -> usize {
    run.as_ref().map_or(0, |r| r.inner.per_step.len())
}

/// Time, state and OCP value at sampling instant `k`.
///
/// # Safety
/// `state_out` must hold `state_len` doubles; `time_out` and `value_out`
/// may be null.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_run_sample(
    run: *const SdmpcRun,
    k: usize,
    time_out: *mut f64,
    state_out: *mut f64,
    state_len: usize,
    value_out: *mut f64,
) -> SdmpcStatus {
    guard(|| {
        let run = run.as_ref().ok_or_else(|| null("run"))?;
        let rec = run
            .inner
            .per_step
            .get(k)
            .ok_or_else(|| invalid(format!("sample {k} out of range")))?;
        if !state_out.is_null() {
            if state_len != rec.state.len() {
                return Err(invalid(format!(
                    "state buffer has {state_len} entries, need {}",
                    rec.state.len()
                )));
            }
            std::slice::from_raw_parts_mut(state_out, state_len).copy_from_slice(&rec.state);
        }
        if !time_out.is_null() {
            *time_out = rec.time;
        }
        if !value_out.is_null() {
            *value_out = rec.value;
        }
        Ok(())
    })
}

/// Smallest `N ≤ n_max` whose closed loop succeeds; writes 0 when none does.
/// `params.horizon_steps` is ignored.
///
/// # Safety
/// `x0` must hold `x0_len` doubles, `params` and `n_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_smallest_horizon(
    plant: *const SdmpcPlant,
    x0: *const f64,
    x0_len: usize,
    params: *const SdmpcMpcParams,
    n_max: usize,
    n_out: *mut usize,
) -> SdmpcStatus {
    guard(|| {
        let plant = plant.as_ref().ok_or_else(|| null("plant"))?;
        let params = params.as_ref().ok_or_else(|| null("params"))?;
        if n_out.is_null() {
            return Err(null("n_out"));
        }
        let x0 = read_slice(x0, x0_len, "x0")?;
        let (_, options) = mpc_setup(&SdmpcMpcParams {
            horizon_steps: 1,
            ..*params
        })?;
        let n = smallest_horizon(
            &plant.inner,
            x0,
            params.delta,
            params.substeps,
            n_max,
            &options,
        )
        .map_err(fail)?;
        *n_out = n.unwrap_or(0);
        Ok(())
    })
}

/// Evaluates the horizon condition for `(γ, M, C, C̄, δ)` at `n`.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_check_condition(
    gamma: f64,
    m: f64,
    c: f64,
    cbar: f64,
    delta: f64,
    n: usize,
    out: *mut SdmpcCertificate,
) -> SdmpcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let inputs = ConditionInputs::new(gamma, m, c, cbar, delta).map_err(fail)?;
        let cert = check_condition(&inputs, n).map_err(fail)?;
        *out = SdmpcCertificate {
            delta: cert.delta,
            n: cert.n,
            horizon: cert.horizon,
            gamma: cert.gamma,
            m: cert.m,
            c: cert.c,
            beta: cert.beta,
            cbar: cert.cbar,
            condition_lhs: cert.condition_lhs,
            alpha: cert.alpha,
            passes: cert.passes,
        };
        Ok(())
    })
}

/// Smallest horizon passing the condition for `(γ, M, C, C̄, δ)`.
///
/// # Safety
/// `n_out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn sdmpc_min_horizon(
    gamma: f64,
    m: f64,
    c: f64,
    cbar: f64,
    delta: f64,
    n_out: *mut usize,
) -> SdmpcStatus {
    guard(|| {
        if n_out.is_null() {
            return Err(null("n_out"));
        }
        let inputs = ConditionInputs::new(gamma, m, c, cbar, delta).map_err(fail)?;
        *n_out = min_horizon_bound(&inputs).map_err(fail)?.n_bar;
        Ok(())
    })
}
