//! C ABI over `opus-core`.
//!
//! Scenarios and simulation results are opaque handles created by the
//! library and released with the matching `*_free` function. Fallible calls
//! return an [`OpusStatus`]; the message of the last failure on the calling
//! thread is available from [`opus_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use opus_core::cli::{CliError, Scenario};
use opus_core::control::ControlPolicy;
use opus_core::econ::{reference_config, Comparison, REFERENCE_SHAPE};
use opus_core::fabric::{simulate_with, SimOptions, SimResult};
use opus_core::model::max_gpus;
use opus_core::windows::eq1_bound;

/// Status codes. The nonzero values match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpusStatus {
    Ok = 0,
    NullArgument = 1,
    Config = 2,
    Infeasible = 3,
    Io = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpusPolicy {
    OnDemand = 0,
    Provisioning = 1,
}

/// Opaque scenario handle.
pub struct OpusScenario {
    inner: Scenario,
}

/// Opaque simulation result handle.
pub struct OpusSimResult {
    inner: SimResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(err: CliError) -> OpusStatus {
    let status = match err {
        CliError::Config(_) => OpusStatus::Config,
        CliError::Infeasible(_) => OpusStatus::Infeasible,
        CliError::Io(_) => OpusStatus::Io,
    };
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> Result<(), OpusStatus>) -> OpusStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OpusStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic".into());
            OpusStatus::Panic
        }
    }
}

fn null(name: &str) -> OpusStatus {
    set_error(format!("{name} is null"));
    OpusStatus::NullArgument
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, OpusStatus> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{name} is not valid UTF-8"));
        OpusStatus::Config
    })
}

/// Message of the last failed call on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn opus_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Loads a scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opus_scenario_load(path: *const c_char, out: *mut *mut OpusScenario) -> OpusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let inner = Scenario::load(Path::new(path)).map_err(fail)?;
        *out = Box::into_raw(Box::new(OpusScenario { inner }));
        Ok(())
    })
}

/// Parses scenario text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opus_scenario_from_toml(text: *const c_char, out: *mut *mut OpusScenario) -> OpusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let inner = Scenario::from_toml(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(OpusScenario { inner }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn opus_scenario_free(scenario: *mut OpusScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Simulates one iteration of the scenario. A negative `delay_s` keeps the
/// scenario's own reconfiguration delay.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opus_simulate(
    scenario: *const OpusScenario,
    policy: OpusPolicy,
    delay_s: f64,
    out: *mut *mut OpusSimResult,
) -> OpusStatus {
    guard(|| {
        if scenario.is_null() {
            return Err(null("scenario"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let s = &(*scenario).inner;
        let mut topo = s.topology().map_err(fail)?;
        if delay_s >= 0.0 {
            topo = topo.with_reconfig_delay(delay_s).map_err(|e| fail(e.into()))?;
        } else if delay_s.is_nan() {
            return Err(fail(CliError::Config("delay_s is NaN".into())));
        }
        let dag = s.dag(&topo).map_err(fail)?;
        let policy = match policy {
            OpusPolicy::OnDemand => ControlPolicy::OnDemand,
            OpusPolicy::Provisioning => ControlPolicy::Provisioning,
        };
        let options = SimOptions { alpha_s: s.control.alpha_s };
        let inner = simulate_with(&dag, &topo, policy, &options).map_err(|e| fail(e.into()))?;
        *out = Box::into_raw(Box::new(OpusSimResult { inner }));
        Ok(())
    })
}

/// # Safety
/// `result` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn opus_result_free(result: *mut OpusSimResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Iteration time in seconds; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn opus_result_makespan(result: *const OpusSimResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.makespan)
}

/// Iteration time on electrical rails; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn opus_result_baseline_makespan(result: *const OpusSimResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.baseline_makespan)
}

/// Makespan divided by the electrical baseline; NaN for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn opus_result_overhead(result: *const OpusSimResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.overhead_vs_baseline)
}

/// Number of circuit reconfigurations; 0 for a null handle.
///
/// # Safety
/// `result` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn opus_result_reconfig_count(result: *const OpusSimResult) -> usize {
    result.as_ref().map_or(0, |r| r.inner.reconfig_log.len())
}

/// GPUs one flat OCS rail fabric can host.
#[no_mangle]
pub extern "C" fn opus_max_gpus(scaleup_size: u64, radix: u64) -> u64 {
    max_gpus(scaleup_size, radix)
}

/// Upper bound on windows per rail for a pipeline-parallel iteration.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn opus_eq1_bound(
    pp: u64,
    n_layer: u64,
    n_microbatch: u64,
    has_cp: bool,
    has_ep: bool,
    out: *mut u64,
) -> OpusStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = eq1_bound(pp, n_layer, n_microbatch, has_cp, has_ep).map_err(|e| fail(e.into()))?;
        Ok(())
    })
}

/// Cost and power savings of OCS rails with the reference unit values at
/// the reference scale, as fractions.
///
/// # Safety
/// `cost` and `power` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn opus_reference_savings(cost: *mut f64, power: *mut f64) -> OpusStatus {
    guard(|| {
        if cost.is_null() || power.is_null() {
            return Err(null("output pointer"));
        }
        let cmp = Comparison::new(&REFERENCE_SHAPE, &reference_config()).map_err(|e| fail(e.into()))?;
        *cost = cmp.cost_saving();
        *power = cmp.power_saving();
        Ok(())
    })
}
