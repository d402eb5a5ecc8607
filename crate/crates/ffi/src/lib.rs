//! C ABI over the misinfo-mfg solver.
//!
//! Every entry point returns an [`MfgStatus`]. Objects are handed out as
//! opaque pointers and must be released with the matching `*_free`
//! function. After a non-`MFG_OK` status, [`mfg_last_error_message`] gives a
//! description that stays valid until the next failing call on the same
//! thread. Array accessors copy into a caller buffer of length `len` and
//! return `MFG_BUFFER_TOO_SMALL` when it is shorter than the point count.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use misinfo_mfg::config::{config_to_json, parse_config};
use misinfo_mfg::dynamics::{integrate_forward, MeanFieldTrajectory, I};
use misinfo_mfg::finite::{mean_field_deviation, simulate, FiniteSimResult};
use misinfo_mfg::model::{reference_scenario, validate, ScenarioConfig};
use misinfo_mfg::solver::{baseline_evaluation, solve_mfe, EquilibriumSolution, PolicyOutcome};
use misinfo_mfg::Error;

#[repr(C)]
#[allow(non_camel_case_types)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MfgStatus {
    MFG_OK = 0,
    MFG_NULL_POINTER = 1,
    MFG_INVALID_ARGUMENT = 2,
    MFG_INVALID_CONFIG = 3,
    MFG_PARSE_ERROR = 4,
    MFG_INTEGRATION_DIVERGED = 5,
    /// The solve stopped at the iteration cap. The best iterate is still
    /// returned through the output pointer.
    MFG_NOT_CONVERGED = 6,
    MFG_INVALID_POPULATION = 7,
    MFG_STEP_TOO_LARGE = 8,
    MFG_GRID_MISMATCH = 9,
    MFG_BUFFER_TOO_SMALL = 10,
    MFG_PANIC = 11,
    MFG_INTERNAL = 12,
}

/// A validated scenario.
pub struct MfgScenario(ScenarioConfig);

/// An equilibrium (or the best iterate of a non-converged solve).
pub struct MfgSolution(EquilibriumSolution);

/// The always-accept policy evaluated on a scenario.
pub struct MfgBaseline(PolicyOutcome);

/// Finite-population replicas together with the mean-field trajectory of
/// the policy they were run under.
pub struct MfgFiniteResult {
    result: FiniteSimResult,
    mean_field: MeanFieldTrajectory,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MfgStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidConfig(_) => MfgStatus::MFG_INVALID_CONFIG,
            Error::Parse { .. } | Error::Json(_) => MfgStatus::MFG_PARSE_ERROR,
            Error::IntegrationDiverged { .. } => MfgStatus::MFG_INTEGRATION_DIVERGED,
            Error::NotConverged(_) => MfgStatus::MFG_NOT_CONVERGED,
            Error::InvalidPopulation(_) => MfgStatus::MFG_INVALID_POPULATION,
            Error::StepTooLarge { .. } => MfgStatus::MFG_STEP_TOO_LARGE,
            Error::GridMismatch(_) => MfgStatus::MFG_GRID_MISMATCH,
            _ => MfgStatus::MFG_INTERNAL,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: MfgStatus, message: impl Into<String>) -> Failure {
    Failure(status, message.into())
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<MfgStatus, Failure>) -> MfgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("panic inside the solver".into());
            MfgStatus::MFG_PANIC
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(MfgStatus::MFG_NULL_POINTER, "null handle"))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(MfgStatus::MFG_NULL_POINTER, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

unsafe fn write_scalar<T>(out: *mut T, value: T) -> Result<MfgStatus, Failure> {
    if out.is_null() {
        return Err(fail(MfgStatus::MFG_NULL_POINTER, "null output pointer"));
    }
    *out = value;
    Ok(MfgStatus::MFG_OK)
}

unsafe fn copy_out(values: impl ExactSizeIterator<Item = f64>, buf: *mut f64, len: usize) -> Result<MfgStatus, Failure> {
    let needed = values.len();
    if buf.is_null() {
        return Err(fail(MfgStatus::MFG_NULL_POINTER, "null buffer"));
    }
    if len < needed {
        return Err(fail(MfgStatus::MFG_BUFFER_TOO_SMALL, format!("buffer holds {len} values, {needed} needed")));
    }
    for (i, v) in values.enumerate() {
        *buf.add(i) = v;
    }
    Ok(MfgStatus::MFG_OK)
}

fn check_class(config: &ScenarioConfig, class: usize) -> Result<(), Failure> {
    if class < config.network.len() {
        Ok(())
    } else {
        Err(fail(MfgStatus::MFG_INVALID_ARGUMENT, format!("class index {class} out of range")))
    }
}

/// Message describing the most recent failure on this thread, or null.
#[no_mangle]
pub extern "C" fn mfg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mfg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Builds the four-class reference scenario.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_reference(out: *mut *mut MfgScenario) -> MfgStatus {
    guard(|| {
        store(out, MfgScenario(validate(reference_scenario())?))?;
        Ok(MfgStatus::MFG_OK)
    })
}

/// Parses and validates a scenario from a NUL-terminated JSON document.
///
/// # Safety
/// `json` must be a valid C string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_from_json(json: *const c_char, out: *mut *mut MfgScenario) -> MfgStatus {
    guard(|| {
        let text = borrow(json)?;
        let text = CStr::from_ptr(text)
            .to_str()
            .map_err(|_| fail(MfgStatus::MFG_PARSE_ERROR, "scenario is not UTF-8"))?;
        store(out, MfgScenario(parse_config(text)?.config))?;
        Ok(MfgStatus::MFG_OK)
    })
}

/// Serializes a scenario to JSON. Release the result with [`mfg_string_free`].
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_to_json(scenario: *const MfgScenario, out: *mut *mut c_char) -> MfgStatus {
    guard(|| {
        let s = borrow(scenario)?;
        let json = CString::new(config_to_json(&s.0)).map_err(|e| fail(MfgStatus::MFG_INTERNAL, e.to_string()))?;
        write_scalar(out, json.into_raw())
    })
}

/// Replaces the curing rate of every class and revalidates.
///
/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_set_nu(scenario: *mut MfgScenario, nu: f64) -> MfgStatus {
    guard(|| {
        let s = scenario.as_mut().ok_or_else(|| fail(MfgStatus::MFG_NULL_POINTER, "null handle"))?;
        s.0 = validate(s.0.clone().map_classes(|c| c.nu = nu))?;
        Ok(MfgStatus::MFG_OK)
    })
}

/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_class_count(scenario: *const MfgScenario, out: *mut usize) -> MfgStatus {
    guard(|| write_scalar(out, borrow(scenario)?.0.network.len()))
}

/// Number of time-grid points, the length of every per-time array.
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_point_count(scenario: *const MfgScenario, out: *mut usize) -> MfgStatus {
    guard(|| write_scalar(out, borrow(scenario)?.0.grid.n_points()))
}

/// Degree of class `class`.
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_class_degree(scenario: *const MfgScenario, class: usize, out: *mut u32) -> MfgStatus {
    guard(|| {
        let s = borrow(scenario)?;
        check_class(&s.0, class)?;
        write_scalar(out, s.0.network.classes[class].degree)
    })
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_scenario_free(scenario: *mut MfgScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Solves for the mean-field equilibrium. On `MFG_NOT_CONVERGED` the best
/// iterate is still written to `out`.
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solve(scenario: *const MfgScenario, out: *mut *mut MfgSolution) -> MfgStatus {
    guard(|| {
        let s = borrow(scenario)?;
        if out.is_null() {
            return Err(fail(MfgStatus::MFG_NULL_POINTER, "null output pointer"));
        }
        match solve_mfe(&s.0) {
            Ok(sol) => {
                store(out, MfgSolution(sol))?;
                Ok(MfgStatus::MFG_OK)
            }
            Err(e @ Error::NotConverged(_)) => {
                set_error(e.to_string());
                let Error::NotConverged(nc) = e else { unreachable!() };
                store(out, MfgSolution(nc.best))?;
                Ok(MfgStatus::MFG_NOT_CONVERGED)
            }
            Err(e) => Err(e.into()),
        }
    })
}

/// # Safety
/// `solution` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_converged(solution: *const MfgSolution, out: *mut bool) -> MfgStatus {
    guard(|| write_scalar(out, borrow(solution)?.0.converged))
}

/// # Safety
/// `solution` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_iterations(solution: *const MfgSolution, out: *mut usize) -> MfgStatus {
    guard(|| write_scalar(out, borrow(solution)?.0.iterations_used))
}

/// Fixed-point residual of the returned policy.
///
/// # Safety
/// `solution` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_residual(solution: *const MfgSolution, out: *mut f64) -> MfgStatus {
    guard(|| write_scalar(out, borrow(solution)?.0.final_residual))
}

/// Acceptance probability of class `class` at every grid point.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_alpha(solution: *const MfgSolution, class: usize, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| {
        let s = &borrow(solution)?.0;
        let path = s.policy.alpha.get(class).ok_or_else(|| fail(MfgStatus::MFG_INVALID_ARGUMENT, "class index out of range"))?;
        copy_out(path.iter().copied(), buf, len)
    })
}

/// Infected fraction of class `class` at every grid point.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_infected(solution: *const MfgSolution, class: usize, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| {
        let s = &borrow(solution)?.0;
        if class >= s.policy.alpha.len() {
            return Err(fail(MfgStatus::MFG_INVALID_ARGUMENT, "class index out of range"));
        }
        copy_out(s.trajectory.states.iter().map(|row| row[class][I]), buf, len)
    })
}

/// Probability that a random link points to an infected node.
///
/// # Safety
/// `solution` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_theta(solution: *const MfgSolution, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| copy_out(borrow(solution)?.0.aggregates.theta.iter().copied(), buf, len))
}

/// # Safety
/// `solution` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_solution_free(solution: *mut MfgSolution) {
    if !solution.is_null() {
        drop(Box::from_raw(solution));
    }
}

/// Evaluates the always-accept policy.
///
/// # Safety
/// `scenario` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_baseline(scenario: *const MfgScenario, out: *mut *mut MfgBaseline) -> MfgStatus {
    guard(|| {
        let s = borrow(scenario)?;
        store(out, MfgBaseline(baseline_evaluation(&s.0)?))?;
        Ok(MfgStatus::MFG_OK)
    })
}

/// # Safety
/// `baseline` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_baseline_infected(baseline: *const MfgBaseline, class: usize, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| {
        let b = &borrow(baseline)?.0;
        if class >= b.qoi.len() {
            return Err(fail(MfgStatus::MFG_INVALID_ARGUMENT, "class index out of range"));
        }
        copy_out(b.trajectory.states.iter().map(|row| row[class][I]), buf, len)
    })
}

/// Expected unscaled QoI of class `class` at every grid point.
///
/// # Safety
/// `baseline` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_baseline_qoi(baseline: *const MfgBaseline, class: usize, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| {
        let b = &borrow(baseline)?.0;
        let path = b.qoi.get(class).ok_or_else(|| fail(MfgStatus::MFG_INVALID_ARGUMENT, "class index out of range"))?;
        copy_out(path.iter().copied(), buf, len)
    })
}

/// # Safety
/// `baseline` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_baseline_free(baseline: *mut MfgBaseline) {
    if !baseline.is_null() {
        drop(Box::from_raw(baseline));
    }
}

/// Simulates `replicas` populations of `n` nodes under the solution's
/// policy. Results depend only on `seed`.
///
/// # Safety
/// `scenario` and `solution` must be live handles and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_simulate(
    scenario: *const MfgScenario,
    solution: *const MfgSolution,
    n: u32,
    replicas: usize,
    seed: u64,
    out: *mut *mut MfgFiniteResult,
) -> MfgStatus {
    guard(|| {
        let (s, sol) = (borrow(scenario)?, borrow(solution)?);
        if replicas == 0 {
            return Err(fail(MfgStatus::MFG_INVALID_ARGUMENT, "at least one replica is required"));
        }
        let result = simulate(&s.0, &sol.0.policy, n, replicas, seed)?;
        let (mean_field, _) = integrate_forward(&sol.0.policy, &s.0.network, &s.0.grid)?;
        store(out, MfgFiniteResult { result, mean_field })?;
        Ok(MfgStatus::MFG_OK)
    })
}

/// Replica-averaged empirical link infection probability.
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_theta(result: *const MfgFiniteResult, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| copy_out(borrow(result)?.result.theta.iter().copied(), buf, len))
}

/// Replica-averaged squared distance to the mean-field trajectory.
///
/// # Safety
/// `result` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_deviation(result: *const MfgFiniteResult, buf: *mut f64, len: usize) -> MfgStatus {
    guard(|| {
        let r = borrow(result)?;
        let dev = mean_field_deviation(&r.result, &r.mean_field)?;
        copy_out(dev.into_iter(), buf, len)
    })
}

/// # Safety
/// `result` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mfg_finite_free(result: *mut MfgFiniteResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
