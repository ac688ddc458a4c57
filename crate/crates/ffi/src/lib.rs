//! C ABI over `bprr-core`.
//!
//! Functions return a [`BprrStatus`]; on failure the message is available
//! from [`bprr_last_error_message`] on the same thread. Strings handed out
//! by the library must be released with [`bprr_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use bprr_core::bounds::bound_summary;
use bprr_core::model::{Request, TokenCost};
use bprr_core::placement::cg_block_placement;
use bprr_core::scenario::{parse_scenario, Scenario};
use bprr_core::sim::{auto_target, run_monte_carlo, PolicyConfig, PolicyKind, PreparedPolicy};
use bprr_core::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BprrStatus {
    Ok = 0,
    /// Null pointer or malformed UTF-8 argument.
    InvalidArgument = 1,
    /// The scenario or a request failed validation.
    Validation = 2,
    /// No feasible placement or route.
    Infeasible = 3,
    /// An enumeration budget was exceeded.
    Budget = 4,
    /// I/O, serialization or an internal panic.
    Internal = 5,
}

/// Opaque handle to a loaded scenario.
pub struct BprrScenario {
    scenario: Scenario,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let msg = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> BprrStatus {
    match e {
        Error::BudgetExceeded(_) => BprrStatus::Budget,
        Error::Infeasible(_)
        | Error::PlacementInfeasible(_)
        | Error::NoFeasiblePath(_)
        | Error::NeverAvailable { .. }
        | Error::InfeasibleEdge { .. } => BprrStatus::Infeasible,
        Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::CapacityViolated(_) => {
            BprrStatus::Internal
        }
        _ => BprrStatus::Validation,
    }
}

enum Failure {
    Arg(&'static str),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Core(e.into())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> BprrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            BprrStatus::Ok
        }
        Ok(Err(Failure::Arg(msg))) => {
            set_error(msg);
            BprrStatus::InvalidArgument
        }
        Ok(Err(Failure::Core(e))) => {
            set_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic");
            BprrStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Arg(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure::Arg(name))
}

unsafe fn scenario_arg<'a>(p: *const BprrScenario) -> Result<&'a Scenario, Failure> {
    p.as_ref()
        .map(|s| &s.scenario)
        .ok_or(Failure::Arg("scenario is null"))
}

unsafe fn policy_arg(p: *const c_char) -> Result<PolicyKind, Failure> {
    if p.is_null() {
        return Ok(PolicyKind::Proposed);
    }
    Ok(str_arg(p, "policy is not UTF-8")?.parse()?)
}

fn put_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Arg("output pointer is null"));
    }
    let c = CString::new(text).map_err(|_| Failure::Arg("output contains a NUL byte"))?;
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn config_for(scenario: &Scenario, kind: PolicyKind) -> PolicyConfig {
    scenario
        .policies
        .iter()
        .find(|p| p.kind == kind)
        .cloned()
        .unwrap_or_else(|| PolicyConfig::new(kind))
}

/// Parses a scenario document. On success `*out` owns a handle to free
/// with [`bprr_scenario_free`].
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn bprr_scenario_from_json(
    json: *const c_char,
    out: *mut *mut BprrScenario,
) -> BprrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure::Arg("output pointer is null"));
        }
        let text = str_arg(json, "json is null or not UTF-8")?;
        let scenario = parse_scenario(text, None)?;
        *out = Box::into_raw(Box::new(BprrScenario { scenario }));
        Ok(())
    })
}

/// # Safety
/// `scenario` must come from [`bprr_scenario_from_json`] or be null.
#[no_mangle]
pub unsafe extern "C" fn bprr_scenario_free(scenario: *mut BprrScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Placement of `policy` (null for the proposed policy) as JSON.
///
/// # Safety
/// Pointers must be valid; `policy` may be null.
#[no_mangle]
pub unsafe extern "C" fn bprr_place_json(
    scenario: *const BprrScenario,
    policy: *const c_char,
    out: *mut *mut c_char,
) -> BprrStatus {
    guard(|| {
        let scenario = scenario_arg(scenario)?;
        let kind = policy_arg(policy)?;
        let workload = scenario.sizing_workload();
        let prepared = PreparedPolicy::prepare(
            &scenario.cluster,
            &workload,
            &config_for(scenario, kind),
            workload.seed,
        )?;
        let doc = serde_json::json!({
            "policy": kind,
            "target": prepared.target,
            "placement": prepared.placement.to_doc(&scenario.cluster),
        });
        put_string(out, serde_json::to_string(&doc)?)
    })
}

/// Per-token upper bound, request-weighted lower bound and their ratio for
/// the greedy placement sized for `target` concurrent requests (0 sizes it
/// from the workload).
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn bprr_bounds(
    scenario: *const BprrScenario,
    target: u64,
    upper: *mut f64,
    lower: *mut f64,
    ratio: *mut f64,
) -> BprrStatus {
    guard(|| {
        let scenario = scenario_arg(scenario)?;
        if upper.is_null() || lower.is_null() || ratio.is_null() {
            return Err(Failure::Arg("output pointer is null"));
        }
        let cluster = &scenario.cluster;
        let workload = scenario.sizing_workload();
        let target = if target == 0 {
            auto_target(cluster, &workload)?
        } else {
            target
        };
        let plan = cg_block_placement(cluster, target)?;
        let b = bound_summary(cluster, &plan, &workload.generate(cluster)?)?;
        *upper = b.upper;
        *lower = b.lower;
        *ratio = b.ratio;
        Ok(())
    })
}

/// Monte Carlo simulation of the scenario workload under `policy` (null for
/// the proposed policy); `runs` of 0 uses the scenario's run count.
///
/// # Safety
/// Pointers must be valid; `policy` may be null.
#[no_mangle]
pub unsafe extern "C" fn bprr_simulate_json(
    scenario: *const BprrScenario,
    policy: *const c_char,
    runs: u32,
    out: *mut *mut c_char,
) -> BprrStatus {
    guard(|| {
        let scenario = scenario_arg(scenario)?;
        let kind = policy_arg(policy)?;
        let workload = scenario.workload()?;
        let runs = if runs == 0 {
            scenario.runs
        } else {
            runs as usize
        };
        let (report, _) = run_monte_carlo(
            &scenario.cluster,
            workload,
            &config_for(scenario, kind),
            &scenario.options,
            runs,
        )?;
        put_string(out, serde_json::to_string(&report)?)
    })
}

/// Decode per-token time of the route chosen for one request of `client`
/// on the idle cluster.
///
/// # Safety
/// Pointers must be valid; `policy` may be null.
#[no_mangle]
pub unsafe extern "C" fn bprr_route_per_token(
    scenario: *const BprrScenario,
    policy: *const c_char,
    client: *const c_char,
    input_len: u32,
    output_len: u32,
    per_token: *mut f64,
) -> BprrStatus {
    guard(|| {
        let scenario = scenario_arg(scenario)?;
        let kind = policy_arg(policy)?;
        let client = str_arg(client, "client is null or not UTF-8")?;
        if per_token.is_null() {
            return Err(Failure::Arg("output pointer is null"));
        }
        let cluster = &scenario.cluster;
        cluster.model().check_lengths(input_len, output_len)?;
        let workload = scenario.sizing_workload();
        let prepared = PreparedPolicy::prepare(
            cluster,
            &workload,
            &config_for(scenario, kind),
            workload.seed,
        )?;
        let request = Request {
            id: 0,
            client: cluster.client_index(client)?,
            arrival: 0.0,
            input_len,
            output_len,
        };
        let states = bprr_core::routing::initial_states(
            cluster,
            &prepared.placement,
            scenario.options.accounting,
        );
        let outcome = prepared.decide(cluster, &states, &request, 0.0)?;
        *per_token = TokenCost::Decode.route_time(cluster, &outcome.route);
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn bprr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn bprr_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}
