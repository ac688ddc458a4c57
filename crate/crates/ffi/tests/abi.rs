use std::ffi::{CStr, CString};
use std::ptr;

use bprr_ffi::*;

const SCENARIO: &str = r#"{
  "cluster": {
    "model": { "blocks": 4, "d_model": 8, "dtype_bytes": 2, "block_bytes": 100.0,
               "max_input_tokens": 4, "max_output_tokens": 8, "cache_bytes": 10.0 },
    "servers": [
      { "id": "a", "memory_bytes": 500.0, "tau": 0.01, "tau_prefill": { "intercept": 0.02, "slope": 0.0 } },
      { "id": "b", "memory_bytes": 500.0, "tau": 0.02, "tau_prefill": { "intercept": 0.03, "slope": 0.0 } }
    ],
    "clients": [ { "id": "c", "rtt": { "a": 0.1, "b": 0.2 } } ]
  },
  "workload": {
    "arrivals": { "kind": "poisson", "rate": 1.0 },
    "requests": 10,
    "lengths": { "kind": "fixed", "input_len": 4, "output_len": 8 },
    "seed": 3
  }
}"#;

fn load() -> *mut BprrScenario {
    let json = CString::new(SCENARIO).unwrap();
    let mut handle = ptr::null_mut();
    let status = unsafe { bprr_scenario_from_json(json.as_ptr(), &mut handle) };
    assert_eq!(status, BprrStatus::Ok, "{}", last_error());
    assert!(!handle.is_null());
    handle
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(bprr_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn take(s: *mut std::ffi::c_char) -> String {
    let text = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_owned();
    unsafe { bprr_string_free(s) };
    text
}

#[test]
fn place_bounds_simulate() {
    let h = load();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { bprr_place_json(h, ptr::null(), &mut out) },
        BprrStatus::Ok
    );
    let doc: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(doc["policy"], "proposed");

    let (mut upper, mut lower, mut ratio) = (0.0, 0.0, 0.0);
    assert_eq!(
        unsafe { bprr_bounds(h, 1, &mut upper, &mut lower, &mut ratio) },
        BprrStatus::Ok
    );
    assert!(lower > 0.0 && lower <= upper);
    assert!((ratio - upper / lower).abs() < 1e-12);

    let petals = CString::new("petals").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { bprr_simulate_json(h, petals.as_ptr(), 2, &mut out) },
        BprrStatus::Ok
    );
    let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    assert_eq!(report["runs"], 2);

    let client = CString::new("c").unwrap();
    let mut per_token = 0.0;
    let status =
        unsafe { bprr_route_per_token(h, ptr::null(), client.as_ptr(), 4, 8, &mut per_token) };
    assert_eq!(status, BprrStatus::Ok);
    assert!(per_token > 0.0);
    unsafe { bprr_scenario_free(h) };
}

#[test]
fn errors_are_reported() {
    let mut handle = ptr::null_mut();
    assert_eq!(
        unsafe { bprr_scenario_from_json(ptr::null(), &mut handle) },
        BprrStatus::InvalidArgument
    );
    assert!(!last_error().is_empty());

    let bad = CString::new(r#"{"preset": {"kind": "nowhere"}}"#).unwrap();
    assert_eq!(
        unsafe { bprr_scenario_from_json(bad.as_ptr(), &mut handle) },
        BprrStatus::Validation
    );
    assert!(handle.is_null());

    let h = load();
    assert!(last_error().is_empty());
    let unknown = CString::new("fastest").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { bprr_place_json(h, unknown.as_ptr(), &mut out) },
        BprrStatus::Validation
    );
    assert!(last_error().contains("fastest"));
    let mut x = 0.0;
    assert_eq!(
        unsafe { bprr_bounds(h, 1, &mut x, ptr::null_mut(), &mut x) },
        BprrStatus::InvalidArgument
    );
    unsafe { bprr_scenario_free(h) };
    unsafe { bprr_scenario_free(ptr::null_mut()) };
}

#[test]
fn header_declares_the_api() {
    let header =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/bprr.h")).unwrap();
    for name in [
        "bprr_scenario_from_json",
        "bprr_scenario_free",
        "bprr_place_json",
        "bprr_bounds",
        "bprr_simulate_json",
        "bprr_route_per_token",
        "bprr_string_free",
        "bprr_last_error_message",
        "typedef struct BprrScenario BprrScenario",
        "BPRR_STATUS_OK = 0",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}
