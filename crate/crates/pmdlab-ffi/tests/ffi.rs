//! Exercises the C entry points the way a foreign caller would: strings
//! in, strings out, explicit frees, status codes checked at every step.

use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::ptr;

use pmdlab_ffi::{
    pmdlab_lab_builtin, pmdlab_lab_describe, pmdlab_lab_free, pmdlab_lab_from_json,
    pmdlab_last_error, pmdlab_policy_value, pmdlab_run, pmdlab_string_free, pmdlab_verify,
    PmdlabLab, PmdlabStatus,
};

fn take_string(ptr: *mut c_char) -> String {
    assert!(!ptr.is_null());
    let text = unsafe { CStr::from_ptr(ptr) }.to_str().unwrap().to_owned();
    unsafe { pmdlab_string_free(ptr) };
    text
}

fn take_error() -> String {
    take_string(pmdlab_last_error())
}

fn builtin(name: &str) -> *mut PmdlabLab {
    let name = CString::new(name).unwrap();
    let mut lab: *mut PmdlabLab = ptr::null_mut();
    let status = unsafe { pmdlab_lab_builtin(name.as_ptr(), &mut lab) };
    assert_eq!(status, PmdlabStatus::Ok, "{}", take_error());
    lab
}

#[test]
fn builtin_lab_describes_itself() {
    let lab = builtin("fig1");
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { pmdlab_lab_describe(lab, &mut out) };
    assert_eq!(status, PmdlabStatus::Ok);
    let desc: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(desc["n_states"], 3);
    assert_eq!(desc["n_actions"], 2);
    assert_eq!(desc["class"], "convex_hull");
    unsafe { pmdlab_lab_free(lab) };
}

#[test]
fn policy_value_matches_the_cycle_closed_form() {
    let lab = builtin("fig1");
    let table = CString::new("[[0.5, 0.5], [0.5, 0.5], [0.5, 0.5]]").unwrap();
    let mut value = f64::NAN;
    let status = unsafe { pmdlab_policy_value(lab, table.as_ptr(), &mut value) };
    assert_eq!(status, PmdlabStatus::Ok, "{}", take_error());
    assert!((value - 24.876_884_422_110_553).abs() < 1e-9, "value {value}");
    unsafe { pmdlab_lab_free(lab) };
}

#[test]
fn run_descends_and_reports_its_series() {
    let lab = builtin("fig1");
    let config = CString::new(
        r#"{
            "eta": 0.02,
            "k_iters": 60,
            "eps_expl": 0.01,
            "seed": 7,
            "initial": {"hull": [0.9, 0.1]}
        }"#,
    )
    .unwrap();
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { pmdlab_run(lab, config.as_ptr(), &mut out) };
    assert_eq!(status, PmdlabStatus::Ok, "{}", take_error());
    let summary: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    let iterates = summary["iterates"].as_array().unwrap();
    assert_eq!(iterates.len(), 61);
    let first = iterates[0]["value"].as_f64().unwrap();
    let last = summary["final_value"].as_f64().unwrap();
    assert!(last < first - 1.0, "no descent: {first} -> {last}");
    unsafe { pmdlab_lab_free(lab) };
}

#[test]
fn json_constructed_lab_round_trips_through_the_core_serializers() {
    let tol = pmdlab::Tolerances::default();
    let spec = pmdlab::bench::RandomSpec {
        n_states: 3,
        n_actions: 2,
        gamma: 0.9,
        seed: 42,
        class: pmdlab::bench::RandomClassKind::Hull,
        n_bases: 2,
        floor: 0.05,
    };
    let (mdp, class) = pmdlab::bench::random_instance(&spec, &tol).unwrap();
    let mdp_json = CString::new(pmdlab::mdp::mdp_to_json(&mdp).unwrap()).unwrap();
    let class_json = CString::new(pmdlab::policy::class_to_json(&class).unwrap()).unwrap();
    let mut lab: *mut PmdlabLab = ptr::null_mut();
    let status = unsafe { pmdlab_lab_from_json(mdp_json.as_ptr(), class_json.as_ptr(), &mut lab) };
    assert_eq!(status, PmdlabStatus::Ok, "{}", take_error());
    let mut out: *mut c_char = ptr::null_mut();
    assert_eq!(unsafe { pmdlab_lab_describe(lab, &mut out) }, PmdlabStatus::Ok);
    let desc: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    assert_eq!(desc["n_states"], 3);
    assert_eq!(desc["class"], "convex_hull");
    unsafe { pmdlab_lab_free(lab) };
}

#[test]
fn error_paths_set_codes_and_messages() {
    // Null handle.
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { pmdlab_lab_describe(ptr::null(), &mut out) };
    assert_eq!(status, PmdlabStatus::NullArgument);
    assert!(take_error().contains("null"));

    // Unknown builtin name.
    let name = CString::new("fig3").unwrap();
    let mut lab: *mut PmdlabLab = ptr::null_mut();
    let status = unsafe { pmdlab_lab_builtin(name.as_ptr(), &mut lab) };
    assert_eq!(status, PmdlabStatus::InvalidInput);
    assert!(take_error().contains("fig3"));

    // Malformed model JSON.
    let bad = CString::new("{").unwrap();
    let class = CString::new(r#"{"kind": "complete"}"#).unwrap();
    let status = unsafe { pmdlab_lab_from_json(bad.as_ptr(), class.as_ptr(), &mut lab) };
    assert_eq!(status, PmdlabStatus::InvalidInput);
    let _ = take_error();

    // A config that parses but asks for an unusable step size.
    let lab = builtin("fig1");
    let config = CString::new(r#"{"eta": -1.0, "k_iters": 5}"#).unwrap();
    let status = unsafe { pmdlab_run(lab, config.as_ptr(), &mut out) };
    assert_ne!(status, PmdlabStatus::Ok);
    assert!(!take_error().is_empty());
    unsafe { pmdlab_lab_free(lab) };

    // The error slot is consumed by reads.
    assert!(pmdlab_last_error().is_null());
}

#[test]
fn certification_suite_passes_through_the_boundary() {
    let mut out: *mut c_char = ptr::null_mut();
    let status = unsafe { pmdlab_verify(0, &mut out) };
    assert_eq!(status, PmdlabStatus::Ok, "{}", take_error());
    let reports: serde_json::Value = serde_json::from_str(&take_string(out)).unwrap();
    let reports = reports.as_array().unwrap();
    assert!(reports.len() >= 20);
    assert!(reports.iter().all(|r| r["pass"].as_bool() == Some(true)));
}

#[test]
fn generated_header_declares_the_c_surface() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("include")
        .join("pmdlab.h");
    let text = std::fs::read_to_string(header).unwrap();
    assert!(text.contains("typedef struct PmdlabLab PmdlabLab;"));
    assert!(text.contains("PMDLAB_STATUS_CHECK_FAILED = 4"));
    assert!(text.contains("char *pmdlab_last_error(void);"));
}
