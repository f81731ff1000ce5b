//! C ABI over the laboratory core.
//!
//! Everything crosses the boundary as JSON text: callers pass UTF-8
//! strings, results come back as heap strings released through
//! [`pmdlab_string_free`]. Model/class pairs live behind an opaque
//! [`PmdlabLab`] handle. Every entry point returns a [`PmdlabStatus`];
//! on anything but `Ok` the message is retrievable once via
//! [`pmdlab_last_error`]. The generated header lands in
//! `include/pmdlab.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pmdlab::bench::builtin_instance;
use pmdlab::mdp::{load_mdp_json, Mdp, Policy};
use pmdlab::pmd::{policy_value, run_pmd, PmdConfig};
use pmdlab::policy::{load_class_json, PolicyClass};
use pmdlab::verify::full_suite;
use pmdlab::{Error, Tolerances};

/// Outcome of an FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PmdlabStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    BadEncoding = 2,
    /// Input parsed but failed validation (model, class, or run config).
    InvalidInput = 3,
    /// The computation ran but a numerical guarantee did not hold.
    CheckFailed = 4,
    /// The request needs a combination the laboratory does not provide.
    Unsupported = 5,
    /// A panic escaped the core; treat the call as failed and the
    /// offending handle as poisoned.
    Panicked = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let stored = CString::new(msg).unwrap_or_else(|_| c"message contained NUL".to_owned());
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(stored));
}

fn fail(status: PmdlabStatus, msg: String) -> PmdlabStatus {
    set_last_error(msg);
    status
}

fn status_for(err: &Error) -> PmdlabStatus {
    if err.is_input_error() {
        PmdlabStatus::InvalidInput
    } else if matches!(err, Error::Unsupported(_)) {
        PmdlabStatus::Unsupported
    } else {
        PmdlabStatus::CheckFailed
    }
}

fn report(err: Error) -> PmdlabStatus {
    fail(status_for(&err), err.to_string())
}

/// Borrows a C string argument, rejecting null and non-UTF-8.
///
/// # Safety
/// `ptr` must be null or point at a NUL-terminated string that stays
/// alive for the duration of the call.
unsafe fn borrow_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PmdlabStatus> {
    if ptr.is_null() {
        return Err(fail(
            PmdlabStatus::NullArgument,
            format!("{what} pointer is null"),
        ));
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        fail(
            PmdlabStatus::BadEncoding,
            format!("{what} is not valid UTF-8"),
        )
    })
}

/// Hands a string to the caller through `out`, who must release it with
/// `pmdlab_string_free`.
unsafe fn give_string(out: *mut *mut c_char, text: String) -> PmdlabStatus {
    if out.is_null() {
        return fail(
            PmdlabStatus::NullArgument,
            "output pointer is null".into(),
        );
    }
    match CString::new(text) {
        Ok(owned) => {
            unsafe { *out = owned.into_raw() };
            PmdlabStatus::Ok
        }
        Err(_) => fail(
            PmdlabStatus::CheckFailed,
            "result contained an interior NUL".into(),
        ),
    }
}

fn guarded(body: impl FnOnce() -> PmdlabStatus) -> PmdlabStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(PmdlabStatus::Panicked, "panic inside pmdlab".into()),
    }
}

/// A validated model plus the policy class runs optimize over. Opaque
/// to C; create with `pmdlab_lab_from_json` or `pmdlab_lab_builtin`,
/// release with `pmdlab_lab_free`.
pub struct PmdlabLab {
    mdp: Mdp,
    class: PolicyClass,
    tol: Tolerances,
}

unsafe fn install_lab(out_lab: *mut *mut PmdlabLab, lab: PmdlabLab) -> PmdlabStatus {
    if out_lab.is_null() {
        return fail(
            PmdlabStatus::NullArgument,
            "output handle pointer is null".into(),
        );
    }
    unsafe { *out_lab = Box::into_raw(Box::new(lab)) };
    PmdlabStatus::Ok
}

unsafe fn borrow_lab<'a>(lab: *const PmdlabLab) -> Result<&'a PmdlabLab, PmdlabStatus> {
    if lab.is_null() {
        return Err(fail(
            PmdlabStatus::NullArgument,
            "lab handle is null".into(),
        ));
    }
    Ok(unsafe { &*lab })
}

/// Builds a laboratory from model and class JSON (same layout the CLI
/// `gen` subcommand writes).
///
/// # Safety
/// String arguments follow `borrow_str`; `out_lab` must be a valid
/// pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_lab_from_json(
    mdp_json: *const c_char,
    class_json: *const c_char,
    out_lab: *mut *mut PmdlabLab,
) -> PmdlabStatus {
    guarded(|| {
        let mdp_text = match unsafe { borrow_str(mdp_json, "model JSON") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let class_text = match unsafe { borrow_str(class_json, "class JSON") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let tol = Tolerances::default();
        let mdp = match load_mdp_json(mdp_text, &tol) {
            Ok(m) => m,
            Err(e) => return report(e),
        };
        let class = match load_class_json(class_text, mdp.n_states(), mdp.n_actions(), &tol) {
            Ok(c) => c,
            Err(e) => return report(e),
        };
        unsafe { install_lab(out_lab, PmdlabLab { mdp, class, tol }) }
    })
}

/// Builds one of the named built-in instances ("fig1" or
/// "fig2-smoothness").
///
/// # Safety
/// See `pmdlab_lab_from_json`.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_lab_builtin(
    name: *const c_char,
    out_lab: *mut *mut PmdlabLab,
) -> PmdlabStatus {
    guarded(|| {
        let name = match unsafe { borrow_str(name, "instance name") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let tol = Tolerances::default();
        let built = match builtin_instance(name, &tol) {
            Ok(b) => b,
            Err(e) => return report(e),
        };
        unsafe {
            install_lab(
                out_lab,
                PmdlabLab {
                    mdp: built.mdp,
                    class: built.class,
                    tol,
                },
            )
        }
    })
}

/// Releases a laboratory handle. Null is a no-op.
///
/// # Safety
/// `lab` must have come from a `pmdlab_lab_*` constructor and not been
/// freed before.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_lab_free(lab: *mut PmdlabLab) {
    if !lab.is_null() {
        drop(unsafe { Box::from_raw(lab) });
    }
}

/// Writes a one-object JSON description of the handle (sizes, discount,
/// class kind).
///
/// # Safety
/// `lab` as in `pmdlab_lab_free`; `out_json` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_lab_describe(
    lab: *const PmdlabLab,
    out_json: *mut *mut c_char,
) -> PmdlabStatus {
    guarded(|| {
        let lab = match unsafe { borrow_lab(lab) } {
            Ok(l) => l,
            Err(status) => return status,
        };
        let kind = match &lab.class {
            PolicyClass::Complete => "complete",
            PolicyClass::ConvexHull { .. } => "convex_hull",
            PolicyClass::EpsGreedy { .. } => "eps_greedy",
            PolicyClass::LogLinear { .. } => "log_linear",
        };
        let text = serde_json::json!({
            "n_states": lab.mdp.n_states(),
            "n_actions": lab.mdp.n_actions(),
            "gamma": lab.mdp.gamma(),
            "horizon": lab.mdp.horizon(),
            "class": kind,
        })
        .to_string();
        unsafe { give_string(out_json, text) }
    })
}

/// Evaluates a full policy table (JSON `[[p(a|s)...]...]`) exactly and
/// writes the scalar start-weighted value.
///
/// # Safety
/// Pointer arguments as in the other entry points; `out_value` must be
/// a valid `double` slot.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_policy_value(
    lab: *const PmdlabLab,
    policy_json: *const c_char,
    out_value: *mut f64,
) -> PmdlabStatus {
    guarded(|| {
        let lab = match unsafe { borrow_lab(lab) } {
            Ok(l) => l,
            Err(status) => return status,
        };
        let text = match unsafe { borrow_str(policy_json, "policy JSON") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        if out_value.is_null() {
            return fail(
                PmdlabStatus::NullArgument,
                "output value pointer is null".into(),
            );
        }
        let rows: Vec<Vec<f64>> = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return report(Error::from(e)),
        };
        let pi = match Policy::new(rows, &lab.tol) {
            Ok(p) => p,
            Err(e) => return report(e),
        };
        match policy_value(&lab.mdp, &pi, &lab.tol) {
            Ok(v) => {
                unsafe { *out_value = v };
                PmdlabStatus::Ok
            }
            Err(e) => report(e),
        }
    })
}

/// Runs mirror descent on the handle's class with a JSON run config
/// (same schema as the CLI's `pmd` block) and writes a JSON summary:
/// step size, smoothness estimate, reference value, and the per-iterate
/// `k`/`value`/`gap` series.
///
/// # Safety
/// Pointer arguments as in the other entry points.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_run(
    lab: *const PmdlabLab,
    config_json: *const c_char,
    out_json: *mut *mut c_char,
) -> PmdlabStatus {
    guarded(|| {
        let lab = match unsafe { borrow_lab(lab) } {
            Ok(l) => l,
            Err(status) => return status,
        };
        let text = match unsafe { borrow_str(config_json, "run config JSON") } {
            Ok(t) => t,
            Err(status) => return status,
        };
        let config: PmdConfig = match serde_json::from_str(text) {
            Ok(c) => c,
            Err(e) => return report(Error::from(e)),
        };
        let run = match run_pmd(&lab.mdp, &lab.class, &config, &lab.tol) {
            Ok(r) => r,
            Err(e) => return report(e),
        };
        let iterates: Vec<serde_json::Value> = run
            .records
            .iter()
            .map(|rec| {
                serde_json::json!({
                    "k": rec.k,
                    "value": rec.value,
                    "gap": rec.gap,
                })
            })
            .collect();
        let last = run.records.last().expect("run always has iterates");
        let text = serde_json::json!({
            "eta": run.eta,
            "eps_expl": run.eps_expl,
            "beta_hat": run.beta_hat,
            "reference_value": run.reference_value,
            "final_value": last.value,
            "final_gap": last.gap,
            "iterates": iterates,
        })
        .to_string();
        unsafe { give_string(out_json, text) }
    })
}

/// Runs the full certification suite and writes the report array as
/// JSON. Returns `Ok` when every check passes and `CheckFailed` (with
/// the JSON still written) when any fails.
///
/// # Safety
/// `out_json` must be a valid slot.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_verify(seed: u64, out_json: *mut *mut c_char) -> PmdlabStatus {
    guarded(|| {
        let reports = match full_suite(seed, &Tolerances::default()) {
            Ok(r) => r,
            Err(e) => return report(e),
        };
        let all_pass = reports.iter().all(|r| r.pass);
        let text = match serde_json::to_string(&reports) {
            Ok(t) => t,
            Err(e) => return report(Error::from(e)),
        };
        let status = unsafe { give_string(out_json, text) };
        if status == PmdlabStatus::Ok && !all_pass {
            let failed = reports.iter().filter(|r| !r.pass).count();
            return fail(
                PmdlabStatus::CheckFailed,
                format!("{failed} certification checks failed"),
            );
        }
        status
    })
}

/// Releases a string returned by this library. Null is a no-op.
///
/// # Safety
/// `s` must have come from this library and not been freed before.
#[no_mangle]
pub unsafe extern "C" fn pmdlab_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Takes the pending error message for this thread, or null when the
/// last call succeeded. The caller frees it with `pmdlab_string_free`.
#[no_mangle]
pub extern "C" fn pmdlab_last_error() -> *mut c_char {
    LAST_ERROR
        .with(|slot| slot.borrow_mut().take())
        .map_or(ptr::null_mut(), CString::into_raw)
}
