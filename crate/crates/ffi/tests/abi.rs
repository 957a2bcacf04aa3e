use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use pifl_ffi::*;

const CONFIG: &str = "[run]\nrounds = 2\ntiers = 2\n[population]\nkind = \"mixture\"\nnum_clients = 6\n\
                      train_samples = 40\ntest_samples = 20\npersonal_samples = 10\n";

fn last_error() -> String {
    let p = pifl_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn simulation_lifecycle() {
    let cfg = CString::new(CONFIG).unwrap();
    let mut sim = ptr::null_mut();
    unsafe {
        assert_eq!(pifl_sim_new(cfg.as_ptr(), &mut sim), PiflStatus::Ok);
        let dir = tempfile::tempdir().unwrap();
        let d = CString::new(dir.path().to_str().unwrap()).unwrap();
        assert_eq!(pifl_sim_write(sim, d.as_ptr()), PiflStatus::InvalidState);
        assert_eq!(pifl_sim_run(sim), PiflStatus::Ok);
        assert_eq!(pifl_sim_write(sim, d.as_ptr()), PiflStatus::Ok);
        assert!(dir.path().join("summary.json").exists());

        let mut json = ptr::null_mut();
        assert_eq!(pifl_sim_summary_json(sim, &mut json), PiflStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(CStr::from_ptr(json).to_str().unwrap()).unwrap();
        assert_eq!(v["completed_rounds"], 2);
        assert_eq!(v["clients"], 6);
        pifl_string_free(json);
        pifl_sim_free(sim);
    }
}

#[test]
fn config_errors_are_reported() {
    let cfg = CString::new("[incentive]\neta = 3.0\n").unwrap();
    let mut sim = ptr::null_mut();
    assert_eq!(unsafe { pifl_sim_new(cfg.as_ptr(), &mut sim) }, PiflStatus::ConfigError);
    assert!(sim.is_null());
    assert!(last_error().contains("incentive.eta"));
}

#[test]
fn closed_form_at_the_threshold() {
    let mut e = PiflEstimatorErrors::default();
    // m1 = 10, n0 = 5, sigma2 = 1: the threshold is tau2 = 1, where tier
    // and local errors coincide.
    assert_eq!(unsafe { pifl_theory_closed_form(10, 10, 5, 1.0, 1.0, 5.0, &mut e) }, PiflStatus::Ok);
    assert!((e.local - 0.2).abs() < 1e-15);
    assert!((e.tier - e.local).abs() < 1e-12);
    assert_eq!(unsafe { pifl_theory_closed_form(0, 1, 5, 1.0, 1.0, 0.0, &mut e) }, PiflStatus::InvalidArgument);
}

#[test]
fn reimbursement_values() {
    let mut r = PiflReimbursement::default();
    // 10% improvement against gamma 0.2: half of eta is returned.
    assert_eq!(unsafe { pifl_reimbursement(0.55, 0.5, 0.5, 0.2, &mut r) }, PiflStatus::Ok);
    assert!((r.delta_util - 0.1).abs() < 1e-12);
    assert!((r.theta - 0.25).abs() < 1e-12);
    assert_eq!(unsafe { pifl_reimbursement(0.5, 0.5, 2.0, 0.2, &mut r) }, PiflStatus::InvalidArgument);
    assert_eq!(unsafe { pifl_reimbursement(0.5, 0.5, 0.5, 0.2, ptr::null_mut()) }, PiflStatus::InvalidArgument);
}

#[test]
fn header_is_current() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/pifl.h")).unwrap();
    for name in [
        "pifl_sim_new",
        "pifl_sim_run",
        "pifl_sim_write",
        "pifl_sim_summary_json",
        "pifl_sim_free",
        "pifl_string_free",
        "pifl_last_error",
        "pifl_version",
        "pifl_theory_closed_form",
        "pifl_reimbursement",
        "PIFL_STATUS_INVALID_STATE",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}

/// Compiles a C program against the generated header and static library.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    let profile_dir: PathBuf = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libpifl_ffi.a");
    assert!(lib.exists(), "static library not found at {}", lib.display());
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let dir = tempfile::tempdir().unwrap();
    let exe = dir.path().join("c_smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c_smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C program exited with {:?}", out.status.code());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("ok "), "{stdout}");
}

fn which_cc() -> Result<String, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc.to_string());
        }
    }
    Err(())
}
