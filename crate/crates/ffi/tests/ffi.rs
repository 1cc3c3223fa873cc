use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use mlmc_pimd::estimators::allocation_plan;
use mlmc_pimd_ffi::*;

fn case() -> *mut MlmcTestCase {
    let m = CString::new("coupled-wells").unwrap();
    let o = CString::new("mixed-trig").unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { mlmc_test_case_new(m.as_ptr(), o.as_ptr(), 1.0, 1.0, &mut out) };
    assert_eq!(s, MlmcStatus::Ok);
    assert!(!out.is_null());
    out
}

fn last_error() -> String {
    let p = mlmc_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fast_options() -> MlmcSamplerOptions {
    let mut o = mlmc_sampler_options_default();
    o.n_burn = 1000;
    o.level_sum = MlmcLevelSum::Transfer;
    o
}

#[test]
fn unknown_model_reports_config_error() {
    let m = CString::new("nope").unwrap();
    let o = CString::new("mixed-trig").unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { mlmc_test_case_new(m.as_ptr(), o.as_ptr(), 1.0, 1.0, &mut out) };
    assert_eq!(s, MlmcStatus::Config);
    assert!(out.is_null());
    assert!(last_error().contains("unknown model"));
}

#[test]
fn null_arguments_are_rejected() {
    let o = CString::new("mixed-trig").unwrap();
    let mut out = ptr::null_mut();
    let s = unsafe { mlmc_test_case_new(ptr::null(), o.as_ptr(), 1.0, 1.0, &mut out) };
    assert_eq!(s, MlmcStatus::NullPointer);
    let mut v = 0.0;
    assert_eq!(
        unsafe { mlmc_report_estimate(ptr::null(), &mut v) },
        MlmcStatus::NullPointer
    );
    assert_eq!(unsafe { mlmc_report_level_count(ptr::null()) }, 0);
    unsafe {
        mlmc_report_free(ptr::null_mut());
        mlmc_test_case_free(ptr::null_mut());
    }
}

#[test]
fn success_clears_last_error() {
    let mut v = 0.0;
    unsafe { mlmc_report_estimate(ptr::null(), &mut v) };
    assert!(!mlmc_last_error_message().is_null());
    let mut counts = [0u64; 2];
    let s = unsafe { mlmc_allocation_plan(MlmcMethod::Rm, 4, 1, 100, counts.as_mut_ptr(), 2) };
    assert_eq!(s, MlmcStatus::Ok);
    assert!(mlmc_last_error_message().is_null());
    assert_eq!(counts, [50, 50]);
}

#[test]
fn plan_matches_library() {
    let mut counts = [0u64; 6];
    let s =
        unsafe { mlmc_allocation_plan(MlmcMethod::Mlmc, 16, 5, 1_200_000, counts.as_mut_ptr(), 6) };
    assert_eq!(s, MlmcStatus::Ok);
    assert_eq!(
        counts.to_vec(),
        allocation_plan(16, 5, 1_200_000).unwrap().counts
    );
    let s = unsafe { mlmc_allocation_plan(MlmcMethod::Mlmc, 16, 5, 100, counts.as_mut_ptr(), 3) };
    assert_eq!(s, MlmcStatus::InvalidArgument);
}

#[test]
fn estimate_is_reproducible_and_exposes_levels() {
    let c = case();
    let opts = fast_options();
    let run = || {
        let mut rep = ptr::null_mut();
        let s = unsafe { mlmc_estimate(c, MlmcMethod::Mlmc, 8, 2, 20_000, &opts, 11, 0, &mut rep) };
        assert_eq!(s, MlmcStatus::Ok, "{}", last_error());
        rep
    };
    let (r1, r2) = (run(), run());
    let (mut e1, mut e2) = (0.0, 0.0);
    unsafe {
        mlmc_report_estimate(r1, &mut e1);
        mlmc_report_estimate(r2, &mut e2);
    }
    assert_eq!(e1.to_bits(), e2.to_bits());
    assert_eq!(unsafe { mlmc_report_level_count(r1) }, 3);
    let mut total = 0;
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..3 {
        let mut l = MlmcLevel::default();
        assert_eq!(unsafe { mlmc_report_level(r1, k, &mut l) }, MlmcStatus::Ok);
        assert_eq!(l.k, k);
        total += l.count;
        num += l.mean_a;
        den += l.mean_b;
    }
    assert_eq!(total, 20_000);
    assert!((num / den - e1).abs() < 1e-12, "{num}/{den} vs {e1}");
    let mut l = MlmcLevel::default();
    assert_eq!(
        unsafe { mlmc_report_level(r1, 3, &mut l) },
        MlmcStatus::InvalidArgument
    );
    let mut secs = -1.0;
    unsafe { mlmc_report_wall_clock(r1, &mut secs) };
    assert!(secs >= 0.0);
    unsafe {
        mlmc_report_free(r1);
        mlmc_report_free(r2);
        mlmc_test_case_free(c);
    }
}

#[test]
fn pimdsh_and_bad_hop_rate() {
    let c = case();
    let opts = fast_options();
    let mut rep = ptr::null_mut();
    let s = unsafe { mlmc_pimdsh_estimate(c, 8, 1.0, &opts, 5_000, 3, &mut rep) };
    assert_eq!(s, MlmcStatus::Ok, "{}", last_error());
    let mut e = f64::NAN;
    unsafe { mlmc_report_estimate(rep, &mut e) };
    assert!(e.is_finite());
    unsafe { mlmc_report_free(rep) };
    let s = unsafe { mlmc_pimdsh_estimate(c, 8, -1.0, &opts, 5_000, 3, &mut rep) };
    assert_eq!(s, MlmcStatus::Dynamics);
    assert!(rep.is_null());
    unsafe { mlmc_test_case_free(c) };
}

#[test]
fn oracles() {
    let c = case();
    let mut v = 0.0;
    assert_eq!(
        unsafe { mlmc_pseudospectral_reference(c, 512, 8.0, &mut v) },
        MlmcStatus::Ok
    );
    assert!((v - 0.98774099644).abs() < 1e-9, "{v}");
    assert_eq!(
        unsafe { mlmc_pseudospectral_reference(c, 7, 8.0, &mut v) },
        MlmcStatus::Oracle
    );
    let mut q = 0.0;
    let s = unsafe { mlmc_quadrature_truncated_average(c, 2, 1, 41, 4.0, &mut q) };
    assert_eq!(s, MlmcStatus::Ok, "{}", last_error());
    assert!(q.is_finite());
    let s = unsafe { mlmc_quadrature_truncated_average(c, 9, 1, 41, 4.0, &mut q) };
    assert_eq!(s, MlmcStatus::Oracle);
    unsafe { mlmc_test_case_free(c) };
}

#[test]
fn version_matches_crate() {
    let v = unsafe { CStr::from_ptr(mlmc_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(dir.join("include/mlmc_pimd.h")).unwrap();
    let src = std::fs::read_to_string(dir.join("src/lib.rs")).unwrap();
    let exports: Vec<&str> = src
        .lines()
        .filter_map(|l| l.split("extern \"C\" fn ").nth(1))
        .filter_map(|rest| rest.split('(').next())
        .collect();
    assert!(exports.len() >= 14);
    for name in exports {
        assert!(
            header.contains(&format!("{name}(")),
            "{name} missing from header"
        );
    }
}

#[test]
fn c_program_links_against_static_library() {
    let Some(cc) = ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok())
    else {
        eprintln!("no C compiler; skipping");
        return;
    };
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/ffi-<hash> -> target/<profile>
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().unwrap().parent().unwrap();
    let lib = profile_dir.join("libmlmc_pimd_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built; skipping", lib.display());
        return;
    }
    let out = std::env::temp_dir().join(format!("mlmc_pimd_smoke_{}", std::process::id()));
    let status = Command::new(cc)
        .arg(dir.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(dir.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(
        run.status.success(),
        "exit {:?}: {stdout} {}",
        run.status,
        String::from_utf8_lossy(&run.stderr)
    );
    assert!(stdout.starts_with("ok "), "{stdout}");
}
