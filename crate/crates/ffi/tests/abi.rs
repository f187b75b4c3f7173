use casca_ffi::*;
use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = casca_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn fixture(name: &str) -> CString {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name);
    c(p.to_str().unwrap())
}

#[test]
fn decision_math() {
    let mut out = 0.0;
    unsafe {
        assert_eq!(casca_carbon_footprint(60.0, 60.0, &mut out), CascaStatus::Ok);
        assert_eq!(out, 60.0);
        assert_eq!(casca_carbon_footprint(-1.0, 60.0, &mut out), CascaStatus::InvalidArgument);
        assert!(last_error().contains("non-negative"));
        assert_eq!(casca_carbon_footprint(1.0, 1.0, ptr::null_mut()), CascaStatus::NullArgument);

        assert_eq!(casca_in(11.0, 0.0, 10.0, 3.0, &mut out), CascaStatus::Ok);
        assert_eq!(out, -6.0);
        assert_eq!(casca_in(1.0, 2.0, 1.0, 1.0, &mut out), CascaStatus::InvalidArgument);

        let (v, lo, hi) = ([25.0, 31.0], [24.0, 24.0], [30.0, 30.0]);
        assert_eq!(casca_reward(v.as_ptr(), lo.as_ptr(), hi.as_ptr(), 2, 4.0, &mut out), CascaStatus::Ok);
        assert_eq!(out, -0.875);
        assert_eq!(casca_reward(v.as_ptr(), lo.as_ptr(), hi.as_ptr(), 0, 4.0, &mut out), CascaStatus::InvalidArgument);
    }
}

#[test]
fn gds_step() {
    let mut step = CascaGdsStep {
        s: 31.0,
        s_min: 24.0,
        s_max: 30.0,
        p: 9.0,
        p_min: 0.0,
        p_max: 16.0,
        lambda: 1,
        delta: 1.0,
        is_carbon: false,
        intensity: 0.0,
    };
    let mut out = 0.0;
    unsafe {
        assert_eq!(casca_gds_decide(&step, &mut out), CascaStatus::Ok);
        assert_eq!(out, 8.0);
        step.is_carbon = true;
        step.s = 0.1;
        step.intensity = 400.0;
        step.lambda = -1;
        assert_eq!(casca_gds_decide(&step, &mut out), CascaStatus::Ok);
        assert_eq!(out, 10.0);
        step.lambda = 0;
        assert_eq!(casca_gds_decide(&step, &mut out), CascaStatus::InvalidArgument);
        assert_eq!(casca_gds_decide(ptr::null(), &mut out), CascaStatus::NullArgument);
    }
}

#[test]
fn topic_patterns() {
    let mut p = ptr::null_mut();
    let mut hit = false;
    unsafe {
        assert_eq!(casca_pattern_new(c("fps/+").as_ptr(), &mut p), CascaStatus::Ok);
        assert_eq!(casca_pattern_matches(p, c("fps/c1").as_ptr(), &mut hit), CascaStatus::Ok);
        assert!(hit);
        assert_eq!(casca_pattern_matches(p, c("fps/c1/x").as_ptr(), &mut hit), CascaStatus::Ok);
        assert!(!hit);
        let bad = [0xffu8, 0];
        assert_eq!(casca_pattern_matches(p, bad.as_ptr().cast(), &mut hit), CascaStatus::InvalidUtf8);
        casca_pattern_free(p);
        casca_pattern_free(ptr::null_mut());

        let mut q = ptr::null_mut();
        assert_eq!(casca_pattern_new(c("a/#/b").as_ptr(), &mut q), CascaStatus::InvalidArgument);
        assert!(q.is_null());
        assert_eq!(casca_pattern_new(ptr::null(), &mut q), CascaStatus::NullArgument);
    }
}

#[test]
fn store_round_trip() {
    let mut s = ptr::null_mut();
    let mut out = 0.0;
    unsafe {
        assert_eq!(casca_store_new(&mut s), CascaStatus::Ok);
        for (ts, v) in [(1000, 20.0), (2000, 30.0), (61_000, 40.0)] {
            let j = format!(r#"{{"m":"fps","tg":{{"client":"c1"}},"f":{{"value":{v}}},"ts":{ts}}}"#);
            assert_eq!(casca_store_write(s, c(&j).as_ptr()), CascaStatus::Ok);
        }
        assert_eq!(casca_store_len(s), 3);
        // (1000, 61000] holds 30 and 40
        assert_eq!(casca_store_query(s, c("mean(fps.value, 60s)").as_ptr(), 61_000, &mut out), CascaStatus::Ok);
        assert_eq!(out, 35.0);
        assert_eq!(casca_store_query(s, c("count(fps.value, 1s)").as_ptr(), 500_000, &mut out), CascaStatus::Empty);
        assert_eq!(casca_store_query(s, c("median(fps.value, 1s)").as_ptr(), 0, &mut out), CascaStatus::InvalidArgument);
        assert_eq!(casca_store_write(s, c("{not json").as_ptr()), CascaStatus::InvalidArgument);
        casca_store_free(s);
    }
    assert_eq!(unsafe { casca_store_len(ptr::null()) }, 0);
}

#[test]
fn emma_lookups() {
    let mut e = ptr::null_mut();
    let mut out = 0.0;
    unsafe {
        assert_eq!(casca_emma_load(fixture("sources.csv").as_ptr(), fixture("locations.csv").as_ptr(), &mut e), CascaStatus::Ok);
        assert_eq!(
            casca_emma_location_intensity(e, c("AT").as_ptr(), 1_704_067_200_000, c("hourly").as_ptr(), &mut out),
            CascaStatus::Ok
        );
        assert_eq!(out, 251.2);
        assert_eq!(
            casca_emma_location_intensity(e, c("AT").as_ptr(), 0, c("hourly").as_ptr(), &mut out),
            CascaStatus::NotFound
        );
        assert_eq!(
            casca_emma_location_intensity(e, c("AT").as_ptr(), 0, c("weekly").as_ptr(), &mut out),
            CascaStatus::InvalidArgument
        );
        assert_eq!(casca_emma_source_intensity(e, c("wind").as_ptr(), &mut out), CascaStatus::Ok);
        assert_eq!(out, 11.0);
        assert_eq!(casca_emma_source_intensity(e, c("peat").as_ptr(), &mut out), CascaStatus::InvalidArgument);
        casca_emma_free(e);

        let mut none = ptr::null_mut();
        assert_eq!(casca_emma_load(c("/nonexistent.csv").as_ptr(), fixture("locations.csv").as_ptr(), &mut none), CascaStatus::Io);
    }
}

#[test]
fn header_declares_every_export() {
    let h = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/casca.h")).unwrap();
    for name in [
        "casca_last_error",
        "casca_carbon_footprint",
        "casca_in",
        "casca_reward",
        "casca_gds_decide",
        "casca_pattern_new",
        "casca_pattern_matches",
        "casca_pattern_free",
        "casca_store_new",
        "casca_store_write",
        "casca_store_query",
        "casca_store_len",
        "casca_store_free",
        "casca_emma_load",
        "casca_emma_location_intensity",
        "casca_emma_source_intensity",
        "casca_emma_free",
        "typedef struct CascaStore CascaStore",
        "CASCA_STATUS_EMPTY",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/casca.h");
    let status = match std::process::Command::new("cc").args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"]).arg(&header).status() {
        Ok(s) => s,
        Err(e) => {
            eprintln!("no C compiler available ({e}); skipping");
            return;
        }
    };
    assert!(status.success());
}
