use std::ffi::{CStr, CString};
use std::ptr;

use dpforge_ffi::*;

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned();
    unsafe { dpf_string_free(p) };
    s
}

fn last_error() -> Option<String> {
    let p = dpf_last_error();
    (!p.is_null()).then(|| take_string(p))
}

fn write_dataset(dir: &std::path::Path) -> CString {
    let path = dir.join("in.jsonl");
    std::fs::write(
        &path,
        concat!(
            r#"{"id":"a","question":"What is the capital city of France and why?","answer":"<b>Paris</b> is the capital &amp; largest city of France."}"#,
            "\n",
            r#"{"id":"b","question":"How do bridges carry heavy loads safely over rivers?","answer":"They spread weight through arches and cables into strong foundations."}"#,
            "\n"
        ),
    )
    .unwrap();
    CString::new(path.to_str().unwrap()).unwrap()
}

#[test]
fn version_is_static_and_nonempty() {
    let v = unsafe { CStr::from_ptr(dpf_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn strategy_enumeration_and_round_trip() {
    assert_eq!(dpf_strategy_count(), 65);
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dpf_strategy_at(0, &mut s) }, DpfStatus::Ok);
    assert_eq!(unsafe { dpf_strategy_len(s) }, 0);
    assert_eq!(take_string(unsafe { dpf_strategy_to_string(s) }), "NONE");
    unsafe { dpf_strategy_free(s) };

    let text = CString::new("Cleaning -> Selection").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dpf_strategy_parse(text.as_ptr(), &mut s) }, DpfStatus::Ok);
    assert_eq!(unsafe { dpf_strategy_len(s) }, 2);
    assert_eq!(take_string(unsafe { dpf_strategy_to_string(s) }), "Cleaning -> Selection");
    unsafe { dpf_strategy_free(s) };
}

#[test]
fn errors_set_status_and_message() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dpf_strategy_at(65, &mut s) }, DpfStatus::InvalidArgument);
    assert!(s.is_null());
    assert!(last_error().unwrap().contains("out of range"));

    let bad = CString::new("Cleaning -> Cleaning").unwrap();
    assert_eq!(unsafe { dpf_strategy_parse(bad.as_ptr(), &mut s) }, DpfStatus::InvalidArgument);
    assert!(last_error().is_some());

    assert_eq!(unsafe { dpf_strategy_parse(ptr::null(), &mut s) }, DpfStatus::NullPointer);
    assert_eq!(unsafe { dpf_strategy_parse(bad.as_ptr(), ptr::null_mut()) }, DpfStatus::NullPointer);

    let invalid = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { dpf_strategy_parse(invalid.as_ptr().cast(), &mut s) }, DpfStatus::InvalidUtf8);

    let mut v = 0.0;
    assert_eq!(unsafe { dpf_compute_feedback(0.5, 0.25, &mut v) }, DpfStatus::Ok);
    assert_eq!(v, 0.25);
    assert!(last_error().is_none());
    assert_eq!(unsafe { dpf_compute_feedback(f64::NAN, 0.25, &mut v) }, DpfStatus::InvalidArgument);
}

#[test]
fn null_handles_are_tolerated_by_queries_and_frees() {
    unsafe {
        assert_eq!(dpf_dataset_len(ptr::null()), 0);
        assert!(dpf_dataset_fingerprint(ptr::null()).is_null());
        assert!(dpf_strategy_to_string(ptr::null()).is_null());
        dpf_dataset_free(ptr::null_mut());
        dpf_strategy_free(ptr::null_mut());
        dpf_engine_free(ptr::null_mut());
        dpf_string_free(ptr::null_mut());
    }
}

#[test]
fn load_apply_save_with_and_without_cache() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path());
    let mut d = ptr::null_mut();
    assert_eq!(unsafe { dpf_dataset_load(input.as_ptr(), &mut d) }, DpfStatus::Ok);
    assert_eq!(unsafe { dpf_dataset_len(d) }, 2);
    let fp_in = take_string(unsafe { dpf_dataset_fingerprint(d) });
    assert_eq!(fp_in.len(), 64);

    let text = CString::new("Cleaning").unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dpf_strategy_parse(text.as_ptr(), &mut s) }, DpfStatus::Ok);

    let cache_dir = CString::new(dir.path().join("cache").to_str().unwrap()).unwrap();
    let mut cached = ptr::null_mut();
    let mut plain = ptr::null_mut();
    assert_eq!(unsafe { dpf_engine_new(7, cache_dir.as_ptr(), &mut cached) }, DpfStatus::Ok);
    assert_eq!(unsafe { dpf_engine_new(7, ptr::null(), &mut plain) }, DpfStatus::Ok);

    let mut out_a = ptr::null_mut();
    let mut out_b = ptr::null_mut();
    assert_eq!(unsafe { dpf_engine_apply(cached, s, d, &mut out_a) }, DpfStatus::Ok);
    assert_eq!(unsafe { dpf_engine_apply(plain, s, d, &mut out_b) }, DpfStatus::Ok);
    let fp_a = take_string(unsafe { dpf_dataset_fingerprint(out_a) });
    let fp_b = take_string(unsafe { dpf_dataset_fingerprint(out_b) });
    assert_eq!(fp_a, fp_b);
    assert_ne!(fp_a, fp_in);

    let out_path = CString::new(dir.path().join("out.jsonl").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dpf_dataset_save(out_a, out_path.as_ptr()) }, DpfStatus::Ok);
    let saved = std::fs::read_to_string(dir.path().join("out.jsonl")).unwrap();
    assert!(!saved.contains("<b>"));

    let missing = CString::new(dir.path().join("nope.jsonl").to_str().unwrap()).unwrap();
    let mut none = ptr::null_mut();
    assert_eq!(unsafe { dpf_dataset_load(missing.as_ptr(), &mut none) }, DpfStatus::Io);

    unsafe {
        dpf_dataset_free(out_a);
        dpf_dataset_free(out_b);
        dpf_dataset_free(d);
        dpf_strategy_free(s);
        dpf_engine_free(cached);
        dpf_engine_free(plain);
    }
}

#[test]
fn run_search_returns_report_json() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_dataset(dir.path());
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(
        &cfg_path,
        format!("dataset = {:?}\noutput_dir = \"out\"\nseed = 3\nmax_rounds = 2\n", input.to_str().unwrap()),
    )
    .unwrap();
    let cfg = CString::new(cfg_path.to_str().unwrap()).unwrap();
    let out_dir = CString::new(dir.path().join("elsewhere").to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dpf_run_search(cfg.as_ptr(), out_dir.as_ptr(), &mut json) }, DpfStatus::Ok, "{:?}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take_string(json)).unwrap();
    assert!(report["termination"].is_string());
    assert_eq!(report["seed"], 3);
    assert!(dir.path().join("elsewhere/report.json").exists());

    let mut e = ptr::null_mut();
    assert_eq!(unsafe { dpf_engine_from_config(cfg.as_ptr(), &mut e) }, DpfStatus::Ok);
    unsafe { dpf_engine_free(e) };

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "nonsense = 1\n").unwrap();
    let bad = CString::new(bad.to_str().unwrap()).unwrap();
    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dpf_run_search(bad.as_ptr(), ptr::null(), &mut json) }, DpfStatus::Config);
    assert!(json.is_null());
}

#[test]
fn header_declares_every_exported_function() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/dpforge.h")).unwrap();
    for name in [
        "dpf_version",
        "dpf_last_error",
        "dpf_string_free",
        "dpf_strategy_count",
        "dpf_strategy_at",
        "dpf_strategy_parse",
        "dpf_strategy_to_string",
        "dpf_strategy_len",
        "dpf_strategy_free",
        "dpf_dataset_load",
        "dpf_dataset_save",
        "dpf_dataset_len",
        "dpf_dataset_fingerprint",
        "dpf_dataset_free",
        "dpf_engine_new",
        "dpf_engine_from_config",
        "dpf_engine_apply",
        "dpf_engine_free",
        "dpf_run_search",
        "dpf_compute_feedback",
    ] {
        assert!(header.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(header.contains("typedef struct DpfEngine DpfEngine;"));
    assert!(header.contains("DPF_STATUS_PANIC = 7"));
}
