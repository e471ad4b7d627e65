use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use tamsim_ffi::*;

fn last_error() -> String {
    let p = tamsim_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn take_string(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    tamsim_string_free(s);
    out
}

#[test]
fn run_from_json_and_read_report() {
    let json = CString::new(
        r#"{"workload": {"kind": "contiguous1d", "block_bytes": 512},
            "procs": 8, "nodes": 2, "local_aggs_per_node": 2,
            "global_aggs": 2, "stripe_size": 128, "method": "both"}"#,
    )
    .unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(tamsim_config_from_json(json.as_ptr(), &mut cfg), TamsimStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(tamsim_run(cfg, &mut res), TamsimStatus::Ok);
        assert!(tamsim_last_error().is_null());
        assert_eq!(tamsim_result_num_runs(res), 2);
        let mut ok = false;
        assert_eq!(tamsim_result_verified(res, &mut ok), TamsimStatus::Ok);
        assert!(ok);

        let mut s = ptr::null_mut();
        assert_eq!(tamsim_result_report_json(res, &mut s), TamsimStatus::Ok);
        let doc: serde_json::Value = serde_json::from_str(&take_string(s)).unwrap();
        let runs = doc["runs"].as_array().unwrap();
        assert_eq!(runs[0]["report"]["method"], "tam");
        assert_eq!(runs[1]["report"]["method"], "two_phase");
        assert_eq!(runs[0]["report"]["verified"], true);
        assert_eq!(runs[0]["report"]["inter"]["senders_max"], 4);
        assert_eq!(runs[1]["report"]["inter"]["senders_max"], 8);

        assert_eq!(tamsim_result_trace_jsonl(res, 1, &mut s), TamsimStatus::Ok);
        let trace = take_string(s);
        assert!(trace.lines().count() > 0);
        for line in trace.lines() {
            let m: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(m["src"].is_u64() && m["dst"].is_u64());
        }
        assert_eq!(tamsim_result_trace_jsonl(res, 2, &mut s), TamsimStatus::Config);
        assert!(s.is_null());

        tamsim_result_free(res);
        tamsim_config_free(cfg);
    }
}

#[test]
fn config_errors_name_the_field() {
    let json = CString::new(r#"{"procs": 6, "nodes": 4}"#).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(tamsim_config_from_json(json.as_ptr(), &mut cfg), TamsimStatus::Config);
        assert!(cfg.is_null());
        assert!(last_error().contains("`nodes`"), "{}", last_error());

        let bad = CString::new("{not json").unwrap();
        assert_eq!(tamsim_config_from_json(bad.as_ptr(), &mut cfg), TamsimStatus::Config);
        assert_eq!(tamsim_config_from_json(ptr::null(), &mut cfg), TamsimStatus::NullArgument);
        let invalid = [0xffu8 as std::ffi::c_char, 0];
        assert_eq!(tamsim_config_from_json(invalid.as_ptr(), &mut cfg), TamsimStatus::InvalidUtf8);
    }
}

#[test]
fn default_config_round_trips() {
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(tamsim_config_default(&mut cfg), TamsimStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(tamsim_config_to_json(cfg, &mut s), TamsimStatus::Ok);
        let text = CString::new(take_string(s)).unwrap();
        let mut again = ptr::null_mut();
        assert_eq!(tamsim_config_from_json(text.as_ptr(), &mut again), TamsimStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(tamsim_run(again, &mut res), TamsimStatus::Ok);
        tamsim_result_free(res);
        tamsim_config_free(again);
        tamsim_config_free(cfg);
        tamsim_config_free(ptr::null_mut());
        tamsim_result_free(ptr::null_mut());
        tamsim_string_free(ptr::null_mut());
        assert_eq!(tamsim_run(ptr::null(), &mut res), TamsimStatus::NullArgument);
    }
}

#[test]
fn strict_overlap_is_a_config_status() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("overlap.json");
    std::fs::write(
        &path,
        r#"{"header":{"element_size":1,"total_elements":64},
            "processes":[{"rank":0,"offsets":[0],"lengths":[8]},{"rank":1,"offsets":[4],"lengths":[8]}]}"#,
    )
    .unwrap();
    let json = format!(
        r#"{{"workload": {{"kind": "decomp_file", "decomp": {}}}, "procs": 2, "nodes": 1, "global_aggs": 1, "stripe_size": 16}}"#,
        serde_json::to_string(&path).unwrap()
    );
    let json = CString::new(json).unwrap();
    unsafe {
        let mut cfg = ptr::null_mut();
        assert_eq!(tamsim_config_from_json(json.as_ptr(), &mut cfg), TamsimStatus::Ok);
        let mut res = ptr::null_mut();
        assert_eq!(tamsim_run(cfg, &mut res), TamsimStatus::Config);
        assert!(res.is_null());
        assert!(last_error().contains("both write"), "{}", last_error());
        tamsim_config_free(cfg);
    }
}

#[test]
fn select_into_caller_buffer() {
    let mut buf = [0usize; 4];
    let mut n = 0;
    unsafe {
        assert_eq!(tamsim_select_local_aggregators(5, 2, buf.as_mut_ptr(), 4, &mut n), TamsimStatus::Ok);
        assert_eq!(&buf[..n], &[0, 3]);
        assert_eq!(tamsim_select_local_aggregators(8, 4, buf.as_mut_ptr(), 2, &mut n), TamsimStatus::BufferTooSmall);
        assert_eq!(n, 4);
        assert_eq!(tamsim_select_local_aggregators(8, 4, buf.as_mut_ptr(), 4, &mut n), TamsimStatus::Ok);
        assert_eq!(buf, [0, 2, 4, 6]);
        assert_eq!(tamsim_select_local_aggregators(2, 3, buf.as_mut_ptr(), 4, &mut n), TamsimStatus::Config);
        assert_eq!(tamsim_select_local_aggregators(2, 1, ptr::null_mut(), 0, &mut n), TamsimStatus::BufferTooSmall);
    }
}

#[test]
fn header_declares_every_export_and_compiles_as_c() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(dir.join("tamsim.h")).unwrap();
    for name in [
        "tamsim_last_error",
        "tamsim_config_default",
        "tamsim_config_from_json",
        "tamsim_config_to_json",
        "tamsim_config_free",
        "tamsim_run",
        "tamsim_result_verified",
        "tamsim_result_num_runs",
        "tamsim_result_report_json",
        "tamsim_result_trace_jsonl",
        "tamsim_result_free",
        "tamsim_string_free",
        "tamsim_select_local_aggregators",
        "typedef struct TamsimConfig TamsimConfig",
        "TAMSIM_STATUS_MISMATCH = 1",
        "TAMSIM_STATUS_CONFIG = 2",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }

    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use_header.c");
    std::fs::write(
        &src,
        "#include \"tamsim.h\"\n\
         int main(void) {\n\
           TamsimConfig *cfg = NULL;\n\
           TamsimStatus s = tamsim_config_default(&cfg);\n\
           tamsim_config_free(cfg);\n\
           return s == TAMSIM_STATUS_OK ? 0 : 1;\n\
         }\n",
    )
    .unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("-fsyntax-only").arg("-Wall").arg("-Werror").arg("-I").arg(&dir).arg(&src).output() {
        Ok(out) => assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr)),
        Err(e) => eprintln!("skipping C compile check, {cc} unavailable: {e}"),
    }
}
