use std::ffi::{CStr, CString};
use std::ptr;

use aggrevated_ffi::*;

const TREE: &str = "env.kind = tree\nenv.depth = 2\nenv.means = 0.2, 0.8\nlearner.rule = eg\nlearner.episodes = 20\n";

fn last_error() -> String {
    let p = agv_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn parse(text: &str) -> (AgvStatus, *mut AgvConfig) {
    let text = CString::new(text).unwrap();
    let mut cfg = ptr::null_mut();
    let status = unsafe { agv_config_parse(text.as_ptr(), &mut cfg) };
    (status, cfg)
}

#[test]
fn run_through_handles_matches_library() {
    let (status, cfg) = parse(TREE);
    assert_eq!(status, AgvStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { agv_run(cfg, &mut run) }, AgvStatus::Ok);

    let mut len = 0usize;
    assert_eq!(unsafe { agv_run_len(run, &mut len) }, AgvStatus::Ok);
    assert_eq!(len, 20);
    let mut rec = AgvRecord::default();
    assert_eq!(unsafe { agv_run_record(run, len - 1, &mut rec) }, AgvStatus::Ok);
    assert!((rec.mu_pi - 0.2).abs() < 1e-3);
    let mut regret = 0.0;
    assert_eq!(unsafe { agv_run_final_regret(run, &mut regret) }, AgvStatus::Ok);
    assert_eq!(regret, rec.cum_regret);

    let native = aggrevated::cli::execute(&aggrevated::config::parse(TREE).unwrap()).unwrap();
    assert_eq!(native.curve.records.last().unwrap().cum_regret, regret);

    assert_eq!(unsafe { agv_run_record(run, len, &mut rec) }, AgvStatus::OutOfRange);
    assert!(last_error().contains("out of range"));
    unsafe {
        agv_run_free(run);
        agv_config_free(cfg);
    }
}

#[test]
fn parse_errors_map_to_status_and_message() {
    let (status, cfg) = parse("env.kind = tree\nlearner.rule = eg\nlearner.velocity = 2\n");
    assert_eq!(status, AgvStatus::Parse);
    assert!(cfg.is_null());
    let msg = last_error();
    assert!(msg.contains("learner.velocity") && msg.contains("line 3"), "{msg}");

    let (status, _) = parse("env.depth = 3\n");
    assert_eq!(status, AgvStatus::Config);
}

#[test]
fn null_and_bad_utf8_are_rejected() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { agv_config_parse(ptr::null(), &mut cfg) }, AgvStatus::NullPointer);
    let bad = [0xffu8, 0xfe, 0];
    assert_eq!(unsafe { agv_config_parse(bad.as_ptr().cast(), &mut cfg) }, AgvStatus::InvalidUtf8);
    let mut len = 0usize;
    assert_eq!(unsafe { agv_run_len(ptr::null(), &mut len) }, AgvStatus::NullPointer);
    unsafe {
        agv_config_free(ptr::null_mut());
        agv_run_free(ptr::null_mut());
        agv_string_free(ptr::null_mut());
    }
}

#[test]
fn numeric_failure_reports_numeric() {
    let (status, cfg) = parse(
        "env.kind = point_mass\nlearner.rule = ogd\nlearner.rollouts = 4\nlearner.schedule = constant\nlearner.rate = 1e300\nlearner.episodes = 10\n",
    );
    assert_eq!(status, AgvStatus::Ok);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { agv_run(cfg, &mut run) }, AgvStatus::Numeric);
    assert!(run.is_null());
    assert!(last_error().contains("episode"));
    unsafe { agv_config_free(cfg) };
}

#[test]
fn render_round_trips_and_run_to_dir_writes_files() {
    let (_, cfg) = parse(TREE);
    let mut text = ptr::null_mut();
    assert_eq!(unsafe { agv_config_render(cfg, &mut text) }, AgvStatus::Ok);
    let rendered = unsafe { CStr::from_ptr(text) }.to_str().unwrap().to_owned();
    unsafe { agv_string_free(text) };
    let (status, again) = parse(&rendered);
    assert_eq!(status, AgvStatus::Ok);

    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(tmp.path().join("out").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { agv_run_to_dir(again, dir.as_ptr(), ptr::null_mut()) }, AgvStatus::Ok);
    assert!(tmp.path().join("out/curve.csv").exists());
    assert!(tmp.path().join("out/summary.txt").exists());
    unsafe {
        agv_config_free(cfg);
        agv_config_free(again);
    }
}

#[test]
fn verify_and_version() {
    let mut passed = -1;
    assert_eq!(unsafe { agv_verify_criterion(4, &mut passed) }, AgvStatus::Ok);
    assert_eq!(passed, 1);
    assert!(last_error().contains("[PASS]"));
    assert_eq!(unsafe { agv_verify_criterion(99, &mut passed) }, AgvStatus::OutOfRange);
    let v = unsafe { CStr::from_ptr(agv_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn generated_header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/aggrevated.h")).unwrap();
    for name in [
        "agv_config_parse",
        "agv_config_free",
        "agv_config_render",
        "agv_string_free",
        "agv_run(",
        "agv_run_to_dir",
        "agv_run_free",
        "agv_run_len",
        "agv_run_record",
        "agv_run_final_regret",
        "agv_verify_criterion",
        "agv_last_error_message",
        "agv_version",
        "typedef struct AgvConfig AgvConfig",
        "AGV_STATUS_NUMERIC = 5",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}
