use std::path::Path;
use std::process::{Command, Output};

use gcas_core::history::{read_history, write_history, Event, EventBody};
use gcas_core::{OperationDescriptor, Pid, Value};
use serde_json::Value as Json;

fn gcas(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcas")).args(args).output().unwrap()
}

fn summary(out: &Output) -> Json {
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1, "stdout: {text}");
    serde_json::from_str(text.trim()).unwrap()
}

fn register_history(path: &Path, stale: bool) {
    let ev = |seq, pid, body| Event { seq, pid: Pid(pid), body };
    let w5 = OperationDescriptor::unary("write", 5);
    let read = OperationDescriptor::nullary("read");
    let last = if stale { 0 } else { 5 };
    let events = vec![
        ev(1, 1, EventBody::Invoke { op: w5.clone() }),
        ev(2, 2, EventBody::Invoke { op: read.clone() }),
        ev(3, 2, EventBody::Response { op: read.clone(), resp: Value::Int(5) }),
        ev(4, 1, EventBody::Response { op: w5, resp: Value::Ack }),
        ev(5, 2, EventBody::Invoke { op: read.clone() }),
        ev(6, 2, EventBody::Response { op: read, resp: Value::Int(last) }),
    ];
    write_history(path, &events).unwrap();
}

#[test]
fn explore_two_increments_succeeds() {
    let out = gcas(&["explore", "--type", "counter", "--procs", "2", "--ops-per-proc", "1", "--backend", "sim"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["ok"], Json::Bool(true));
    assert_eq!(s["progress_cycles"], 0);
}

#[test]
fn usage_errors_exit_two() {
    for args in [
        &["explore", "--backend", "native"][..],
        &["stress", "--backend", "sim"],
        &["explore", "--type", "queue"],
        &["explore", "--mutation", "bogus"],
        &["explore", "--crash", "5"],
        &["explore", "--frobnicate"],
        &[],
    ] {
        assert_eq!(gcas(args).status.code(), Some(2), "{args:?}");
    }
}

#[test]
fn check_rejects_stale_read() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("bad_history.jsonl");
    let out_path = dir.path().join("prefix.jsonl");
    register_history(&input, true);
    let out = gcas(&[
        "check", "--in", input.to_str().unwrap(), "--type", "register", "--out", out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(summary(&out)["linearizable"], Json::Bool(false));
    assert_eq!(read_history(&out_path).unwrap().len(), 6);
}

#[test]
fn check_accepts_fresh_read() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("good.jsonl");
    register_history(&input, false);
    let out = gcas(&["check", "--in", input.to_str().unwrap(), "--type", "register"]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(summary(&out)["witness"].as_array().unwrap().len(), 3);
}

#[test]
fn check_reports_parse_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("broken.jsonl");
    std::fs::write(&input, "{\"seq\":1}\n").unwrap();
    let out = gcas(&["check", "--in", input.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn stress_counter_reaches_eighty_thousand() {
    let out = gcas(&["stress", "--type", "counter", "--procs", "8", "--ops-per-proc", "10000", "--backend", "native"]);
    assert_eq!(out.status.code(), Some(0));
    let s = summary(&out);
    assert_eq!(s["final_state"], 80000);
    assert_eq!(s["responses_permutation"], Json::Bool(true));
}

#[test]
fn explore_budget_exhaustion_exits_three() {
    let out = gcas(&["explore", "--procs", "2", "--ops-per-proc", "2", "--budget", "100"]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(summary(&out)["budget_exceeded"], Json::Bool(true));
}

#[test]
fn mutation_writes_replayable_artifact_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let path = dir.path().join(name);
        let out = gcas(&[
            "explore", "--type", "register", "--mode", "random", "--samples", "200", "--seed", "3",
            "--mutation", "skip-help-copy", "--max-steps", "200", "--out", path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(1));
        (out.stdout, std::fs::read(&path).unwrap())
    };
    let (out_a, file_a) = run("a.jsonl");
    let (out_b, file_b) = run("b.jsonl");
    assert_eq!(file_a, file_b);
    let strip = |v: Vec<u8>| {
        let mut j: Json = serde_json::from_slice(&v).unwrap();
        j.as_object_mut().unwrap().remove("artifact");
        j
    };
    assert_eq!(strip(out_a), strip(out_b));
    assert!(!read_history(&dir.path().join("a.jsonl")).unwrap().is_empty());
}

#[test]
fn demo_annotates_steps() {
    let sim = gcas(&["demo", "--type", "counter"]);
    assert_eq!(sim.status.code(), Some(0));
    let text = String::from_utf8(sim.stdout.clone()).unwrap();
    assert!(text.contains("// try to linearize o'"));
    assert!(text.lines().last().unwrap().ends_with("inc -> 0"));
    let native = gcas(&["demo", "--type", "counter", "--backend", "native"]);
    assert_eq!(native.stdout, sim.stdout);
}

#[test]
fn demo_runs_named_operations() {
    let out = gcas(&["demo", "--type", "register", "--op", "write(7)", "--op", "read"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("read -> 7"));
    assert_eq!(gcas(&["demo", "--type", "register", "--op", "pop"]).status.code(), Some(2));
}
