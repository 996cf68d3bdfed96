use std::ffi::{CStr, CString};
use std::ptr;
use std::thread;

use gcas_core::history::{write_history, Event, EventBody};
use gcas_core::{OperationDescriptor, Pid, Value};
use gcas_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(gcas_last_error_message()) }.to_string_lossy().into_owned()
}

fn object(ty: &str, max: u32) -> *mut GcasObject {
    let mut obj = ptr::null_mut();
    assert_eq!(unsafe { gcas_object_new(c(ty).as_ptr(), max, &mut obj) }, GcasStatus::Ok);
    obj
}

fn process(obj: *mut GcasObject) -> *mut GcasProcess {
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { gcas_process_new(obj, &mut p) }, GcasStatus::Ok);
    p
}

fn state(obj: *mut GcasObject) -> String {
    let mut needed = 0usize;
    let status = unsafe { gcas_object_state(obj, ptr::null_mut(), 0, &mut needed) };
    assert_eq!(status, GcasStatus::BufferTooSmall);
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { gcas_object_state(obj, buf.as_mut_ptr(), buf.len(), ptr::null_mut()) }, GcasStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn counter_round_trip() {
    let obj = object("counter", 2);
    let p = process(obj);
    assert_eq!(unsafe { gcas_process_pid(p) }, 1);
    let mut out = GcasValue { kind: GcasValueKind::Ack, int_value: -1 };
    for expected in 0..3 {
        assert_eq!(unsafe { gcas_do_op(p, c("inc").as_ptr(), ptr::null(), 0, &mut out) }, GcasStatus::Ok);
        assert_eq!(out, GcasValue { kind: GcasValueKind::Int, int_value: expected });
    }
    assert_eq!(state(obj), "3");
    unsafe {
        gcas_process_free(p);
        gcas_object_free(obj);
    }
}

#[test]
fn stack_values_and_arguments() {
    let obj = object("stack", 1);
    let p = process(obj);
    let mut out = GcasValue { kind: GcasValueKind::Int, int_value: 0 };
    let args = [7i64];
    unsafe {
        assert_eq!(gcas_do_op(p, c("push").as_ptr(), args.as_ptr(), 1, &mut out), GcasStatus::Ok);
        assert_eq!(out.kind, GcasValueKind::Ack);
        assert_eq!(state(obj), "[7]");
        assert_eq!(gcas_do_op(p, c("pop").as_ptr(), ptr::null(), 0, &mut out), GcasStatus::Ok);
        assert_eq!(out, GcasValue { kind: GcasValueKind::Int, int_value: 7 });
        assert_eq!(gcas_do_op(p, c("pop").as_ptr(), ptr::null(), 0, &mut out), GcasStatus::Ok);
        assert_eq!(out.kind, GcasValueKind::Empty);
        gcas_process_free(p);
        gcas_object_free(obj);
    }
}

#[test]
fn errors_set_status_and_message() {
    unsafe {
        let mut obj = ptr::null_mut();
        assert_eq!(gcas_object_new(c("queue").as_ptr(), 1, &mut obj), GcasStatus::UnknownType);
        assert!(last_error().contains("queue"));
        assert_eq!(gcas_object_new(ptr::null(), 1, &mut obj), GcasStatus::NullPointer);

        let obj = object("register", 1);
        let p = process(obj);
        let mut extra = ptr::null_mut();
        assert_eq!(gcas_process_new(obj, &mut extra), GcasStatus::CapacityExhausted);

        let mut out = GcasValue { kind: GcasValueKind::Int, int_value: 0 };
        assert_eq!(gcas_do_op(p, c("pop").as_ptr(), ptr::null(), 0, &mut out), GcasStatus::UnknownOperation);
        assert_eq!(gcas_do_op(p, c("write").as_ptr(), ptr::null(), 0, &mut out), GcasStatus::InvalidArgument);
        assert_eq!(gcas_do_op(p, c("read").as_ptr(), ptr::null(), 0, ptr::null_mut()), GcasStatus::NullPointer);
        gcas_process_free(p);
        gcas_object_free(obj);
        gcas_object_free(ptr::null_mut());
        gcas_process_free(ptr::null_mut());
    }
}

#[test]
fn threads_share_one_object() {
    struct Send<T>(T);
    unsafe impl<T> std::marker::Send for Send<T> {}
    let obj = object("counter", 4);
    let handles: Vec<_> = (0..4)
        .map(|_| {
            let p = Send(process(obj));
            thread::spawn(move || {
                let p = p;
                let mut out = GcasValue { kind: GcasValueKind::Int, int_value: 0 };
                for _ in 0..500 {
                    assert_eq!(unsafe { gcas_do_op(p.0, c("inc").as_ptr(), ptr::null(), 0, &mut out) }, GcasStatus::Ok);
                }
                unsafe { gcas_process_free(p.0) };
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(state(obj), "2000");
    unsafe { gcas_object_free(obj) };
}

#[test]
fn check_history_file_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.jsonl");
    let inc = OperationDescriptor::nullary("inc");
    let ev = |seq, pid, body| Event { seq, pid: Pid(pid), body };
    let mut events = vec![
        ev(1, 1, EventBody::Invoke { op: inc.clone() }),
        ev(2, 1, EventBody::Response { op: inc.clone(), resp: Value::Int(0) }),
        ev(3, 2, EventBody::Invoke { op: inc.clone() }),
        ev(4, 2, EventBody::Response { op: inc.clone(), resp: Value::Int(1) }),
    ];
    write_history(&path, &events).unwrap();
    let p = c(path.to_str().unwrap());
    assert_eq!(unsafe { gcas_check_history_file(p.as_ptr(), c("counter").as_ptr()) }, GcasStatus::Ok);
    events[3] = ev(4, 2, EventBody::Response { op: inc, resp: Value::Int(0) });
    write_history(&path, &events).unwrap();
    assert_eq!(unsafe { gcas_check_history_file(p.as_ptr(), c("counter").as_ptr()) }, GcasStatus::Violation);
    let missing = c(dir.path().join("none.jsonl").to_str().unwrap());
    assert_eq!(unsafe { gcas_check_history_file(missing.as_ptr(), c("counter").as_ptr()) }, GcasStatus::Io);
}

fn explore_cfg(ty: &CString) -> GcasExploreConfig {
    GcasExploreConfig {
        type_name: ty.as_ptr(),
        procs: 2,
        ops_per_proc: 1,
        random_samples: 0,
        seed: 0,
        max_steps: 0,
        budget: 0,
        crash_mask: 0,
        mutation: GcasMutation::None,
    }
}

#[test]
fn explore_reports_summary() {
    let ty = c("counter");
    let mut out = GcasExploreSummary::default();
    assert_eq!(unsafe { gcas_explore(&explore_cfg(&ty), &mut out) }, GcasStatus::Ok);
    assert_eq!(out.violations, 0);
    assert!(out.schedules_completed > 1);

    let mut cfg = explore_cfg(&ty);
    cfg.crash_mask = 0b10;
    assert_eq!(unsafe { gcas_explore(&cfg, &mut out) }, GcasStatus::Ok);

    let mut cfg = explore_cfg(&ty);
    cfg.mutation = GcasMutation::SkipHelpCopy;
    cfg.max_steps = 80;
    assert_eq!(unsafe { gcas_explore(&cfg, &mut out) }, GcasStatus::Violation);
    assert!(out.violations > 0);

    let mut cfg = explore_cfg(&ty);
    cfg.crash_mask = 0b100;
    assert_eq!(unsafe { gcas_explore(&cfg, &mut out) }, GcasStatus::InvalidArgument);
}

#[test]
fn version_is_package_version() {
    let v = unsafe { CStr::from_ptr(gcas_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
