//! C ABI over `gcas-core`.
//!
//! Objects and processes are opaque heap handles. Every fallible call
//! returns a [`GcasStatus`]; on failure, [`gcas_last_error_message`] gives a
//! description valid until the next failing call on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use gcas_core::checker::{check_linearizable, project_history, Verdict};
use gcas_core::construction::UcError;
use gcas_core::explore::{ExplorationConfig, Explorer, Mode};
use gcas_core::history::{read_history, value_to_json};
use gcas_core::memory::MemoryError;
use gcas_core::types::TypeError;
use gcas_core::{builtin, Mutation, OperationDescriptor, Pid, ProcessContext, UniversalObject, Value};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcasStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    UnknownType = 3,
    UnknownOperation = 4,
    ProcessBusy = 5,
    /// A history was not linearizable or an exploration found a violation.
    Violation = 6,
    BudgetExceeded = 7,
    Io = 8,
    BufferTooSmall = 9,
    Internal = 10,
    /// The object already has `max_processes` processes.
    CapacityExhausted = 11,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcasValueKind {
    Int = 0,
    Bool = 1,
    Ack = 2,
    Empty = 3,
    List = 4,
}

/// A response. `int_value` holds the integer for `Int`, 0/1 for `Bool`, the
/// length for `List`, and 0 otherwise.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GcasValue {
    pub kind: GcasValueKind,
    pub int_value: i64,
}

impl From<&Value> for GcasValue {
    fn from(v: &Value) -> Self {
        let (kind, int_value) = match v {
            Value::Int(i) => (GcasValueKind::Int, *i),
            Value::Bool(b) => (GcasValueKind::Bool, i64::from(*b)),
            Value::Ack => (GcasValueKind::Ack, 0),
            Value::Empty => (GcasValueKind::Empty, 0),
            Value::List(items) => (GcasValueKind::List, items.len() as i64),
        };
        GcasValue { kind, int_value }
    }
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GcasMutation {
    None = 0,
    SkipHelpCopy = 1,
    AnnounceWithEq = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct GcasExploreConfig {
    pub type_name: *const c_char,
    pub procs: u32,
    pub ops_per_proc: u32,
    /// 0 for exhaustive, otherwise the number of random schedules.
    pub random_samples: u64,
    pub seed: u64,
    pub max_steps: u64,
    pub budget: u64,
    /// Bit `i` set lets pid `i + 1` crash.
    pub crash_mask: u64,
    pub mutation: GcasMutation,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GcasExploreSummary {
    pub states_visited: u64,
    pub schedules_completed: u64,
    pub truncated: u64,
    pub violations: u64,
    pub progress_cycles: u64,
    pub budget_exceeded: bool,
}

/// A universal object of some built-in sequential type.
pub struct GcasObject {
    inner: Arc<UniversalObject>,
}

/// One process of a [`GcasObject`]. Must be used by one thread at a time.
pub struct GcasProcess {
    object: Arc<UniversalObject>,
    ctx: ProcessContext,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: GcasStatus, message: impl Into<String>) -> GcasStatus {
    let text = CString::new(message.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

fn guard(f: impl FnOnce() -> GcasStatus) -> GcasStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(GcasStatus::Internal, "panic inside gcas"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, GcasStatus> {
    if p.is_null() {
        return Err(fail(GcasStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(GcasStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

fn uc_status(e: UcError) -> GcasStatus {
    let status = match &e {
        UcError::Busy(_) => GcasStatus::ProcessBusy,
        UcError::ReservedName => GcasStatus::InvalidArgument,
        UcError::Type(TypeError::UnknownOperation { .. }) => GcasStatus::UnknownOperation,
        UcError::Type(_) => GcasStatus::InvalidArgument,
        UcError::Memory(MemoryError::Exhausted { .. }) => GcasStatus::CapacityExhausted,
        _ => GcasStatus::Internal,
    };
    fail(status, e.to_string())
}

/// Message for the last failing call on this thread; empty if none.
#[no_mangle]
pub extern "C" fn gcas_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn gcas_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an object of built-in type `type_name` ("counter", "register" or
/// "stack") that at most `max_processes` processes may join.
///
/// # Safety
/// `type_name` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcas_object_new(
    type_name: *const c_char,
    max_processes: u32,
    out: *mut *mut GcasObject,
) -> GcasStatus {
    guard(|| {
        if out.is_null() {
            return fail(GcasStatus::NullPointer, "out is null");
        }
        let name = match str_arg(type_name, "type_name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        if max_processes == 0 {
            return fail(GcasStatus::InvalidArgument, "max_processes must be positive");
        }
        let spec = match builtin(name) {
            Ok(s) => s,
            Err(e) => return fail(GcasStatus::UnknownType, e.to_string()),
        };
        match UniversalObject::with_capacity(spec, max_processes as usize) {
            Ok(obj) => {
                *out = Box::into_raw(Box::new(GcasObject { inner: Arc::new(obj) }));
                GcasStatus::Ok
            }
            Err(e) => uc_status(e),
        }
    })
}

/// Releases an object. Processes created from it stay valid.
///
/// # Safety
/// `obj` must come from [`gcas_object_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gcas_object_free(obj: *mut GcasObject) {
    if !obj.is_null() {
        drop(Box::from_raw(obj));
    }
}

/// Registers a new process with `obj`.
///
/// # Safety
/// `obj` must be a live object; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcas_process_new(obj: *const GcasObject, out: *mut *mut GcasProcess) -> GcasStatus {
    guard(|| {
        if obj.is_null() || out.is_null() {
            return fail(GcasStatus::NullPointer, "object or out is null");
        }
        let object = Arc::clone(&(*obj).inner);
        match object.new_process() {
            Ok(ctx) => {
                *out = Box::into_raw(Box::new(GcasProcess { object, ctx }));
                GcasStatus::Ok
            }
            Err(e) => uc_status(e),
        }
    })
}

/// # Safety
/// `proc_` must come from [`gcas_process_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn gcas_process_free(proc_: *mut GcasProcess) {
    if !proc_.is_null() {
        drop(Box::from_raw(proc_));
    }
}

/// The pid of a process, or 0 for a null handle.
///
/// # Safety
/// `proc_` must be null or a live process.
#[no_mangle]
pub unsafe extern "C" fn gcas_process_pid(proc_: *const GcasProcess) -> u32 {
    if proc_.is_null() {
        0
    } else {
        (*proc_).ctx.pid().0
    }
}

/// Runs operation `op_name(args[0..nargs])` to completion.
///
/// # Safety
/// `proc_` must be a live process used by no other thread; `args` must point
/// to `nargs` integers (or be null when `nargs` is 0); `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcas_do_op(
    proc_: *mut GcasProcess,
    op_name: *const c_char,
    args: *const i64,
    nargs: usize,
    out: *mut GcasValue,
) -> GcasStatus {
    guard(|| {
        if proc_.is_null() || out.is_null() || (args.is_null() && nargs > 0) {
            return fail(GcasStatus::NullPointer, "process, args or out is null");
        }
        let name = match str_arg(op_name, "op_name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let p = &mut *proc_;
        if !p.object.spec().operations().contains(&name) {
            return fail(
                GcasStatus::UnknownOperation,
                format!("{} has no operation {name}", p.object.spec().name()),
            );
        }
        let args: Vec<Value> = if nargs == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(args, nargs).iter().map(|&a| Value::Int(a)).collect()
        };
        match p.object.do_op(&mut p.ctx, OperationDescriptor::new(name, args)) {
            Ok(v) => {
                *out = GcasValue::from(&v);
                GcasStatus::Ok
            }
            Err(e) => uc_status(e),
        }
    })
}

/// Writes the object's current state as NUL-terminated JSON into `buf`.
/// `needed` (if not null) receives the size required including the NUL.
///
/// # Safety
/// `obj` must be live; `buf` must have room for `cap` bytes.
#[no_mangle]
pub unsafe extern "C" fn gcas_object_state(
    obj: *const GcasObject,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> GcasStatus {
    guard(|| {
        if obj.is_null() {
            return fail(GcasStatus::NullPointer, "object is null");
        }
        let text = value_to_json(&(*obj).inner.current_state()).to_string();
        let bytes = text.as_bytes();
        if !needed.is_null() {
            *needed = bytes.len() + 1;
        }
        if buf.is_null() || cap < bytes.len() + 1 {
            return fail(GcasStatus::BufferTooSmall, format!("state needs {} bytes", bytes.len() + 1));
        }
        ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), bytes.len());
        *buf.add(bytes.len()) = 0;
        GcasStatus::Ok
    })
}

/// Checks a JSONL history file for linearizability against `type_name`.
/// Returns `Ok` if linearizable, `Violation` if not.
///
/// # Safety
/// `path` and `type_name` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn gcas_check_history_file(path: *const c_char, type_name: *const c_char) -> GcasStatus {
    guard(|| {
        let (path, name) = match (str_arg(path, "path"), str_arg(type_name, "type_name")) {
            (Ok(p), Ok(n)) => (p, n),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let spec = match builtin(name) {
            Ok(s) => s,
            Err(e) => return fail(GcasStatus::UnknownType, e.to_string()),
        };
        let events = match read_history(Path::new(path)) {
            Ok(e) => e,
            Err(e) => return fail(GcasStatus::Io, e.to_string()),
        };
        let history = match project_history(&events) {
            Ok(h) => h,
            Err(e) => return fail(GcasStatus::InvalidArgument, e.to_string()),
        };
        match check_linearizable(&history, &*spec) {
            Ok(Verdict::Linearizable(_)) => GcasStatus::Ok,
            Ok(Verdict::NotLinearizable { counterexample }) => fail(
                GcasStatus::Violation,
                format!("not linearizable; shortest bad prefix has {} events", counterexample.len()),
            ),
            Ok(Verdict::BudgetExceeded { explored }) => {
                fail(GcasStatus::BudgetExceeded, format!("gave up after {explored} search nodes"))
            }
            Err(e) => fail(GcasStatus::UnknownOperation, e.to_string()),
        }
    })
}

/// Runs the interleaving explorer. `out` is filled even when the result is
/// `Violation` or `BudgetExceeded`.
///
/// # Safety
/// `cfg` must point to a valid config whose `mutation` is a declared
/// `GcasMutation` value; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gcas_explore(cfg: *const GcasExploreConfig, out: *mut GcasExploreSummary) -> GcasStatus {
    guard(|| {
        if cfg.is_null() || out.is_null() {
            return fail(GcasStatus::NullPointer, "config or out is null");
        }
        let c = &*cfg;
        let name = match str_arg(c.type_name, "type_name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let mut config = match ExplorationConfig::for_type(name, c.procs as usize, c.ops_per_proc as usize) {
            Ok(cfg) => cfg,
            Err(e) => return fail(GcasStatus::UnknownType, e.to_string()),
        };
        if c.random_samples > 0 {
            config.mode = Mode::Random {
                samples: c.random_samples,
                seed: c.seed,
            };
        }
        if c.max_steps > 0 {
            config.max_steps = c.max_steps as usize;
        }
        if c.budget > 0 {
            config.budget = c.budget;
        }
        config.crash_set = (0..64).filter(|i| c.crash_mask & (1 << i) != 0).map(|i| Pid(i + 1)).collect();
        config.mutation = match c.mutation {
            GcasMutation::None => Mutation::None,
            GcasMutation::SkipHelpCopy => Mutation::SkipHelpCopy,
            GcasMutation::AnnounceWithEq => Mutation::AnnounceWithEq,
        };
        let explorer = match Explorer::new(config) {
            Ok(e) => e,
            Err(e) => return fail(GcasStatus::InvalidArgument, e.to_string()),
        };
        let r = explorer.run();
        *out = GcasExploreSummary {
            states_visited: r.states_visited,
            schedules_completed: r.schedules_completed,
            truncated: r.truncated,
            violations: r.violation_total(),
            progress_cycles: r.progress_cycle_count,
            budget_exceeded: r.budget_exceeded,
        };
        if !r.is_clean() {
            fail(GcasStatus::Violation, format!("{} violations, {} progress cycles", r.violation_total(), r.progress_cycle_count))
        } else if r.budget_exceeded || r.truncated > 0 || r.checks_inconclusive > 0 {
            fail(GcasStatus::BudgetExceeded, "exploration incomplete")
        } else {
            GcasStatus::Ok
        }
    })
}
