//! The wait-free universal construction from GCAS and fetch-and-increment.
//!
//! An operation runs as an explicit step machine ([`ProcessContext::step`])
//! that performs at most one shared-memory access per step. The simulated
//! backend lets the explorer pick which process steps next; on the native
//! backend [`do_op`] simply drives the machine to completion on the calling
//! thread.
//!
//! Shared objects:
//! - `C`, a fetch-and-increment clock handing out timestamps from 1;
//! - `A`, the announce object `(time, op, cell)` naming the operation to
//!   linearize next;
//! - `S`, the state object `(time, state, response, cell)` of the last
//!   linearized operation;
//! - one response cell `(time, response)` per process.

use std::fmt;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use thiserror::Error;

use crate::memory::{
    CellHandle, Comparator, CounterHandle, FieldValue, MemoryError, NativeMemory, ObjectHandle,
    Record, Substrate,
};
use crate::types::{OperationDescriptor, SequentialType, TypeError, TypeSpec, Value, NOOP_NAME};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pid(pub u32);

impl fmt::Display for Pid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "p{}", self.0)
    }
}

/// Program counter of the step machine. `Done` doubles as "idle".
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StepLabel {
    /// `t := F&I(C)`
    L2,
    /// own cell `:= (t, NULL)`
    L3,
    /// loop test: read own cell
    L4,
    /// read `S`
    L5,
    /// copy the last linearized response into its owner's cell
    L6,
    /// `GCAS(>, A, (t), (t, o, cell))`
    L7,
    /// read `A`
    L8,
    /// read the announced operation's cell
    L9,
    /// local branch: is the announced operation done?
    L10,
    /// local: apply the announced operation to the state read at L5
    L11,
    /// `GCAS(=, S, ...)`: try to linearize the announced operation
    L12,
    /// `GCAS(=, A, ...)`: replace a done announced operation with our own
    L13,
    /// read own response and return
    L14,
    Done,
}

impl StepLabel {
    pub const ALL: [StepLabel; 14] = [
        StepLabel::L2,
        StepLabel::L3,
        StepLabel::L4,
        StepLabel::L5,
        StepLabel::L6,
        StepLabel::L7,
        StepLabel::L8,
        StepLabel::L9,
        StepLabel::L10,
        StepLabel::L11,
        StepLabel::L12,
        StepLabel::L13,
        StepLabel::L14,
        StepLabel::Done,
    ];

    /// Whether executing this label touches shared memory (and is therefore a
    /// scheduling point).
    pub fn is_shared(self) -> bool {
        !matches!(self, StepLabel::L10 | StepLabel::L11 | StepLabel::Done)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            StepLabel::L2 => "L2",
            StepLabel::L3 => "L3",
            StepLabel::L4 => "L4",
            StepLabel::L5 => "L5",
            StepLabel::L6 => "L6",
            StepLabel::L7 => "L7",
            StepLabel::L8 => "L8",
            StepLabel::L9 => "L9",
            StepLabel::L10 => "L10",
            StepLabel::L11 => "L11",
            StepLabel::L12 => "L12",
            StepLabel::L13 => "L13",
            StepLabel::L14 => "L14",
            StepLabel::Done => "DONE",
        }
    }

    pub fn parse(s: &str) -> Option<StepLabel> {
        StepLabel::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// The source-line comment of the step.
    pub fn comment(self) -> &'static str {
        match self {
            StepLabel::L2 => "get a timestamp t for o",
            StepLabel::L3 => "initialize o's response to NULL",
            StepLabel::L4 => "while o is not done",
            StepLabel::L5 => "read implemented object state",
            StepLabel::L6 => "copy response into response object",
            StepLabel::L7 => "if o has higher priority announce it",
            StepLabel::L8 => "read operation o' to be helped",
            StepLabel::L9 => "read response of o'",
            StepLabel::L10 => "if o' is not done",
            StepLabel::L11 => "apply o' to object state",
            StepLabel::L12 => "try to linearize o'",
            StepLabel::L13 => "if o' is done and o' is still in A announce o",
            StepLabel::L14 => "return response",
            StepLabel::Done => "idle",
        }
    }
}

impl fmt::Display for StepLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Deliberate breakages of the algorithm, used to show that the monitors are
/// not vacuous.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Mutation {
    #[default]
    None,
    /// L5 jumps straight to L7.
    SkipHelpCopy,
    /// L7 uses the equality comparator instead of `>`.
    AnnounceWithEq,
}

impl Mutation {
    pub fn parse(s: &str) -> Option<Mutation> {
        match s {
            "none" => Some(Mutation::None),
            "skip-help-copy" => Some(Mutation::SkipHelpCopy),
            "announce-eq" => Some(Mutation::AnnounceWithEq),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mutation::None => "none",
            Mutation::SkipHelpCopy => "skip-help-copy",
            Mutation::AnnounceWithEq => "announce-eq",
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum UcError {
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Type(#[from] TypeError),
    #[error("process {0} already has a pending operation")]
    Busy(Pid),
    #[error("process {0} has no pending operation")]
    Idle(Pid),
    #[error("`{NOOP_NAME}` is reserved")]
    ReservedName,
    #[error("malformed shared record {record} at {label}")]
    Malformed { label: StepLabel, record: Record },
}

pub fn cell_record(t: u64, resp: FieldValue) -> Record {
    Record::new(vec![FieldValue::Time(t), resp]).expect("arity 2")
}

pub fn announce_record(t: u64, op: FieldValue, cell: CellHandle) -> Record {
    Record::new(vec![FieldValue::Time(t), op, FieldValue::Cell(cell)]).expect("arity 3")
}

pub fn state_record(t: u64, state: Value, resp: FieldValue, cell: CellHandle) -> Record {
    Record::new(vec![
        FieldValue::Time(t),
        FieldValue::State(state),
        resp,
        FieldValue::Cell(cell),
    ])
    .expect("arity 4")
}

/// Whether an operation with timestamp `t` whose owner's cell currently
/// holds `cell` is done.
pub fn is_done(cell: &Record, t: u64) -> bool {
    match (cell.time(), cell.field(1)) {
        (Some(ct), _) if ct > t => true,
        (Some(ct), Some(resp)) if ct == t => !resp.is_null(),
        _ => false,
    }
}

/// Handles of the shared objects `C`, `A`, `S` and the immutable `(0, ⊥)`
/// cell of NOOP.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SharedObjects {
    pub clock: CounterHandle,
    pub announce: ObjectHandle,
    pub state: ObjectHandle,
    pub noop_cell: CellHandle,
}

impl SharedObjects {
    pub fn init<M: Substrate + ?Sized>(mem: &M, initial_state: Value) -> Result<Self, MemoryError> {
        let noop_cell = mem
            .alloc_object(cell_record(0, FieldValue::BOTTOM))?
            .as_cell()
            .expect("two fields");
        let clock = mem.alloc_counter(1)?;
        let announce = mem.alloc_object(announce_record(0, FieldValue::NOOP, noop_cell))?;
        let state = mem.alloc_object(state_record(0, initial_state, FieldValue::BOTTOM, noop_cell))?;
        Ok(SharedObjects {
            clock,
            announce,
            state,
            noop_cell,
        })
    }
}

/// Allocates a fresh, never reused response cell.
pub fn new_process<M: Substrate + ?Sized>(mem: &M, pid: Pid) -> Result<ProcessContext, MemoryError> {
    let cell = mem
        .alloc_object(cell_record(0, FieldValue::NULL))?
        .as_cell()
        .expect("two fields");
    Ok(ProcessContext::new(pid, cell))
}

/// What a step did to shared memory.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Access {
    FetchAndIncrement {
        counter: CounterHandle,
        value: u64,
    },
    Read {
        obj: ObjectHandle,
        record: Record,
    },
    Write {
        obj: ObjectHandle,
        record: Record,
    },
    Gcas {
        cmp: Comparator,
        obj: ObjectHandle,
        probe: Record,
        replacement: Record,
        success: bool,
    },
    /// L10: the branch taken (`true` = announced op not done).
    Branch(bool),
    /// L11: the response computed for the announced op.
    Apply(Value),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StepReport {
    pub label: StepLabel,
    pub access: Access,
    /// Set by L14.
    pub completed: Option<Value>,
}

/// Per-process step-machine state: the program counter and the locals read
/// or computed so far in the current loop iteration.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProcessContext {
    pid: Pid,
    cell: CellHandle,
    pc: StepLabel,
    op: Option<Arc<OperationDescriptor>>,
    t: u64,
    state_read: Option<Record>,
    announce_read: Option<Record>,
    cell_read: Option<Record>,
    applied: Option<(Value, Value)>,
}

impl ProcessContext {
    pub fn new(pid: Pid, cell: CellHandle) -> Self {
        ProcessContext {
            pid,
            cell,
            pc: StepLabel::Done,
            op: None,
            t: 0,
            state_read: None,
            announce_read: None,
            cell_read: None,
            applied: None,
        }
    }

    pub fn pid(&self) -> Pid {
        self.pid
    }

    pub fn cell(&self) -> CellHandle {
        self.cell
    }

    pub fn pc(&self) -> StepLabel {
        self.pc
    }

    pub fn is_idle(&self) -> bool {
        self.pc == StepLabel::Done
    }

    /// Timestamp of the current (or last) operation; 0 before the first L2.
    pub fn timestamp(&self) -> u64 {
        self.t
    }

    pub fn operation(&self) -> Option<&Arc<OperationDescriptor>> {
        self.op.as_ref()
    }

    /// Invokes `op`: the next step is L2.
    pub fn begin(&mut self, op: OperationDescriptor) -> Result<(), UcError> {
        if op.name == NOOP_NAME {
            return Err(UcError::ReservedName);
        }
        if !self.is_idle() {
            return Err(UcError::Busy(self.pid));
        }
        self.op = Some(Arc::new(op));
        self.pc = StepLabel::L2;
        self.t = 0;
        self.clear_locals();
        Ok(())
    }

    /// Executes exactly one label and advances the program counter.
    pub fn step<M: Substrate + ?Sized>(
        &mut self,
        mem: &M,
        shared: &SharedObjects,
        spec: &dyn SequentialType,
        mutation: Mutation,
    ) -> Result<StepReport, UcError> {
        let label = self.pc;
        let own = self.cell.object();
        let mut completed = None;
        let access = match label {
            StepLabel::Done => return Err(UcError::Idle(self.pid)),
            StepLabel::L2 => {
                let value = mem.fetch_and_increment(shared.clock);
                self.t = value;
                self.pc = StepLabel::L3;
                Access::FetchAndIncrement {
                    counter: shared.clock,
                    value,
                }
            }
            StepLabel::L3 => {
                let record = cell_record(self.t, FieldValue::NULL);
                mem.write(own, record.clone())?;
                self.pc = StepLabel::L4;
                Access::Write { obj: own, record }
            }
            StepLabel::L4 => {
                let record = mem.read(own);
                // Every local is re-read before use in an iteration.
                self.clear_locals();
                if record == cell_record(self.t, FieldValue::NULL) {
                    self.pc = StepLabel::L5;
                } else {
                    self.pc = StepLabel::L14;
                }
                Access::Read { obj: own, record }
            }
            StepLabel::L5 => {
                let record = mem.read(shared.state);
                self.state_read = Some(record.clone());
                self.pc = match mutation {
                    Mutation::SkipHelpCopy => StepLabel::L7,
                    _ => StepLabel::L6,
                };
                Access::Read {
                    obj: shared.state,
                    record,
                }
            }
            StepLabel::L6 => {
                let s = self.state_read.as_ref().expect("read at L5");
                let (t_star, r_star, roptr) = match (s.time(), s.field(2), s.field(3).and_then(FieldValue::as_cell)) {
                    (Some(t), Some(r), Some(c)) => (t, r.clone(), c),
                    _ => return Err(malformed(label, s)),
                };
                let probe = cell_record(t_star, FieldValue::NULL);
                let replacement = cell_record(t_star, r_star);
                let obj = roptr.object();
                let success = mem.gcas(Comparator::Eq, obj, &probe, replacement.clone())?;
                self.pc = StepLabel::L7;
                Access::Gcas {
                    cmp: Comparator::Eq,
                    obj,
                    probe,
                    replacement,
                    success,
                }
            }
            StepLabel::L7 => {
                let replacement = self.own_announce();
                let (cmp, probe) = match mutation {
                    // The time-only probe never equals a three-field record, so the
                    // wildcards are filled with our own values.
                    Mutation::AnnounceWithEq => (Comparator::Eq, replacement.clone()),
                    _ => (Comparator::TimeGt, Record::time_probe(self.t)),
                };
                let success = mem.gcas(cmp, shared.announce, &probe, replacement.clone())?;
                self.pc = StepLabel::L8;
                Access::Gcas {
                    cmp,
                    obj: shared.announce,
                    probe,
                    replacement,
                    success,
                }
            }
            StepLabel::L8 => {
                let record = mem.read(shared.announce);
                self.announce_read = Some(record.clone());
                self.pc = StepLabel::L9;
                Access::Read {
                    obj: shared.announce,
                    record,
                }
            }
            StepLabel::L9 => {
                let a = self.announce_read.as_ref().expect("read at L8");
                let Some(roptr) = a.field(2).and_then(FieldValue::as_cell) else {
                    return Err(malformed(label, a));
                };
                let record = mem.read(roptr.object());
                self.cell_read = Some(record.clone());
                self.pc = StepLabel::L10;
                Access::Read {
                    obj: roptr.object(),
                    record,
                }
            }
            StepLabel::L10 => {
                let a = self.announce_read.as_ref().expect("read at L8");
                let Some(t_prime) = a.time() else {
                    return Err(malformed(label, a));
                };
                let not_done = *self.cell_read.as_ref().expect("read at L9")
                    == cell_record(t_prime, FieldValue::NULL);
                self.pc = if not_done { StepLabel::L11 } else { StepLabel::L13 };
                Access::Branch(not_done)
            }
            StepLabel::L11 => {
                let a = self.announce_read.as_ref().expect("read at L8");
                let s = self.state_read.as_ref().expect("read at L5");
                let (Some(FieldValue::Op(op)), Some(FieldValue::State(state))) = (a.field(1), s.field(1))
                else {
                    return Err(malformed(label, a));
                };
                let (next, resp) = spec.apply(op, state)?;
                self.applied = Some((next, resp.clone()));
                self.pc = StepLabel::L12;
                Access::Apply(resp)
            }
            StepLabel::L12 => {
                let a = self.announce_read.as_ref().expect("read at L8");
                let probe = self.state_read.clone().expect("read at L5");
                let (next, resp) = self.applied.clone().expect("computed at L11");
                let (Some(t_prime), Some(roptr)) = (a.time(), a.field(2).and_then(FieldValue::as_cell)) else {
                    return Err(malformed(label, a));
                };
                let replacement = state_record(t_prime, next, FieldValue::Resp(resp), roptr);
                let success = mem.gcas(Comparator::Eq, shared.state, &probe, replacement.clone())?;
                self.pc = StepLabel::L4;
                Access::Gcas {
                    cmp: Comparator::Eq,
                    obj: shared.state,
                    probe,
                    replacement,
                    success,
                }
            }
            StepLabel::L13 => {
                let probe = self.announce_read.clone().expect("read at L8");
                let replacement = self.own_announce();
                let success = mem.gcas(Comparator::Eq, shared.announce, &probe, replacement.clone())?;
                self.pc = StepLabel::L4;
                Access::Gcas {
                    cmp: Comparator::Eq,
                    obj: shared.announce,
                    probe,
                    replacement,
                    success,
                }
            }
            StepLabel::L14 => {
                let record = mem.read(own);
                match record.field(1) {
                    Some(FieldValue::Resp(v)) => completed = Some(v.clone()),
                    _ => return Err(malformed(label, &record)),
                }
                self.pc = StepLabel::Done;
                Access::Read { obj: own, record }
            }
        };
        Ok(StepReport {
            label,
            access,
            completed,
        })
    }

    fn clear_locals(&mut self) {
        self.state_read = None;
        self.announce_read = None;
        self.cell_read = None;
        self.applied = None;
    }

    fn own_announce(&self) -> Record {
        let op = FieldValue::Op(self.op.clone().expect("pending operation"));
        announce_record(self.t, op, self.cell)
    }
}

fn malformed(label: StepLabel, record: &Record) -> UcError {
    UcError::Malformed {
        label,
        record: record.clone(),
    }
}

/// Runs one whole operation on the calling thread.
pub fn do_op<M: Substrate + ?Sized>(
    ctx: &mut ProcessContext,
    mem: &M,
    shared: &SharedObjects,
    spec: &dyn SequentialType,
    op: OperationDescriptor,
) -> Result<Value, UcError> {
    ctx.begin(op)?;
    loop {
        if let Some(resp) = ctx.step(mem, shared, spec, Mutation::None)?.completed {
            return Ok(resp);
        }
    }
}

/// A linearizable, wait-free object of a given sequential type, shareable
/// across threads.
pub struct UniversalObject {
    mem: NativeMemory,
    shared: SharedObjects,
    spec: TypeSpec,
    next_pid: AtomicU32,
}

impl fmt::Debug for UniversalObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("UniversalObject")
            .field("type", &self.spec.name())
            .field("shared", &self.shared)
            .finish()
    }
}

impl UniversalObject {
    pub fn new(spec: TypeSpec) -> Result<Self, UcError> {
        Self::with_capacity(spec, 4096)
    }

    /// `max_processes` bounds how many processes may ever register.
    pub fn with_capacity(spec: TypeSpec, max_processes: usize) -> Result<Self, UcError> {
        let mem = NativeMemory::with_capacity(max_processes + 3);
        let shared = SharedObjects::init(&mem, spec.initial_state())?;
        Ok(UniversalObject {
            mem,
            shared,
            spec,
            next_pid: AtomicU32::new(1),
        })
    }

    pub fn spec(&self) -> &TypeSpec {
        &self.spec
    }

    pub fn new_process(&self) -> Result<ProcessContext, UcError> {
        let pid = Pid(self.next_pid.fetch_add(1, Ordering::Relaxed));
        Ok(new_process(&self.mem, pid)?)
    }

    pub fn do_op(&self, ctx: &mut ProcessContext, op: OperationDescriptor) -> Result<Value, UcError> {
        do_op(ctx, &self.mem, &self.shared, &*self.spec, op)
    }

    /// Current contents of `S`.
    pub fn state_record(&self) -> Record {
        self.mem.read(self.shared.state)
    }

    /// The object's current sequential state.
    pub fn current_state(&self) -> Value {
        match self.state_record().field(1) {
            Some(FieldValue::State(v)) => v.clone(),
            _ => unreachable!("S always holds a state"),
        }
    }
}
