use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

use crate::construction::{is_done, Pid, ProcessContext, SharedObjects};
use crate::memory::{ObjectHandle, Record, SimMemory};
use crate::types::{OperationDescriptor, Value};

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct ProcSlot {
    pub ctx: ProcessContext,
    /// Index of the next workload operation to invoke.
    pub next_op: usize,
    pub crashed: bool,
}

/// An operation that has been assigned a timestamp.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IssuedOp {
    pub t: u64,
    pub pid: Pid,
    pub op: Arc<OperationDescriptor>,
}

/// Externally visible progress, in order. Two paths reaching states with the
/// same marks produce the same verdicts from both linearizability checks.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Mark {
    Invoke(Pid),
    Respond(Pid, Value),
    Linearize(u64),
}

/// Everything the future of a run depends on: memory, every process's step
/// machine, and the bookkeeping the monitors and checks read.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GlobalState {
    pub mem: SimMemory,
    pub procs: Vec<ProcSlot>,
    pub issued: Vec<IssuedOp>,
    /// Timestamps linearized by a successful L12, with the response written.
    pub linearized: Vec<(u64, Value)>,
    pub marks: Vec<Mark>,
}

impl GlobalState {
    /// Stable 64-bit digest of the state (SipHash with fixed keys over the
    /// derived `Hash` traversal).
    pub fn digest(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.hash(&mut h);
        h.finish()
    }

    pub fn slot(&self, pid: Pid) -> &ProcSlot {
        &self.procs[pid.0 as usize - 1]
    }

    pub fn slot_mut(&mut self, pid: Pid) -> &mut ProcSlot {
        &mut self.procs[pid.0 as usize - 1]
    }

    pub fn issued_at(&self, t: u64) -> Option<&IssuedOp> {
        self.issued.iter().find(|o| o.t == t)
    }

    pub fn linearized_response(&self, t: u64) -> Option<&Value> {
        self.linearized.iter().find(|(lt, _)| *lt == t).map(|(_, r)| r)
    }

    pub fn announce(&self, shared: &SharedObjects) -> Record {
        self.peek(shared.announce)
    }

    pub fn state_object(&self, shared: &SharedObjects) -> Record {
        self.peek(shared.state)
    }

    /// Reads without counting as a step.
    pub fn peek(&self, obj: ObjectHandle) -> Record {
        self.mem.peek(obj)
    }

    pub fn is_op_done(&self, op: &IssuedOp) -> bool {
        let cell = self.slot(op.pid).ctx.cell();
        is_done(&self.peek(cell.object()), op.t)
    }

    pub fn counter(&self, shared: &SharedObjects) -> u64 {
        self.mem.counter_value(shared.clock)
    }

    pub fn is_terminal(&self, ops_per_proc: usize) -> bool {
        self.procs
            .iter()
            .all(|p| p.crashed || (p.ctx.is_idle() && p.next_op >= ops_per_proc))
    }

    /// Responses returned so far, per process, in order.
    pub fn responses(&self) -> Vec<(Pid, Value)> {
        self.marks
            .iter()
            .filter_map(|m| match m {
                Mark::Respond(p, v) => Some((*p, v.clone())),
                _ => None,
            })
            .collect()
    }
}
