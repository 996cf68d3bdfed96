//! Step-level invariant monitors. Each one inspects the state before and
//! after one scheduled transition together with the step reports of that
//! transition.

use crate::construction::{announce_record, cell_record, is_done, Access, Pid, SharedObjects, StepLabel, StepReport};
use crate::memory::{Comparator, FieldValue, Record};

use super::state::GlobalState;

pub const UNIQUE_TIMESTAMPS: &str = "unique-timestamps";
pub const ANNOUNCE_WELL_FORMED: &str = "announce-well-formed";
pub const STATE_WELL_FORMED: &str = "state-well-formed";
pub const OWNER_MONOTONIC_TIME: &str = "owner-monotonic-time";
pub const DONE_STAYS_DONE: &str = "done-stays-done";
pub const AT_MOST_ONCE_LINEARIZATION: &str = "at-most-once-linearization";
pub const COMPLETION_LINEARIZED: &str = "completion-linearized";
pub const RESPONSE_AGREEMENT: &str = "response-agreement";
pub const HELP_COPY_FORM: &str = "help-copy-form";
pub const ANNOUNCE_PRIORITY: &str = "announce-priority";
pub const ANNOUNCE_TIME_DECREASES: &str = "announce-time-decreases";
pub const GCAS_CONTRACT: &str = "gcas-contract";

// Raised by the scheduler rather than by a `Monitor`.
pub const STEP_ATOMICITY: &str = "step-atomicity";
pub const LOOP_BUDGET: &str = "loop-budget";
pub const LINEARIZABILITY: &str = "linearizability";
pub const LINEARIZATION_POINTS: &str = "linearization-points";
pub const CHECKER_DISAGREEMENT: &str = "checker-disagreement";
pub const HASH_COLLISION: &str = "hash-collision";
pub const STEP_ERROR: &str = "step-error";

/// One scheduled transition: everything `pid` did between two scheduling
/// points.
#[derive(Clone, Debug)]
pub struct TransitionInfo<'a> {
    pub pid: Pid,
    pub reports: &'a [StepReport],
    pub shared: &'a SharedObjects,
}

impl TransitionInfo<'_> {
    fn find(&self, label: StepLabel) -> Option<&StepReport> {
        self.reports.iter().find(|r| r.label == label)
    }

    fn completed(&self) -> Option<&crate::types::Value> {
        self.reports.iter().find_map(|r| r.completed.as_ref())
    }

    fn successful_l12_target(&self) -> Option<u64> {
        match &self.find(StepLabel::L12)?.access {
            Access::Gcas {
                success: true,
                replacement,
                ..
            } => replacement.time(),
            _ => None,
        }
    }
}

pub trait Monitor {
    fn id(&self) -> &'static str;

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool;
}

/// Runs every monitor; returns the ids that failed.
pub fn monitor_suite(
    monitors: &[Box<dyn Monitor>],
    before: &GlobalState,
    step: &TransitionInfo<'_>,
    after: &GlobalState,
) -> Vec<&'static str> {
    monitors
        .iter()
        .filter(|m| !m.holds(before, step, after))
        .map(|m| m.id())
        .collect()
}

pub fn default_monitors() -> Vec<Box<dyn Monitor>> {
    vec![
        Box::new(UniqueTimestamps),
        Box::new(AnnounceWellFormed),
        Box::new(StateWellFormed),
        Box::new(OwnerMonotonicTime),
        Box::new(DoneStaysDone),
        Box::new(AtMostOnceLinearization),
        Box::new(CompletionLinearized),
        Box::new(ResponseAgreement),
        Box::new(HelpCopyForm),
        Box::new(AnnouncePriority),
        Box::new(AnnounceTimeDecreases),
        Box::new(GcasContract),
    ]
}

/// Whether `(t, op, cell)` names an issued operation (or is NOOP's record).
fn names_issued(state: &GlobalState, shared: &SharedObjects, t: u64, op: &FieldValue, cell: &FieldValue) -> bool {
    if t == 0 {
        return *op == FieldValue::NOOP && *cell == FieldValue::Cell(shared.noop_cell);
    }
    let Some(issued) = state.issued_at(t) else {
        return false;
    };
    let owner_cell = state.slot(issued.pid).ctx.cell();
    *op == FieldValue::Op(issued.op.clone()) && *cell == FieldValue::Cell(owner_cell)
}

pub struct UniqueTimestamps;

impl Monitor for UniqueTimestamps {
    fn id(&self) -> &'static str {
        UNIQUE_TIMESTAMPS
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, _after: &GlobalState) -> bool {
        match step.find(StepLabel::L2).map(|r| &r.access) {
            Some(Access::FetchAndIncrement { value, .. }) => *value >= 1 && before.issued_at(*value).is_none(),
            _ => true,
        }
    }
}

pub struct AnnounceWellFormed;

impl Monitor for AnnounceWellFormed {
    fn id(&self) -> &'static str {
        ANNOUNCE_WELL_FORMED
    }

    fn holds(&self, _before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        let a = after.announce(step.shared);
        match (a.time(), a.field(1), a.field(2), a.arity()) {
            (Some(t), Some(op), Some(cell), 3) => names_issued(after, step.shared, t, op, cell),
            _ => false,
        }
    }
}

pub struct StateWellFormed;

impl Monitor for StateWellFormed {
    fn id(&self) -> &'static str {
        STATE_WELL_FORMED
    }

    fn holds(&self, _before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        let s = after.state_object(step.shared);
        let (Some(t), Some(FieldValue::State(_)), Some(resp), Some(cell), 4) =
            (s.time(), s.field(1), s.field(2), s.field(3), s.arity())
        else {
            return false;
        };
        if t == 0 {
            return *resp == FieldValue::BOTTOM && *cell == FieldValue::Cell(step.shared.noop_cell);
        }
        let Some(issued) = after.issued_at(t) else {
            return false;
        };
        matches!(resp, FieldValue::Resp(_)) && *cell == FieldValue::Cell(after.slot(issued.pid).ctx.cell())
    }
}

pub struct OwnerMonotonicTime;

impl Monitor for OwnerMonotonicTime {
    fn id(&self) -> &'static str {
        OWNER_MONOTONIC_TIME
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        before.procs.iter().all(|slot| {
            let obj = slot.ctx.cell().object();
            let (old, new) = (before.peek(obj).time(), after.peek(obj).time());
            if old == new {
                return true;
            }
            slot.ctx.pid() == step.pid && step.find(StepLabel::L3).is_some() && new > old
        })
    }
}

pub struct DoneStaysDone;

impl Monitor for DoneStaysDone {
    fn id(&self) -> &'static str {
        DONE_STAYS_DONE
    }

    fn holds(&self, before: &GlobalState, _step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        before
            .issued
            .iter()
            .all(|op| !before.is_op_done(op) || after.is_op_done(op))
    }
}

pub struct AtMostOnceLinearization;

impl Monitor for AtMostOnceLinearization {
    fn id(&self) -> &'static str {
        AT_MOST_ONCE_LINEARIZATION
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, _after: &GlobalState) -> bool {
        step.successful_l12_target()
            .is_none_or(|t| before.linearized_response(t).is_none())
    }
}

pub struct CompletionLinearized;

impl Monitor for CompletionLinearized {
    fn id(&self) -> &'static str {
        COMPLETION_LINEARIZED
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, _after: &GlobalState) -> bool {
        if step.completed().is_none() {
            return true;
        }
        let t = before.slot(step.pid).ctx.timestamp();
        before.linearized_response(t).is_some()
    }
}

pub struct ResponseAgreement;

impl Monitor for ResponseAgreement {
    fn id(&self) -> &'static str {
        RESPONSE_AGREEMENT
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, _after: &GlobalState) -> bool {
        let Some(returned) = step.completed() else {
            return true;
        };
        let t = before.slot(step.pid).ctx.timestamp();
        before.linearized_response(t).is_none_or(|r| r == returned)
    }
}

pub struct HelpCopyForm;

impl Monitor for HelpCopyForm {
    fn id(&self) -> &'static str {
        HELP_COPY_FORM
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, _after: &GlobalState) -> bool {
        let Some(Access::Gcas {
            obj,
            probe,
            replacement,
            ..
        }) = step.find(StepLabel::L6).map(|r| &r.access)
        else {
            return true;
        };
        let Some(t) = probe.time() else { return false };
        if *probe != cell_record(t, FieldValue::NULL) || replacement.time() != Some(t) {
            return false;
        }
        if !matches!(replacement.field(1), Some(FieldValue::Resp(_) | FieldValue::Sentinel(crate::memory::Sentinel::Bottom))) {
            return false;
        }
        let Some(cell) = obj.as_cell() else { return false };
        if t == 0 {
            return cell == step.shared.noop_cell;
        }
        before
            .issued_at(t)
            .is_some_and(|o| before.slot(o.pid).ctx.cell() == cell)
    }
}

/// After L7 the announced timestamp is at most our own: either we won, or
/// `A` already held an operation at least as old.
pub struct AnnouncePriority;

impl Monitor for AnnouncePriority {
    fn id(&self) -> &'static str {
        ANNOUNCE_PRIORITY
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        if step.find(StepLabel::L7).is_none() {
            return true;
        }
        let own = before.slot(step.pid).ctx.timestamp();
        after.announce(step.shared).time().is_some_and(|t| t <= own)
    }
}

pub struct AnnounceTimeDecreases;

impl Monitor for AnnounceTimeDecreases {
    fn id(&self) -> &'static str {
        ANNOUNCE_TIME_DECREASES
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        match step.find(StepLabel::L7).map(|r| &r.access) {
            Some(Access::Gcas {
                cmp: Comparator::TimeGt,
                success: true,
                ..
            }) => after.announce(step.shared).time() < before.announce(step.shared).time(),
            _ => true,
        }
    }
}

/// A GCAS returns true iff the object now holds the replacement; a failed
/// one leaves the object untouched.
pub struct GcasContract;

impl Monitor for GcasContract {
    fn id(&self) -> &'static str {
        GCAS_CONTRACT
    }

    fn holds(&self, before: &GlobalState, step: &TransitionInfo<'_>, after: &GlobalState) -> bool {
        step.reports.iter().all(|r| match &r.access {
            Access::Gcas {
                obj,
                replacement,
                success,
                ..
            } => {
                if *success {
                    after.peek(*obj) == *replacement
                } else {
                    after.peek(*obj) == before.peek(*obj)
                }
            }
            _ => true,
        })
    }
}

/// The announce record a process would install for its current operation.
pub fn own_announce(state: &GlobalState, pid: Pid) -> Option<Record> {
    let ctx = &state.slot(pid).ctx;
    let op = ctx.operation()?;
    Some(announce_record(ctx.timestamp(), FieldValue::Op(op.clone()), ctx.cell()))
}

/// Done status of every issued operation, keyed by timestamp.
pub fn done_set(state: &GlobalState) -> Vec<(u64, bool)> {
    state
        .issued
        .iter()
        .map(|o| (o.t, is_done(&state.peek(state.slot(o.pid).ctx.cell().object()), o.t)))
        .collect()
}
