//! Linearizability of histories with respect to a sequential type.
//!
//! [`check_linearizable`] is a generic search in the style of Wing and Gong
//! with Lowe's memoization: it repeatedly linearizes some operation that is
//! minimal in real-time order, and caches `(linearized set, state)` pairs
//! already known to be dead ends. Pending operations may be linearized (with
//! whatever response the type produces) or dropped.
//!
//! [`verify_linearization_points`] instead checks one specific linearization:
//! the one induced by the successful `S` GCAS steps of the universal
//! construction.

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::construction::{Pid, StepLabel};
use crate::history::{Event, EventBody, HistoryError, Outcome};
use crate::types::{OperationDescriptor, SequentialType, TypeError, Value};

pub const DEFAULT_BUDGET: u64 = 5_000_000;

/// Invocation/response-only history.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct History {
    events: Vec<Event>,
}

/// One operation execution in a history.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OpExec {
    pub pid: Pid,
    pub op: OperationDescriptor,
    pub invoke: u64,
    pub response: Option<(u64, Value)>,
}

impl OpExec {
    pub fn is_complete(&self) -> bool {
        self.response.is_some()
    }
}

impl History {
    /// Validates the per-process invoke/response alternation.
    pub fn new(events: Vec<Event>) -> Result<Self, HistoryError> {
        let projected = project_history(&events)?;
        if projected.events.len() != events.len() {
            let seq = events.iter().find(|e| e.is_step()).map_or(0, |e| e.seq);
            return Err(HistoryError::Malformed {
                seq,
                message: "history contains low-level steps".into(),
            });
        }
        Ok(projected)
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// The first `n` events; operations whose response falls after the cut
    /// become pending.
    pub fn prefix(&self, n: usize) -> History {
        History {
            events: self.events[..n.min(self.events.len())].to_vec(),
        }
    }

    /// Operation executions in invocation order.
    pub fn operations(&self) -> Vec<OpExec> {
        let mut ops: Vec<OpExec> = Vec::new();
        let mut pending: HashMap<Pid, usize> = HashMap::new();
        for e in &self.events {
            match &e.body {
                EventBody::Invoke { op } => {
                    pending.insert(e.pid, ops.len());
                    ops.push(OpExec {
                        pid: e.pid,
                        op: op.clone(),
                        invoke: e.seq,
                        response: None,
                    });
                }
                EventBody::Response { resp, .. } => {
                    let i = pending.remove(&e.pid).expect("validated");
                    ops[i].response = Some((e.seq, resp.clone()));
                }
                EventBody::Step { .. } => {}
            }
        }
        ops
    }
}

fn malformed(seq: u64, message: String) -> HistoryError {
    HistoryError::Malformed { seq, message }
}

/// Keeps only invocation and response events, after checking that every
/// process follows invoke, steps*, response, and that `seq` increases.
pub fn project_history(events: &[Event]) -> Result<History, HistoryError> {
    let mut pending: HashMap<Pid, &OperationDescriptor> = HashMap::new();
    let mut last_seq = 0;
    let mut out = Vec::new();
    for e in events {
        if e.seq <= last_seq {
            return Err(malformed(e.seq, format!("seq does not increase past {last_seq}")));
        }
        last_seq = e.seq;
        match &e.body {
            EventBody::Invoke { op } => {
                if pending.insert(e.pid, op).is_some() {
                    return Err(malformed(e.seq, format!("{} invokes while pending", e.pid)));
                }
                out.push(e.clone());
            }
            EventBody::Response { op, .. } => match pending.remove(&e.pid) {
                Some(inv) if inv == op => out.push(e.clone()),
                Some(inv) => {
                    return Err(malformed(e.seq, format!("response to {op} but {inv} was invoked")));
                }
                None => return Err(malformed(e.seq, format!("{} responds without invoking", e.pid))),
            },
            EventBody::Step { .. } => {
                if !pending.contains_key(&e.pid) {
                    return Err(malformed(e.seq, format!("{} steps outside an operation", e.pid)));
                }
            }
        }
    }
    Ok(History { events: out })
}

/// A linearization: operation indices (into [`History::operations`]) in
/// linearization order, and for each the event seq just after which it takes
/// effect.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub order: Vec<usize>,
    pub points: Vec<u64>,
}

impl Witness {
    fn from_order(ops: &[OpExec], order: Vec<usize>) -> Self {
        let mut points = Vec::with_capacity(order.len());
        let mut at = 0;
        for &i in &order {
            at = at.max(ops[i].invoke);
            points.push(at);
        }
        Witness { order, points }
    }

    /// Replays the order and checks every point lies inside its interval,
    /// every complete operation appears, and every recorded response matches.
    pub fn validate(&self, history: &History, spec: &dyn SequentialType, initial: Value) -> bool {
        let ops = history.operations();
        if self.order.len() != self.points.len() {
            return false;
        }
        let mut seen = vec![false; ops.len()];
        let mut state = initial;
        let mut last_point = 0;
        for (&i, &point) in self.order.iter().zip(&self.points) {
            let Some(op) = ops.get(i) else { return false };
            if seen[i] || point < op.invoke || point < last_point {
                return false;
            }
            seen[i] = true;
            last_point = point;
            let Ok((next, resp)) = spec.apply(&op.op, &state) else {
                return false;
            };
            if let Some((at, expected)) = &op.response {
                if point >= *at || resp != *expected {
                    return false;
                }
            }
            state = next;
        }
        ops.iter().zip(&seen).all(|(op, &s)| s || !op.is_complete())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Linearizable(Witness),
    /// Carries the shortest non-linearizable prefix.
    NotLinearizable { counterexample: History },
    BudgetExceeded { explored: u64 },
}

impl Verdict {
    pub fn is_linearizable(&self) -> bool {
        matches!(self, Verdict::Linearizable(_))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
struct OpSet(Vec<u64>);

impl OpSet {
    fn new(n: usize) -> Self {
        OpSet(vec![0; n.div_ceil(64)])
    }

    fn contains(&self, i: usize) -> bool {
        self.0[i / 64] & (1 << (i % 64)) != 0
    }

    fn insert(&mut self, i: usize) {
        self.0[i / 64] |= 1 << (i % 64);
    }

    fn remove(&mut self, i: usize) {
        self.0[i / 64] &= !(1 << (i % 64));
    }
}

enum Search {
    Found(Vec<usize>),
    Exhausted,
    Budget(u64),
}

struct Frame {
    state: Value,
    candidates: Vec<usize>,
    next: usize,
}

fn candidates(ops: &[OpExec], done: &OpSet) -> Vec<usize> {
    let horizon = ops
        .iter()
        .enumerate()
        .filter(|(i, _)| !done.contains(*i))
        .filter_map(|(_, op)| op.response.as_ref().map(|(at, _)| *at))
        .min()
        .unwrap_or(u64::MAX);
    (0..ops.len())
        .filter(|&i| !done.contains(i) && ops[i].invoke < horizon)
        .collect()
}

fn search(ops: &[OpExec], spec: &dyn SequentialType, initial: Value, budget: u64) -> Result<Search, TypeError> {
    let required = ops.iter().filter(|op| op.is_complete()).count();
    let mut done = OpSet::new(ops.len());
    let mut done_required = 0;
    let mut order: Vec<usize> = Vec::new();
    let mut memo: HashSet<(OpSet, Value)> = HashSet::new();
    let mut explored = 0u64;
    let mut stack = vec![Frame {
        candidates: candidates(ops, &done),
        state: initial,
        next: 0,
    }];
    while let Some(frame) = stack.last_mut() {
        if done_required == required {
            return Ok(Search::Found(order));
        }
        if frame.next >= frame.candidates.len() {
            stack.pop();
            if let Some(i) = order.pop() {
                done.remove(i);
                if ops[i].is_complete() {
                    done_required -= 1;
                }
            }
            continue;
        }
        let i = frame.candidates[frame.next];
        frame.next += 1;
        explored += 1;
        if explored > budget {
            return Ok(Search::Budget(explored));
        }
        let (next_state, resp) = spec.apply(&ops[i].op, &frame.state)?;
        if let Some((_, expected)) = &ops[i].response {
            if resp != *expected {
                continue;
            }
        }
        done.insert(i);
        if !memo.insert((done.clone(), next_state.clone())) {
            done.remove(i);
            continue;
        }
        if ops[i].is_complete() {
            done_required += 1;
        }
        order.push(i);
        let cands = candidates(ops, &done);
        stack.push(Frame {
            state: next_state,
            candidates: cands,
            next: 0,
        });
    }
    Ok(Search::Exhausted)
}

pub fn check_linearizable(h: &History, spec: &dyn SequentialType) -> Result<Verdict, TypeError> {
    check_linearizable_from(h, spec, spec.initial_state(), DEFAULT_BUDGET)
}

/// As [`check_linearizable`], starting from `initial` with a bound on the
/// number of search nodes.
pub fn check_linearizable_from(
    h: &History,
    spec: &dyn SequentialType,
    initial: Value,
    budget: u64,
) -> Result<Verdict, TypeError> {
    let ops = h.operations();
    match search(&ops, spec, initial.clone(), budget)? {
        Search::Found(order) => Ok(Verdict::Linearizable(Witness::from_order(&ops, order))),
        Search::Budget(explored) => Ok(Verdict::BudgetExceeded { explored }),
        Search::Exhausted => {
            let counterexample = shortest_bad_prefix(h, spec, initial, budget)?;
            Ok(Verdict::NotLinearizable { counterexample })
        }
    }
}

/// Linearizable histories are prefix-closed, so the shortest
/// non-linearizable prefix can be found by bisection.
fn shortest_bad_prefix(h: &History, spec: &dyn SequentialType, initial: Value, budget: u64) -> Result<History, TypeError> {
    let (mut lo, mut hi) = (0, h.len());
    while lo + 1 < hi {
        let mid = (lo + hi) / 2;
        let prefix = h.prefix(mid);
        match search(&prefix.operations(), spec, initial.clone(), budget)? {
            Search::Exhausted => hi = mid,
            Search::Found(_) => lo = mid,
            Search::Budget(_) => return Ok(h.clone()),
        }
    }
    Ok(h.prefix(hi))
}

#[derive(Clone, Debug, Error, PartialEq, Eq)]
pub enum LinPointViolation {
    #[error("malformed implementation history: {0}")]
    Malformed(String),
    #[error("operation with timestamp {t} was linearized twice (seq {first} and {second})")]
    DoubleLinearization { t: u64, first: u64, second: u64 },
    #[error("{pid} completed {op} without a successful S GCAS")]
    Unlinearized { pid: Pid, op: OperationDescriptor },
    #[error("linearization point of {op} by {pid} at seq {point} is outside its interval")]
    OutsideInterval { pid: Pid, op: OperationDescriptor, point: u64 },
    #[error("{pid}'s {op}: sequential replay gives {expected}, history has {got}")]
    ResponseMismatch {
        pid: Pid,
        op: OperationDescriptor,
        expected: Value,
        got: Value,
    },
    #[error(transparent)]
    Type(#[from] TypeError),
}

impl fmt::Display for Witness {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}@{:?}", self.order, self.points)
    }
}

/// Checks the linearization given by the successful L12 steps of an
/// implementation history.
///
/// Each pending operation whose L12 succeeded is completed with the response
/// that L12 wrote; any other pending operation is dropped.
pub fn verify_linearization_points(
    impl_events: &[Event],
    spec: &dyn SequentialType,
) -> Result<Witness, LinPointViolation> {
    let history = project_history(impl_events).map_err(|e| LinPointViolation::Malformed(e.to_string()))?;
    let ops = history.operations();

    let mut next_op = 0usize;
    let mut current: HashMap<Pid, usize> = HashMap::new();
    let mut by_time: HashMap<u64, usize> = HashMap::new();
    let mut last_announce: HashMap<Pid, u64> = HashMap::new();
    let mut last_applied: HashMap<Pid, Value> = HashMap::new();
    // (op index, seq of the successful L12, response it wrote)
    let mut points: Vec<(usize, u64, Value)> = Vec::new();
    let mut linearized_at: HashMap<usize, u64> = HashMap::new();

    for e in impl_events {
        match &e.body {
            EventBody::Invoke { .. } => {
                current.insert(e.pid, next_op);
                next_op += 1;
            }
            EventBody::Response { .. } => {
                current.remove(&e.pid);
            }
            EventBody::Step { label, outcome, .. } => match (label, outcome) {
                (StepLabel::L2, Outcome::Time(t)) => {
                    by_time.insert(*t, current[&e.pid]);
                }
                (StepLabel::L8, Outcome::Record(r)) => {
                    let t = r.time().ok_or_else(|| LinPointViolation::Malformed(format!("A holds {r}")))?;
                    last_announce.insert(e.pid, t);
                }
                (StepLabel::L11, Outcome::Value(v)) => {
                    last_applied.insert(e.pid, v.clone());
                }
                (StepLabel::L12, Outcome::Bool(true)) => {
                    let missing = || LinPointViolation::Malformed(format!("L12 at seq {} without L8/L11", e.seq));
                    let t = *last_announce.get(&e.pid).ok_or_else(missing)?;
                    let resp = last_applied.get(&e.pid).ok_or_else(missing)?.clone();
                    let &i = by_time.get(&t).ok_or_else(|| {
                        LinPointViolation::Malformed(format!("L12 at seq {} for unissued timestamp {t}", e.seq))
                    })?;
                    if let Some(&first) = linearized_at.get(&i) {
                        return Err(LinPointViolation::DoubleLinearization {
                            t,
                            first,
                            second: e.seq,
                        });
                    }
                    linearized_at.insert(i, e.seq);
                    points.push((i, e.seq, resp));
                }
                _ => {}
            },
        }
    }

    for (i, op) in ops.iter().enumerate() {
        if op.is_complete() && !linearized_at.contains_key(&i) {
            return Err(LinPointViolation::Unlinearized {
                pid: op.pid,
                op: op.op.clone(),
            });
        }
    }

    let mut state = spec.initial_state();
    for (i, point, written) in &points {
        let op = &ops[*i];
        let inside = *point > op.invoke && op.response.as_ref().is_none_or(|(at, _)| point < at);
        if !inside {
            return Err(LinPointViolation::OutsideInterval {
                pid: op.pid,
                op: op.op.clone(),
                point: *point,
            });
        }
        let (next, resp) = spec.apply(&op.op, &state)?;
        let got = op.response.as_ref().map_or(written, |(_, r)| r);
        if resp != *got || resp != *written {
            return Err(LinPointViolation::ResponseMismatch {
                pid: op.pid,
                op: op.op.clone(),
                expected: resp,
                got: got.clone(),
            });
        }
        state = next;
    }

    Ok(Witness {
        order: points.iter().map(|(i, _, _)| *i).collect(),
        points: points.iter().map(|(_, p, _)| *p).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{Counter, Register};

    fn ev(seq: u64, pid: u32, body: EventBody) -> Event {
        Event { seq, pid: Pid(pid), body }
    }

    fn inv(seq: u64, pid: u32, op: OperationDescriptor) -> Event {
        ev(seq, pid, EventBody::Invoke { op })
    }

    fn res(seq: u64, pid: u32, op: OperationDescriptor, resp: Value) -> Event {
        ev(seq, pid, EventBody::Response { op, resp })
    }

    fn inc() -> OperationDescriptor {
        OperationDescriptor::nullary("inc")
    }

    fn read() -> OperationDescriptor {
        OperationDescriptor::nullary("read")
    }

    fn write(v: i64) -> OperationDescriptor {
        OperationDescriptor::unary("write", v)
    }

    #[test]
    fn empty_history_is_linearizable() {
        let h = History::default();
        assert!(check_linearizable(&h, &Counter).unwrap().is_linearizable());
        assert!(project_history(&[]).unwrap().is_empty());
    }

    #[test]
    fn sequential_counter_with_duplicate_response() {
        let h = History::new(vec![
            inv(1, 1, inc()),
            res(2, 1, inc(), Value::Int(0)),
            inv(3, 2, inc()),
            res(4, 2, inc(), Value::Int(0)),
        ])
        .unwrap();
        match check_linearizable(&h, &Counter).unwrap() {
            Verdict::NotLinearizable { counterexample } => assert_eq!(counterexample.len(), 4),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn register_stale_read_after_concurrent_write() {
        // write(5) overlaps read->5; a later read->0 cannot be ordered anywhere.
        let h = History::new(vec![
            inv(1, 1, write(5)),
            inv(2, 2, read()),
            res(3, 2, read(), Value::Int(5)),
            res(4, 1, write(5), Value::Ack),
            inv(5, 2, read()),
            res(6, 2, read(), Value::Int(0)),
        ])
        .unwrap();
        match check_linearizable(&h, &Register).unwrap() {
            Verdict::NotLinearizable { counterexample } => assert_eq!(counterexample.len(), 6),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn counterexample_is_shortest_prefix() {
        let h = History::new(vec![
            inv(1, 1, read()),
            res(2, 1, read(), Value::Int(3)),
            inv(3, 2, write(1)),
            res(4, 2, write(1), Value::Ack),
        ])
        .unwrap();
        match check_linearizable(&h, &Register).unwrap() {
            Verdict::NotLinearizable { counterexample } => assert_eq!(counterexample.len(), 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn pending_op_may_be_linearized_or_dropped() {
        // A pending write explains the read.
        let h = History::new(vec![
            inv(1, 1, write(1)),
            inv(2, 2, read()),
            res(3, 2, read(), Value::Int(1)),
        ])
        .unwrap();
        let Verdict::Linearizable(w) = check_linearizable(&h, &Register).unwrap() else {
            panic!()
        };
        assert_eq!(w.order, vec![0, 1]);
        assert!(w.validate(&h, &Register, Value::Int(0)));

        // Or it never happened.
        let h = History::new(vec![
            inv(1, 1, write(1)),
            inv(2, 2, read()),
            res(3, 2, read(), Value::Int(0)),
        ])
        .unwrap();
        let Verdict::Linearizable(w) = check_linearizable(&h, &Register).unwrap() else {
            panic!()
        };
        assert_eq!(w.order, vec![1]);
    }

    #[test]
    fn budget_is_reported_distinctly() {
        let mut events = Vec::new();
        for p in 0..6 {
            events.push(inv(p + 1, p as u32, inc()));
        }
        for p in 0..6 {
            events.push(res(p + 7, p as u32, inc(), Value::Int(7)));
        }
        let h = History::new(events).unwrap();
        assert!(matches!(
            check_linearizable_from(&h, &Counter, Value::Int(0), 3).unwrap(),
            Verdict::BudgetExceeded { .. }
        ));
    }

    #[test]
    fn projection_rejects_bad_patterns() {
        let step = |seq, pid| {
            ev(
                seq,
                pid,
                EventBody::Step {
                    op: inc(),
                    label: StepLabel::L2,
                    object: None,
                    outcome: Outcome::Time(1),
                },
            )
        };
        assert!(project_history(&[step(1, 1)]).is_err());
        assert!(project_history(&[res(1, 1, inc(), Value::Int(0))]).is_err());
        assert!(project_history(&[inv(1, 1, inc()), inv(2, 1, inc())]).is_err());
        assert!(project_history(&[inv(2, 1, inc()), step(2, 1)]).is_err());
        let h = project_history(&[inv(1, 1, inc()), step(2, 1), inv(3, 2, inc()), res(4, 1, inc(), Value::Int(0))]).unwrap();
        assert_eq!(h.events().iter().map(|e| e.seq).collect::<Vec<_>>(), vec![1, 3, 4]);
    }

    #[test]
    fn witness_validation_catches_bad_orders() {
        let h = History::new(vec![
            inv(1, 1, inc()),
            res(2, 1, inc(), Value::Int(0)),
            inv(3, 2, inc()),
            res(4, 2, inc(), Value::Int(1)),
        ])
        .unwrap();
        let good = Witness { order: vec![0, 1], points: vec![1, 3] };
        assert!(good.validate(&h, &Counter, Value::Int(0)));
        let swapped = Witness { order: vec![1, 0], points: vec![3, 3] };
        assert!(!swapped.validate(&h, &Counter, Value::Int(0)));
        let missing = Witness { order: vec![0], points: vec![1] };
        assert!(!missing.validate(&h, &Counter, Value::Int(0)));
    }
}
