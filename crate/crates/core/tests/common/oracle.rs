//! Brute-force linearizability over small register histories: every
//! completion and every order, no pruning.

use gcas_core::history::{Event, EventBody};
use gcas_core::types::Register;
use gcas_core::{OperationDescriptor, Pid, SequentialType, Value};

pub const MAX_EVENTS: usize = 6;
const MAX_PROCS: u32 = 3;

fn ops() -> Vec<OperationDescriptor> {
    vec![
        OperationDescriptor::unary("write", 0),
        OperationDescriptor::unary("write", 1),
        OperationDescriptor::nullary("read"),
    ]
}

fn responses(op: &OperationDescriptor) -> Vec<Value> {
    if op.name == "read" {
        vec![Value::Int(0), Value::Int(1)]
    } else {
        vec![Value::Ack]
    }
}

/// Every per-process well-formed history of at most `MAX_EVENTS` events,
/// with pids introduced in increasing order.
pub fn all_histories() -> Vec<Vec<Event>> {
    fn extend(cur: &mut Vec<Event>, pending: &mut Vec<Option<OperationDescriptor>>, out: &mut Vec<Vec<Event>>) {
        out.push(cur.clone());
        if cur.len() == MAX_EVENTS {
            return;
        }
        let seq = cur.len() as u64 + 1;
        let known = pending.len() as u32;
        for pid in 1..=(known + 1).min(MAX_PROCS) {
            let idx = pid as usize - 1;
            if idx == pending.len() {
                pending.push(None);
            }
            match pending[idx].clone() {
                None => {
                    for op in ops() {
                        cur.push(Event { seq, pid: Pid(pid), body: EventBody::Invoke { op: op.clone() } });
                        pending[idx] = Some(op);
                        extend(cur, pending, out);
                        pending[idx] = None;
                        cur.pop();
                    }
                }
                Some(op) => {
                    for resp in responses(&op) {
                        cur.push(Event { seq, pid: Pid(pid), body: EventBody::Response { op: op.clone(), resp } });
                        pending[idx] = None;
                        extend(cur, pending, out);
                        pending[idx] = Some(op.clone());
                        cur.pop();
                    }
                }
            }
            if pid > known {
                pending.pop();
            }
        }
    }
    let mut out = Vec::new();
    extend(&mut Vec::new(), &mut Vec::new(), &mut out);
    out
}

struct Op {
    op: OperationDescriptor,
    invoke: usize,
    response: Option<(usize, Value)>,
}

fn operations(events: &[Event]) -> Vec<Op> {
    let mut ops: Vec<Op> = Vec::new();
    let mut open: Vec<(Pid, usize)> = Vec::new();
    for (i, e) in events.iter().enumerate() {
        match &e.body {
            EventBody::Invoke { op } => {
                open.push((e.pid, ops.len()));
                ops.push(Op { op: op.clone(), invoke: i, response: None });
            }
            EventBody::Response { resp, .. } => {
                let at = open.iter().position(|(p, _)| *p == e.pid).unwrap();
                let (_, k) = open.remove(at);
                ops[k].response = Some((i, resp.clone()));
            }
            EventBody::Step { .. } => unreachable!(),
        }
    }
    ops
}

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.is_empty() {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let first = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, first);
            out.push(p);
        }
    }
    out
}

/// Tries every subset of pending ops to keep and every order of the kept
/// ops; no pruning.
pub fn naive_linearizable(events: &[Event]) -> bool {
    let ops = operations(events);
    let pending: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].response.is_none()).collect();
    let complete: Vec<usize> = (0..ops.len()).filter(|&i| ops[i].response.is_some()).collect();
    for mask in 0..(1u32 << pending.len()) {
        let mut kept = complete.clone();
        kept.extend(pending.iter().enumerate().filter(|(b, _)| mask & (1 << b) != 0).map(|(_, &i)| i));
        for order in permutations(&kept) {
            let respects_real_time = order.iter().enumerate().all(|(pos, &a)| {
                order[pos + 1..].iter().all(|&b| match ops[b].response {
                    Some((rb, _)) => rb > ops[a].invoke,
                    None => true,
                })
            });
            if !respects_real_time {
                continue;
            }
            let mut state = Register.initial_state();
            let legal = order.iter().all(|&k| {
                let (next, resp) = Register.apply(&ops[k].op, &state).unwrap();
                state = next;
                ops[k].response.as_ref().is_none_or(|(_, r)| *r == resp)
            });
            if legal {
                return true;
            }
        }
    }
    false
}

