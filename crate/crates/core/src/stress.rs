//! Multi-threaded stress run of the universal construction on the native
//! backend, with linearizability checks on sampled pieces of the history.
//!
//! Threads run in barrier-separated segments. Between two barriers no
//! operation is in flight, so each segment is a complete history on its own
//! whose initial state is the value of `S` read at the barrier.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value as Json};

use crate::checker::{check_linearizable_from, History, Verdict, DEFAULT_BUDGET};
use crate::construction::{Pid, UcError, UniversalObject};
use crate::history::{renumber, Event, EventBody};
use crate::types::{TypeSpec, Value};

#[derive(Clone, Debug)]
pub struct StressConfig {
    pub spec: TypeSpec,
    pub threads: usize,
    pub ops_per_thread: usize,
    /// Target number of invoke/response events per checked segment.
    pub segment_events: usize,
    /// How many segments to check, spread evenly over the run; 0 checks all.
    pub checked_segments: usize,
}

impl StressConfig {
    pub fn new(spec: TypeSpec, threads: usize, ops_per_thread: usize) -> Self {
        StressConfig {
            spec,
            threads,
            ops_per_thread,
            segment_events: 1000,
            checked_segments: 0,
        }
    }

    /// Operations each thread runs per segment.
    pub fn ops_per_segment(&self) -> usize {
        self.segment_events.div_ceil(2 * self.threads).max(1)
    }
}

#[derive(Clone, Debug)]
pub struct SegmentResult {
    pub index: usize,
    pub events: usize,
    pub linearizable: Option<bool>,
}

#[derive(Clone, Debug)]
pub struct StressReport {
    pub final_state: Value,
    /// Every response, in thread order then program order.
    pub responses: Vec<Value>,
    pub segments: usize,
    pub checked: Vec<SegmentResult>,
    pub elapsed: Duration,
}

impl StressReport {
    pub fn failed_segments(&self) -> usize {
        self.checked.iter().filter(|s| s.linearizable == Some(false)).count()
    }

    pub fn inconclusive_segments(&self) -> usize {
        self.checked.iter().filter(|s| s.linearizable.is_none()).count()
    }

    /// For a counter started at 0: responses are exactly `0..n`.
    pub fn responses_are_permutation(&self) -> bool {
        let mut ints: Vec<i64> = Vec::with_capacity(self.responses.len());
        for r in &self.responses {
            match r {
                Value::Int(i) => ints.push(*i),
                _ => return false,
            }
        }
        ints.sort_unstable();
        ints.iter().enumerate().all(|(i, v)| *v == i as i64)
    }

    pub fn summary_json(&self) -> Json {
        json!({
            "final_state": crate::history::value_to_json(&self.final_state),
            "responses": self.responses.len(),
            "segments": self.segments,
            "segments_checked": self.checked.len(),
            "segments_failed": self.failed_segments(),
            "segments_inconclusive": self.inconclusive_segments(),
            "elapsed_ms": self.elapsed.as_millis() as u64,
        })
    }
}

struct Stamped {
    segment: usize,
    event: Event,
}

pub fn run_stress(cfg: &StressConfig) -> Result<StressReport, UcError> {
    let start = Instant::now();
    let object = Arc::new(UniversalObject::with_capacity(cfg.spec.clone(), cfg.threads)?);
    let per_segment = cfg.ops_per_segment();
    // The last segment absorbs the remainder so none falls below the target.
    let segments = (cfg.ops_per_thread / per_segment).max(1);
    let clock = Arc::new(AtomicU64::new(1));
    let barrier = Arc::new(Barrier::new(cfg.threads));
    let initial_states = Arc::new(Mutex::new(vec![Value::Empty; segments]));

    let mut handles = Vec::with_capacity(cfg.threads);
    for worker in 0..cfg.threads {
        let object = Arc::clone(&object);
        let clock = Arc::clone(&clock);
        let barrier = Arc::clone(&barrier);
        let initial_states = Arc::clone(&initial_states);
        let ops = cfg.ops_per_thread;
        handles.push(thread::spawn(move || -> Result<(Vec<Value>, Vec<Stamped>), UcError> {
            let mut ctx = object.new_process()?;
            let pid: Pid = ctx.pid();
            let mut responses = Vec::with_capacity(ops);
            let mut log = Vec::with_capacity(2 * ops);
            for segment in 0..segments {
                barrier.wait();
                if worker == 0 {
                    initial_states.lock().expect("poisoned")[segment] = object.current_state();
                }
                barrier.wait();
                let end = if segment + 1 == segments { ops } else { (segment + 1) * per_segment };
                for index in segment * per_segment..end {
                    let op = object.spec().workload_op(pid.0, index);
                    let seq = clock.fetch_add(1, Ordering::SeqCst);
                    log.push(Stamped {
                        segment,
                        event: Event {
                            seq,
                            pid,
                            body: EventBody::Invoke { op: op.clone() },
                        },
                    });
                    let resp = object.do_op(&mut ctx, op.clone())?;
                    let seq = clock.fetch_add(1, Ordering::SeqCst);
                    log.push(Stamped {
                        segment,
                        event: Event {
                            seq,
                            pid,
                            body: EventBody::Response {
                                op,
                                resp: resp.clone(),
                            },
                        },
                    });
                    responses.push(resp);
                }
            }
            Ok((responses, log))
        }));
    }

    let mut responses = Vec::with_capacity(cfg.threads * cfg.ops_per_thread);
    let mut by_segment: Vec<Vec<Event>> = vec![Vec::new(); segments];
    for h in handles {
        let (rs, log) = h.join().expect("stress worker panicked")?;
        responses.extend(rs);
        for s in log {
            by_segment[s.segment].push(s.event);
        }
    }
    let final_state = object.current_state();
    let initial_states = initial_states.lock().expect("poisoned").clone();

    let chosen: Vec<usize> = if cfg.checked_segments == 0 || cfg.checked_segments >= segments {
        (0..segments).collect()
    } else {
        (0..cfg.checked_segments)
            .map(|i| i * segments / cfg.checked_segments)
            .collect()
    };
    let mut checked = Vec::with_capacity(chosen.len());
    for index in chosen {
        let mut events = std::mem::take(&mut by_segment[index]);
        events.sort_by_key(|e| e.seq);
        renumber(&mut events);
        let n = events.len();
        let linearizable = match History::new(events) {
            Ok(h) => match check_linearizable_from(&h, &*cfg.spec, initial_states[index].clone(), DEFAULT_BUDGET) {
                Ok(Verdict::Linearizable(_)) => Some(true),
                Ok(Verdict::BudgetExceeded { .. }) => None,
                Ok(Verdict::NotLinearizable { .. }) | Err(_) => Some(false),
            },
            Err(_) => Some(false),
        };
        checked.push(SegmentResult {
            index,
            events: n,
            linearizable,
        });
    }

    Ok(StressReport {
        final_state,
        responses,
        segments,
        checked,
        elapsed: start.elapsed(),
    })
}
