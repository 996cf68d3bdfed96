//! Deterministic scheduler over the step machine: exhaustive DFS with state
//! hashing and progress-cycle detection, and seeded random sampling.

pub mod monitor;
pub mod state;

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value as Json};

use crate::checker::{check_linearizable_from, project_history, verify_linearization_points, Verdict, DEFAULT_BUDGET};
use crate::construction::{new_process, Access, Mutation, Pid, ProcessContext, SharedObjects, StepLabel, StepReport};
use crate::history::{EventBody, Event, Layout};
use crate::memory::{FieldValue, MemoryError, SimMemory};
use crate::types::{builtin, TypeError, TypeSpec, Value};

pub use monitor::{default_monitors, monitor_suite, Monitor, TransitionInfo};
pub use state::{GlobalState, IssuedOp, Mark, ProcSlot};

use monitor::*;

/// Keep at most this many full violation records per invariant id.
const KEPT_PER_INVARIANT: usize = 1;
const KEPT_CYCLES: usize = 8;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Mode {
    Exhaustive,
    Random { samples: u64, seed: u64 },
}

#[derive(Clone, Debug)]
pub struct ExplorationConfig {
    pub procs: usize,
    pub ops_per_proc: usize,
    pub spec: TypeSpec,
    pub mode: Mode,
    /// Pids that may crash; a crash may be scheduled at any point.
    pub crash_set: Vec<Pid>,
    /// Schedules longer than this are cut off and counted as truncated.
    pub max_steps: usize,
    /// Exhaustive mode: maximum number of distinct states to visit.
    pub budget: u64,
    pub mutation: Mutation,
    /// Run both linearizability checks at every terminal state.
    pub check_histories: bool,
    pub stop_on_violation: bool,
    /// Random mode: most loop iterations (L5 steps) one operation may take.
    /// `None` selects 2 * total ops + 4.
    pub loop_budget: Option<u64>,
}

impl ExplorationConfig {
    pub fn new(spec: TypeSpec, procs: usize, ops_per_proc: usize) -> Self {
        ExplorationConfig {
            procs,
            ops_per_proc,
            spec,
            mode: Mode::Exhaustive,
            crash_set: Vec::new(),
            max_steps: 10_000,
            budget: 5_000_000,
            mutation: Mutation::None,
            check_histories: true,
            stop_on_violation: false,
            loop_budget: None,
        }
    }

    pub fn for_type(name: &str, procs: usize, ops_per_proc: usize) -> Result<Self, TypeError> {
        Ok(Self::new(builtin(name)?, procs, ops_per_proc))
    }

    pub fn effective_loop_budget(&self) -> u64 {
        self.loop_budget
            .unwrap_or(2 * (self.procs * self.ops_per_proc) as u64 + 4)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ExploreError {
    #[error("procs and ops_per_proc must both be at least 1")]
    EmptyConfig,
    #[error("crash pid {0} is not in 1..={1}")]
    CrashPid(Pid, usize),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error("replay: {0}")]
    Replay(String),
}

/// One scheduling decision.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Choice {
    Step(Pid),
    Crash(Pid),
}

impl Choice {
    /// Recipe encoding: `+pid` steps, `-pid` crashes.
    pub fn encode(self) -> i64 {
        match self {
            Choice::Step(p) => p.0 as i64,
            Choice::Crash(p) => -(p.0 as i64),
        }
    }

    pub fn decode(code: i64) -> Option<Choice> {
        let pid = Pid(u32::try_from(code.unsigned_abs()).ok()?);
        match code {
            0 => None,
            c if c > 0 => Some(Choice::Step(pid)),
            _ => Some(Choice::Crash(pid)),
        }
    }

    pub fn pid(self) -> Pid {
        match self {
            Choice::Step(p) | Choice::Crash(p) => p,
        }
    }
}

impl fmt::Display for Choice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Choice::Step(p) => write!(f, "{p}"),
            Choice::Crash(p) => write!(f, "crash {p}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Violation {
    pub invariant: &'static str,
    pub message: String,
    /// Choices from the initial state up to and including the violating one.
    pub recipe: Vec<i64>,
    /// Hash of `history`; replaying `recipe` reproduces it.
    pub events_hash: u64,
    pub history: Vec<Event>,
}

/// A reachable cycle in the state graph: every state on it has an operation
/// pending that never completes while the cycle is followed.
#[derive(Clone, Debug)]
pub struct ProgressCycle {
    /// Choices from the initial state to the cycle's first state.
    pub prefix: Vec<i64>,
    /// Choices that go around the cycle once.
    pub cycle: Vec<i64>,
    /// Digests of the states on the cycle.
    pub states: Vec<u64>,
    /// Pids that step on the cycle.
    pub pids: Vec<Pid>,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub states_visited: u64,
    pub transitions: u64,
    pub schedules_completed: u64,
    pub truncated: u64,
    pub budget_exceeded: bool,
    /// Terminal histories whose linearizability search ran out of budget.
    pub checks_inconclusive: u64,
    pub hash_rechecks: u64,
    pub violation_counts: BTreeMap<&'static str, u64>,
    pub violations: Vec<Violation>,
    pub progress_cycle_count: u64,
    pub progress_cycles: Vec<ProgressCycle>,
}

impl Report {
    pub fn is_clean(&self) -> bool {
        self.violation_counts.is_empty() && self.progress_cycle_count == 0
    }

    pub fn violation_total(&self) -> u64 {
        self.violation_counts.values().sum()
    }

    pub fn has_violation(&self, id: &str) -> bool {
        self.violation_counts.contains_key(id)
    }

    /// Machine-readable summary, without full histories.
    pub fn summary_json(&self) -> Json {
        json!({
            "states_visited": self.states_visited,
            "transitions": self.transitions,
            "schedules_completed": self.schedules_completed,
            "truncated": self.truncated,
            "budget_exceeded": self.budget_exceeded,
            "checks_inconclusive": self.checks_inconclusive,
            "hash_rechecks": self.hash_rechecks,
            "violation_counts": self.violation_counts,
            "violations": self.violations.iter().map(|v| json!({
                "invariant": v.invariant,
                "message": v.message,
                "recipe": v.recipe,
                "events_hash": format!("{:016x}", v.events_hash),
            })).collect::<Vec<_>>(),
            "progress_cycles": self.progress_cycle_count,
            "progress_cycle_examples": self.progress_cycles.iter().map(|c| json!({
                "prefix": c.prefix,
                "cycle": c.cycle,
                "pids": c.pids.iter().map(|p| p.0).collect::<Vec<_>>(),
            })).collect::<Vec<_>>(),
        })
    }

    fn record(&mut self, v: Violation) {
        let count = self.violation_counts.entry(v.invariant).or_default();
        *count += 1;
        if *count as usize <= KEPT_PER_INVARIANT {
            self.violations.push(v);
        }
    }
}

pub fn events_hash(events: &[Event]) -> u64 {
    let mut h = DefaultHasher::new();
    events.hash(&mut h);
    h.finish()
}

/// Result of applying one choice.
struct Outcome {
    state: GlobalState,
    events: Vec<Event>,
    failed: Vec<(&'static str, String)>,
    /// L5 steps taken in this transition.
    iterations: u64,
    /// The stepping process finished its operation.
    completed: bool,
}

/// Called on each terminal state the first time it is reached, with the
/// history of the path that reached it.
pub type TerminalHook<'a> = &'a mut dyn FnMut(&GlobalState, &[Event]);

pub struct Explorer {
    cfg: ExplorationConfig,
    shared: SharedObjects,
    layout: Layout,
    initial: GlobalState,
    monitors: Vec<Box<dyn Monitor>>,
}

impl Explorer {
    pub fn new(cfg: ExplorationConfig) -> Result<Self, ExploreError> {
        if cfg.procs == 0 || cfg.ops_per_proc == 0 {
            return Err(ExploreError::EmptyConfig);
        }
        if let Some(p) = cfg.crash_set.iter().find(|p| p.0 == 0 || p.0 as usize > cfg.procs) {
            return Err(ExploreError::CrashPid(*p, cfg.procs));
        }
        let mem = SimMemory::new();
        let shared = SharedObjects::init(&mem, cfg.spec.initial_state())?;
        let mut layout = Layout::new(shared.clone());
        let mut procs = Vec::with_capacity(cfg.procs);
        for i in 1..=cfg.procs {
            let ctx = new_process(&mem, Pid(i as u32))?;
            layout.add_cell(ctx.cell(), ctx.pid());
            procs.push(ProcSlot {
                ctx,
                next_op: 0,
                crashed: false,
            });
        }
        let initial = GlobalState {
            mem,
            procs,
            issued: Vec::new(),
            linearized: Vec::new(),
            marks: Vec::new(),
        };
        Ok(Explorer {
            cfg,
            shared,
            layout,
            initial,
            monitors: default_monitors(),
        })
    }

    pub fn config(&self) -> &ExplorationConfig {
        &self.cfg
    }

    pub fn initial_state(&self) -> &GlobalState {
        &self.initial
    }

    pub fn shared(&self) -> &SharedObjects {
        &self.shared
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn run(&self) -> Report {
        self.run_with(&mut |_, _| {})
    }

    pub fn run_with(&self, hook: TerminalHook<'_>) -> Report {
        match self.cfg.mode {
            Mode::Exhaustive => self.exhaustive(hook),
            Mode::Random { samples, seed } => self.random(samples, seed, hook),
        }
    }

    fn is_terminal(&self, s: &GlobalState) -> bool {
        s.is_terminal(self.cfg.ops_per_proc)
    }

    /// Enabled choices, in a fixed order: steps by pid, then crashes by pid.
    pub fn choices(&self, s: &GlobalState) -> Vec<Choice> {
        let live = |slot: &ProcSlot| !slot.crashed && (!slot.ctx.is_idle() || slot.next_op < self.cfg.ops_per_proc);
        let mut out: Vec<Choice> = s
            .procs
            .iter()
            .filter(|slot| live(slot))
            .map(|slot| Choice::Step(slot.ctx.pid()))
            .collect();
        out.extend(
            s.procs
                .iter()
                .filter(|slot| live(slot) && self.cfg.crash_set.contains(&slot.ctx.pid()))
                .map(|slot| Choice::Crash(slot.ctx.pid())),
        );
        out
    }

    fn event(&self, seq: u64, pid: Pid, body: EventBody) -> Event {
        Event { seq, pid, body }
    }

    /// Applies `choice` to `s`. `seq` is the number of events so far.
    fn apply(&self, s: &GlobalState, choice: Choice, seq: u64) -> Outcome {
        let mut next = s.clone();
        let mut events = Vec::new();
        let mut failed = Vec::new();
        let mut iterations = 0;
        let mut completed = false;
        let pid = match choice {
            Choice::Crash(p) => {
                next.slot_mut(p).crashed = true;
                return Outcome {
                    state: next,
                    events,
                    failed,
                    iterations,
                    completed,
                };
            }
            Choice::Step(p) => p,
        };
        let mut seq = seq;
        let mut emit = |events: &mut Vec<Event>, body| {
            seq += 1;
            events.push(self.event(seq, pid, body));
        };

        if next.slot(pid).ctx.is_idle() {
            let slot = next.slot_mut(pid);
            let op = self.cfg.spec.workload_op(pid.0, slot.next_op);
            slot.next_op += 1;
            if let Err(e) = slot.ctx.begin(op.clone()) {
                failed.push((STEP_ERROR, e.to_string()));
                return Outcome {
                    state: next,
                    events,
                    failed,
                    iterations,
                    completed,
                };
            }
            next.marks.push(Mark::Invoke(pid));
            emit(&mut events, EventBody::Invoke { op });
        }

        let mut reports: Vec<StepReport> = Vec::new();
        // Local labels run first and are fused with the shared step after them.
        loop {
            let label = next.slot(pid).ctx.pc();
            let before_accesses = next.mem.accesses();
            let GlobalState { mem, procs, .. } = &mut next;
            let ctx: &mut ProcessContext = &mut procs[pid.0 as usize - 1].ctx;
            let op = ctx.operation().cloned().expect("pending operation");
            let report = match ctx.step(mem, &self.shared, &*self.cfg.spec, self.cfg.mutation) {
                Ok(r) => r,
                Err(e) => {
                    failed.push((STEP_ERROR, format!("{pid} at {label}: {e}")));
                    break;
                }
            };
            let used = next.mem.accesses() - before_accesses;
            if used != u64::from(label.is_shared()) {
                failed
                    .push((STEP_ATOMICITY, format!("{pid} at {label} made {used} shared accesses")));
            }
            if label == StepLabel::L5 {
                iterations += 1;
            }
            if label == StepLabel::L2 {
                if let Access::FetchAndIncrement { value, .. } = report.access {
                    next.issued.push(IssuedOp {
                        t: value,
                        pid,
                        op: op.clone(),
                    });
                }
            }
            if let Access::Gcas {
                success: true,
                replacement,
                ..
            } = &report.access
            {
                if label == StepLabel::L12 {
                    let t = replacement.time().unwrap_or_default();
                    let resp = match replacement.field(2) {
                        Some(FieldValue::Resp(v)) => v.clone(),
                        _ => Value::Ack,
                    };
                    // A repeat is already a monitor violation; recording it
                    // again would make every lap of a livelock a new state.
                    if next.linearized_response(t).is_none() {
                        next.linearized.push((t, resp));
                        next.marks.push(Mark::Linearize(t));
                    }
                }
            }
            emit(&mut events, self.layout.step_body(&op, &report));
            let done = report.completed.clone();
            reports.push(report);
            if let Some(resp) = done {
                next.marks.push(Mark::Respond(pid, resp.clone()));
                emit(&mut events, EventBody::Response { op: (*op).clone(), resp });
                completed = true;
                break;
            }
            if label.is_shared() {
                break;
            }
        }

        let info = TransitionInfo {
            pid,
            reports: &reports,
            shared: &self.shared,
        };
        for id in monitor_suite(&self.monitors, s, &info, &next) {
            failed.push((id, describe(id, pid, &reports)));
        }
        Outcome {
            state: next,
            events,
            failed,
            iterations,
            completed,
        }
    }

    /// Both linearizability checks on a terminal history.
    fn terminal_checks(&self, events: &[Event], report: &mut Report) -> Vec<(&'static str, String)> {
        let mut failed = Vec::new();
        if !self.cfg.check_histories {
            return failed;
        }
        let spec = &*self.cfg.spec;
        let verdict = match project_history(events) {
            Ok(h) => check_linearizable_from(&h, spec, spec.initial_state(), DEFAULT_BUDGET),
            Err(e) => {
                failed.push((LINEARIZABILITY, e.to_string()));
                return failed;
            }
        };
        let checker_ok = match verdict {
            Ok(Verdict::Linearizable(_)) => Some(true),
            Ok(Verdict::NotLinearizable { .. }) => {
                failed.push((LINEARIZABILITY, "terminal history is not linearizable".into()));
                Some(false)
            }
            Ok(Verdict::BudgetExceeded { .. }) => {
                report.checks_inconclusive += 1;
                None
            }
            Err(e) => {
                failed.push((LINEARIZABILITY, e.to_string()));
                Some(false)
            }
        };
        let points_ok = match verify_linearization_points(events, spec) {
            Ok(_) => true,
            Err(e) => {
                failed.push((LINEARIZATION_POINTS, e.to_string()));
                false
            }
        };
        if checker_ok.is_some_and(|ok| ok != points_ok) {
            failed.push((
                CHECKER_DISAGREEMENT,
                format!("search says {}, linearization points say {points_ok}", checker_ok.unwrap()),
            ));
        }
        failed
    }

    fn violation(&self, id: &'static str, message: String, path: &[Choice], events: &[Event]) -> Violation {
        Violation {
            invariant: id,
            message,
            recipe: path.iter().map(|c| c.encode()).collect(),
            events_hash: events_hash(events),
            history: events.to_vec(),
        }
    }

    fn exhaustive(&self, hook: TerminalHook<'_>) -> Report {
        struct Frame {
            state: GlobalState,
            digest: u64,
            choices: Vec<Choice>,
            next: usize,
            events_len: usize,
        }

        let mut report = Report::default();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut samples: HashMap<u64, GlobalState> = HashMap::new();
        let mut on_stack: HashMap<u64, usize> = HashMap::new();
        let mut path: Vec<Choice> = Vec::new();
        let mut events: Vec<Event> = Vec::new();
        let mut stack: Vec<Frame> = Vec::new();

        let root = self.initial.clone();
        let digest = root.digest();
        visited.insert(digest);
        remember_sample(&mut samples, digest, &root);
        report.states_visited = 1;
        on_stack.insert(digest, 0);
        stack.push(Frame {
            choices: self.choices(&root),
            state: root,
            digest,
            next: 0,
            events_len: 0,
        });

        'dfs: while let Some(top) = stack.last_mut() {
            if top.next >= top.choices.len() {
                if top.choices.is_empty() {
                    report.schedules_completed += 1;
                }
                let done = stack.pop().expect("non-empty");
                on_stack.remove(&done.digest);
                path.pop();
                if let Some(parent) = stack.last() {
                    events.truncate(parent.events_len);
                }
                continue;
            }
            let choice = top.choices[top.next];
            top.next += 1;
            let parent_len = top.events_len;
            events.truncate(parent_len);
            let out = self.apply(&top.state, choice, events.len() as u64);
            report.transitions += 1;
            path.push(choice);
            events.extend(out.events);
            for (id, msg) in out.failed {
                report.record(self.violation(id, msg, &path, &events));
            }
            if self.cfg.stop_on_violation && !report.violation_counts.is_empty() {
                break 'dfs;
            }

            let digest = out.state.digest();
            if let Some(&depth) = on_stack.get(&digest) {
                report.progress_cycle_count += 1;
                if report.progress_cycles.len() < KEPT_CYCLES {
                    let cycle_states = stack[depth..].iter().map(|f| f.digest).collect();
                    let cycle: Vec<Choice> = path[depth..].to_vec();
                    let mut pids: Vec<Pid> = cycle.iter().map(|c| c.pid()).collect();
                    pids.sort();
                    pids.dedup();
                    report.progress_cycles.push(ProgressCycle {
                        prefix: path[..depth].iter().map(|c| c.encode()).collect(),
                        cycle: cycle.iter().map(|c| c.encode()).collect(),
                        states: cycle_states,
                        pids,
                    });
                }
                if self.cfg.stop_on_violation {
                    break 'dfs;
                }
                path.pop();
                continue;
            }
            if !visited.insert(digest) {
                if let Some(sample) = samples.get(&digest) {
                    report.hash_rechecks += 1;
                    if *sample != out.state {
                        report.record(self.violation(
                            HASH_COLLISION,
                            format!("two distinct states share digest {digest:016x}"),
                            &path,
                            &events,
                        ));
                    }
                }
                path.pop();
                continue;
            }
            remember_sample(&mut samples, digest, &out.state);
            report.states_visited += 1;
            if report.states_visited > self.cfg.budget {
                report.budget_exceeded = true;
                break 'dfs;
            }

            if self.is_terminal(&out.state) {
                hook(&out.state, &events);
                for (id, msg) in self.terminal_checks(&events, &mut report) {
                    report.record(self.violation(id, msg, &path, &events));
                }
                report.schedules_completed += 1;
                path.pop();
                continue;
            }
            if path.len() >= self.cfg.max_steps {
                report.truncated += 1;
                path.pop();
                continue;
            }
            on_stack.insert(digest, stack.len());
            stack.push(Frame {
                choices: self.choices(&out.state),
                state: out.state,
                digest,
                next: 0,
                events_len: events.len(),
            });
        }
        report
    }

    fn random(&self, samples: u64, seed: u64, hook: TerminalHook<'_>) -> Report {
        let mut report = Report::default();
        let loop_budget = self.cfg.effective_loop_budget();
        for i in 0..samples {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i));
            let mut state = self.initial.clone();
            let mut events: Vec<Event> = Vec::new();
            let mut path: Vec<Choice> = Vec::new();
            let mut iterations = vec![0u64; self.cfg.procs];
            let mut flagged = vec![false; self.cfg.procs];
            loop {
                let choices = self.choices(&state);
                let Some(&choice) = choices.choose(&mut rng) else {
                    hook(&state, &events);
                    for (id, msg) in self.terminal_checks(&events, &mut report) {
                        report.record(self.violation(id, msg, &path, &events));
                    }
                    report.schedules_completed += 1;
                    break;
                };
                if path.len() >= self.cfg.max_steps {
                    report.truncated += 1;
                    break;
                }
                let out = self.apply(&state, choice, events.len() as u64);
                report.transitions += 1;
                path.push(choice);
                events.extend(out.events);
                for (id, msg) in out.failed {
                    report.record(self.violation(id, msg, &path, &events));
                }
                let idx = choice.pid().0 as usize - 1;
                iterations[idx] += out.iterations;
                if iterations[idx] > loop_budget && !flagged[idx] {
                    flagged[idx] = true;
                    let msg = format!("{} exceeded {loop_budget} loop iterations in one operation", choice.pid());
                    report.record(self.violation(LOOP_BUDGET, msg, &path, &events));
                }
                if out.completed {
                    iterations[idx] = 0;
                    flagged[idx] = false;
                }
                state = out.state;
            }
            report.states_visited += path.len() as u64 + 1;
            if self.cfg.stop_on_violation && !report.violation_counts.is_empty() {
                break;
            }
        }
        report
    }

    /// Re-executes a recipe from the initial state. Returns the events, the
    /// final state and every check that failed along the way (terminal checks
    /// included if the recipe ends in a terminal state).
    pub fn replay(&self, recipe: &[i64]) -> Result<(Vec<Event>, GlobalState, Vec<&'static str>), ExploreError> {
        let mut state = self.initial.clone();
        let mut events = Vec::new();
        let mut failed = Vec::new();
        for (i, &code) in recipe.iter().enumerate() {
            let choice = Choice::decode(code).ok_or_else(|| ExploreError::Replay(format!("bad choice {code}")))?;
            if !self.choices(&state).contains(&choice) {
                return Err(ExploreError::Replay(format!("choice {choice} at position {i} is not enabled")));
            }
            let out = self.apply(&state, choice, events.len() as u64);
            events.extend(out.events);
            failed.extend(out.failed.into_iter().map(|(id, _)| id));
            state = out.state;
        }
        if self.is_terminal(&state) {
            let mut scratch = Report::default();
            failed.extend(self.terminal_checks(&events, &mut scratch).into_iter().map(|(id, _)| id));
        }
        Ok((events, state, failed))
    }
}

fn remember_sample(samples: &mut HashMap<u64, GlobalState>, digest: u64, state: &GlobalState) {
    if digest % 100 == 0 {
        samples.insert(digest, state.clone());
    }
}

fn describe(id: &str, pid: Pid, reports: &[StepReport]) -> String {
    let labels: Vec<&str> = reports.iter().map(|r| r.label.as_str()).collect();
    format!("{id} after {pid} ran {}", labels.join(","))
}

pub fn explore_exhaustive(cfg: ExplorationConfig) -> Result<Report, ExploreError> {
    let cfg = ExplorationConfig {
        mode: Mode::Exhaustive,
        ..cfg
    };
    Ok(Explorer::new(cfg)?.run())
}

/// Exhaustive search of the state graph; any cycle in it is a progress cycle,
/// since every transition is a step of a process with a pending operation and
/// a completed operation can never be undone.
pub fn detect_progress_cycles(cfg: ExplorationConfig) -> Result<Report, ExploreError> {
    explore_exhaustive(ExplorationConfig {
        check_histories: false,
        ..cfg
    })
}

pub fn explore_random(cfg: ExplorationConfig) -> Result<Report, ExploreError> {
    Ok(Explorer::new(cfg)?.run())
}
