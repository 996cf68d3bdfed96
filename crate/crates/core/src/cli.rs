//! The `gcas` command line: argument parsing, run orchestration and the JSON
//! summary printed on stdout.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value as Json};

use crate::checker::{check_linearizable_from, project_history, verify_linearization_points, Verdict};
use crate::construction::{new_process, Mutation, Pid, SharedObjects, UcError};
use crate::explore::{ExplorationConfig, Explorer, Mode};
use crate::history::{read_history, write_history, Event, EventBody, Layout};
use crate::memory::{NativeMemory, SimMemory, Substrate};
use crate::stress::{run_stress, StressConfig};
use crate::types::{builtin, parse_operation, OperationDescriptor, SequentialType, TypeSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VIOLATION: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "gcas", version, about = "GCAS universal construction: explorer, checker and stress harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Explore interleavings on the simulated backend.
    Explore(ExploreArgs),
    /// Run the construction on real threads.
    Stress(StressArgs),
    /// Check a JSONL history for linearizability.
    Check(CheckArgs),
    /// Print an annotated single-process trace.
    Demo(DemoArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Backend {
    Sim,
    Native,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Exhaustive,
    Random,
}

#[derive(Args, Debug)]
pub struct ExploreArgs {
    #[arg(long = "type", default_value = "counter")]
    pub type_name: String,
    #[arg(long, default_value_t = 2)]
    pub procs: usize,
    #[arg(long, default_value_t = 1)]
    pub ops_per_proc: usize,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: Backend,
    #[arg(long, value_enum, default_value = "exhaustive")]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: u64,
    #[arg(long, default_value_t = 10_000)]
    pub max_steps: usize,
    /// Pids allowed to crash (comma-separated or repeated).
    #[arg(long, value_delimiter = ',')]
    pub crash: Vec<u32>,
    /// Maximum distinct states in exhaustive mode.
    #[arg(long, default_value_t = 5_000_000)]
    pub budget: u64,
    /// none | skip-help-copy | announce-eq
    #[arg(long, default_value = "none")]
    pub mutation: String,
    #[arg(long)]
    pub loop_budget: Option<u64>,
    /// Where to write the first violating history.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct StressArgs {
    #[arg(long = "type", default_value = "counter")]
    pub type_name: String,
    #[arg(long, default_value_t = 8)]
    pub procs: usize,
    #[arg(long, default_value_t = 10_000)]
    pub ops_per_proc: usize,
    #[arg(long, value_enum, default_value = "native")]
    pub backend: Backend,
    /// Segments to check for linearizability; 0 checks every segment.
    #[arg(long, default_value_t = 0)]
    pub samples: usize,
    /// Target events per checked segment.
    #[arg(long, default_value_t = 1000)]
    pub segment_events: usize,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long = "type", default_value = "register")]
    pub type_name: String,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: Backend,
    /// Search-node budget for the linearizability search.
    #[arg(long, default_value_t = crate::checker::DEFAULT_BUDGET)]
    pub budget: u64,
    /// Where to write the shortest non-linearizable prefix.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DemoArgs {
    #[arg(long = "type", default_value = "counter")]
    pub type_name: String,
    #[arg(long, value_enum, default_value = "sim")]
    pub backend: Backend,
    /// Operations to run, e.g. `inc` or `write(5)`; defaults to the type's workload.
    #[arg(long = "op")]
    pub ops: Vec<String>,
    /// Number of workload operations when no `--op` is given.
    #[arg(long, default_value_t = 1)]
    pub ops_per_proc: usize,
    /// Where to write the trace as JSONL.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    fn runtime(message: impl ToString) -> Self {
        Failure {
            code: EXIT_VIOLATION,
            message: message.to_string(),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(stderr, "{}", e.render())
            } else {
                write!(stdout, "{}", e.render())
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Explore(a) => explore(&a, stdout, stderr),
        Command::Stress(a) => stress(&a, stdout, stderr),
        Command::Check(a) => check(&a, stdout, stderr),
        Command::Demo(a) => demo(&a, stdout),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn spec_for(name: &str) -> Result<TypeSpec, Failure> {
    builtin(name).map_err(|e| Failure::usage(e.to_string()))
}

fn print_json(out: &mut dyn Write, value: &Json) -> Result<(), Failure> {
    writeln!(out, "{value}").map_err(Failure::runtime)
}

fn save(path: &Path, events: &[Event]) -> Result<(), Failure> {
    write_history(path, events).map_err(Failure::runtime)
}

fn explore(a: &ExploreArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    if a.backend != Backend::Sim {
        return Err(Failure::usage("explore runs on the sim backend only"));
    }
    let spec = spec_for(&a.type_name)?;
    let mutation = Mutation::parse(&a.mutation).ok_or_else(|| Failure::usage(format!("unknown mutation {}", a.mutation)))?;
    let mut cfg = ExplorationConfig::new(spec, a.procs, a.ops_per_proc);
    cfg.mode = match a.mode {
        ModeArg::Exhaustive => Mode::Exhaustive,
        ModeArg::Random => Mode::Random {
            samples: a.samples,
            seed: a.seed,
        },
    };
    cfg.crash_set = a.crash.iter().map(|&p| Pid(p)).collect();
    cfg.max_steps = a.max_steps;
    cfg.budget = a.budget;
    cfg.mutation = mutation;
    cfg.loop_budget = a.loop_budget;
    let explorer = Explorer::new(cfg).map_err(|e| Failure::usage(e.to_string()))?;
    let report = explorer.run();

    let mut summary = report.summary_json();
    let header = json!({
        "command": "explore",
        "type": a.type_name,
        "procs": a.procs,
        "ops_per_proc": a.ops_per_proc,
        "mode": match a.mode { ModeArg::Exhaustive => "exhaustive", ModeArg::Random => "random" },
        "mutation": mutation.as_str(),
        "crash": a.crash,
    });
    merge(&mut summary, header);

    let code = if !report.is_clean() {
        for v in &report.violations {
            let _ = writeln!(stderr, "violation {}: {} (recipe {:?})", v.invariant, v.message, v.recipe);
        }
        for c in &report.progress_cycles {
            let _ = writeln!(stderr, "progress cycle: prefix {:?}, cycle {:?}", c.prefix, c.cycle);
        }
        if let (Some(path), Some(v)) = (&a.out, report.violations.first()) {
            save(path, &v.history)?;
            summary["artifact"] = json!(path.display().to_string());
        }
        EXIT_VIOLATION
    } else if report.budget_exceeded || report.truncated > 0 || report.checks_inconclusive > 0 {
        EXIT_BUDGET
    } else {
        EXIT_OK
    };
    summary["ok"] = json!(code == EXIT_OK);
    print_json(stdout, &summary)?;
    Ok(code)
}

fn stress(a: &StressArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    if a.backend != Backend::Native {
        return Err(Failure::usage("stress runs on the native backend only"));
    }
    if a.procs == 0 || a.ops_per_proc == 0 {
        return Err(Failure::usage("procs and ops-per-proc must both be at least 1"));
    }
    let spec = spec_for(&a.type_name)?;
    let mut cfg = StressConfig::new(spec, a.procs, a.ops_per_proc);
    cfg.checked_segments = a.samples;
    cfg.segment_events = a.segment_events;
    let report = run_stress(&cfg).map_err(Failure::runtime)?;

    let mut summary = report.summary_json();
    merge(
        &mut summary,
        json!({"command": "stress", "type": a.type_name, "procs": a.procs, "ops_per_proc": a.ops_per_proc}),
    );
    let mut bad = report.failed_segments() > 0;
    if a.type_name == "counter" {
        let perm = report.responses_are_permutation();
        summary["responses_permutation"] = json!(perm);
        bad |= !perm;
    }
    let code = if bad {
        let _ = writeln!(stderr, "stress run produced a non-linearizable segment or bad responses");
        EXIT_VIOLATION
    } else if report.inconclusive_segments() > 0 {
        EXIT_BUDGET
    } else {
        EXIT_OK
    };
    summary["ok"] = json!(code == EXIT_OK);
    print_json(stdout, &summary)?;
    Ok(code)
}

fn check(a: &CheckArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<i32, Failure> {
    if a.backend != Backend::Sim {
        return Err(Failure::usage("check replays histories on the sim backend only"));
    }
    let spec = spec_for(&a.type_name)?;
    let events = read_history(&a.input).map_err(Failure::runtime)?;
    let history = project_history(&events).map_err(Failure::runtime)?;
    let verdict = check_linearizable_from(&history, &*spec, spec.initial_state(), a.budget).map_err(Failure::runtime)?;

    let mut summary = json!({
        "command": "check",
        "type": a.type_name,
        "events": events.len(),
        "operations": history.operations().len(),
    });
    let mut code = match &verdict {
        Verdict::Linearizable(w) => {
            summary["linearizable"] = json!(true);
            summary["witness"] = json!(w.order);
            EXIT_OK
        }
        Verdict::NotLinearizable { counterexample } => {
            summary["linearizable"] = json!(false);
            summary["counterexample_events"] = json!(counterexample.len());
            let _ = writeln!(stderr, "not linearizable; shortest bad prefix:");
            for e in counterexample.events() {
                let _ = writeln!(stderr, "  {e}");
            }
            if let Some(path) = &a.out {
                save(path, counterexample.events())?;
                summary["artifact"] = json!(path.display().to_string());
            }
            EXIT_VIOLATION
        }
        Verdict::BudgetExceeded { explored } => {
            summary["linearizable"] = Json::Null;
            summary["explored"] = json!(explored);
            EXIT_BUDGET
        }
    };
    if events.iter().any(Event::is_step) {
        let points = verify_linearization_points(&events, &*spec);
        summary["linearization_points"] = json!(points.is_ok());
        if let Err(e) = points {
            let _ = writeln!(stderr, "linearization points: {e}");
            code = EXIT_VIOLATION;
        }
    }
    summary["ok"] = json!(code == EXIT_OK);
    print_json(stdout, &summary)?;
    Ok(code)
}

/// Runs `ops` one after another on a single process and returns the full
/// event trace.
pub fn single_process_trace<M: Substrate>(
    mem: &M,
    spec: &dyn SequentialType,
    ops: &[OperationDescriptor],
) -> Result<Vec<Event>, UcError> {
    let shared = SharedObjects::init(mem, spec.initial_state())?;
    let mut layout = Layout::new(shared.clone());
    let mut ctx = new_process(mem, Pid(1))?;
    layout.add_cell(ctx.cell(), ctx.pid());
    let mut events = Vec::new();
    let push = |events: &mut Vec<Event>, body| {
        let seq = events.len() as u64 + 1;
        events.push(Event { seq, pid: Pid(1), body });
    };
    for op in ops {
        ctx.begin(op.clone())?;
        push(&mut events, EventBody::Invoke { op: op.clone() });
        loop {
            let report = ctx.step(mem, &shared, spec, Mutation::None)?;
            push(&mut events, layout.step_body(op, &report));
            if let Some(resp) = report.completed {
                push(&mut events, EventBody::Response { op: op.clone(), resp });
                break;
            }
        }
    }
    Ok(events)
}

/// One trace line with the step's source comment.
pub fn annotate(e: &Event) -> String {
    match &e.body {
        EventBody::Step { label, .. } => format!("{:<44} // {}", e.to_string(), label.comment()),
        _ => e.to_string(),
    }
}

fn demo(a: &DemoArgs, stdout: &mut dyn Write) -> Result<i32, Failure> {
    let spec = spec_for(&a.type_name)?;
    let ops: Vec<OperationDescriptor> = if a.ops.is_empty() {
        (0..a.ops_per_proc).map(|i| spec.workload_op(1, i)).collect()
    } else {
        a.ops
            .iter()
            .map(|s| parse_operation(s))
            .collect::<Result<_, _>>()
            .map_err(|e| Failure::usage(e.to_string()))?
    };
    for op in &ops {
        if !spec.operations().contains(&op.name.as_str()) {
            return Err(Failure::usage(format!("{} has no operation {}", spec.name(), op.name)));
        }
    }
    let events = match a.backend {
        Backend::Sim => single_process_trace(&SimMemory::new(), &*spec, &ops),
        Backend::Native => single_process_trace(&NativeMemory::with_capacity(8), &*spec, &ops),
    }
    .map_err(Failure::runtime)?;
    for e in &events {
        writeln!(stdout, "{}", annotate(e)).map_err(Failure::runtime)?;
    }
    if let Some(path) = &a.out {
        save(path, &events)?;
    }
    Ok(EXIT_OK)
}

fn merge(into: &mut Json, from: Json) {
    if let (Json::Object(dst), Json::Object(src)) = (into, from) {
        for (k, v) in src {
            dst.insert(k, v);
        }
    }
}
