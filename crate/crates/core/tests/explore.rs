use std::collections::BTreeSet;

use gcas_core::explore::monitor::{ANNOUNCE_PRIORITY, AT_MOST_ONCE_LINEARIZATION};
use gcas_core::explore::{
    detect_progress_cycles, explore_exhaustive, explore_random, ExplorationConfig, Explorer, Mode,
};
use gcas_core::{Mutation, Pid, Value};

fn cfg(ty: &str, procs: usize, ops: usize) -> ExplorationConfig {
    ExplorationConfig::for_type(ty, procs, ops).unwrap()
}

fn ints(vals: impl IntoIterator<Item = Value>) -> Vec<i64> {
    let mut out: Vec<i64> = vals
        .into_iter()
        .map(|v| match v {
            Value::Int(i) => i,
            other => panic!("unexpected response {other}"),
        })
        .collect();
    out.sort();
    out
}

#[test]
fn single_increment_is_one_schedule() {
    let r = explore_exhaustive(cfg("counter", 1, 1)).unwrap();
    assert_eq!(r.schedules_completed, 1);
    assert!(r.is_clean());
}

#[test]
fn two_increments_return_zero_and_one() {
    let mut seen = BTreeSet::new();
    let r = Explorer::new(cfg("counter", 2, 1)).unwrap().run_with(&mut |s, _| {
        seen.insert(ints(s.responses().into_iter().map(|(_, v)| v)));
    });
    assert!(r.is_clean(), "{}", r.summary_json());
    assert_eq!(seen, BTreeSet::from([vec![0, 1]]));
}

#[test]
fn survivor_completes_when_peer_crashes() {
    let mut c = cfg("counter", 2, 1);
    c.crash_set = vec![Pid(2)];
    let mut p1_responses = BTreeSet::new();
    let r = Explorer::new(c).unwrap().run_with(&mut |s, _| {
        let p1: Vec<Value> = s.responses().into_iter().filter(|(p, _)| *p == Pid(1)).map(|(_, v)| v).collect();
        assert_eq!(p1.len(), 1, "p1 must complete in every terminal state");
        p1_responses.insert(ints(p1));
    });
    assert!(r.is_clean(), "{}", r.summary_json());
    assert_eq!(p1_responses, BTreeSet::from([vec![0], vec![1]]));
}

#[test]
fn no_progress_cycles_at_two_by_two() {
    for ty in ["counter", "register"] {
        let r = detect_progress_cycles(cfg(ty, 2, 2)).unwrap();
        assert_eq!(r.progress_cycle_count, 0, "{ty}");
        assert!(!r.budget_exceeded && r.truncated == 0);
    }
}

#[test]
fn random_counter_responses_sum_to_triangle() {
    let mut c = cfg("counter", 3, 2);
    c.mode = Mode::Random { samples: 300, seed: 42 };
    let mut sums = BTreeSet::new();
    let r = Explorer::new(c).unwrap().run_with(&mut |s, _| {
        sums.insert(ints(s.responses().into_iter().map(|(_, v)| v)).iter().sum::<i64>());
    });
    assert!(r.is_clean(), "{}", r.summary_json());
    assert_eq!(sums, BTreeSet::from([15]));
}

#[test]
fn random_reports_repeat_for_a_seed() {
    let mut c = cfg("register", 3, 2);
    c.mode = Mode::Random { samples: 50, seed: 7 };
    let a = explore_random(c.clone()).unwrap().summary_json();
    let b = explore_random(c).unwrap().summary_json();
    assert_eq!(a, b);
}

#[test]
fn deleted_help_copy_double_linearizes() {
    let mut c = cfg("counter", 2, 1);
    c.mutation = Mutation::SkipHelpCopy;
    c.max_steps = 80;
    let r = explore_exhaustive(c).unwrap();
    assert!(r.has_violation(AT_MOST_ONCE_LINEARIZATION));
}

#[test]
fn deleted_help_copy_loops_forever_on_a_register() {
    let mut c = cfg("register", 1, 1);
    c.mutation = Mutation::SkipHelpCopy;
    let r = detect_progress_cycles(c).unwrap();
    assert!(r.progress_cycle_count > 0, "{}", r.summary_json());
}

#[test]
fn equality_announce_loses_priority() {
    let mut c = cfg("counter", 2, 1);
    c.mutation = Mutation::AnnounceWithEq;
    let r = explore_exhaustive(c).unwrap();
    assert!(r.has_violation(ANNOUNCE_PRIORITY), "{}", r.summary_json());
}
