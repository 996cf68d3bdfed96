//! Hand-derived single-process trace of the first `inc` on a fresh counter.
//! The first loop iteration's L7 fails against the time-0 NOOP record, so the
//! announce happens at L13; the second iteration linearizes; the third copies
//! the response into the process's cell.

use gcas_core::history::Event;

pub const BOOTSTRAP_INC: [&str; 31] = [
    "invoke inc",
    "L2 C = 1",
    "L3 cell:1 = (1, NULL)",
    "L4 cell:1 = (1, NULL)",
    "L5 S = (0, 0, BOTTOM, h#0)",
    "L6 cell:0 = false",
    "L7 A = false",
    "L8 A = (0, NOOP, h#0)",
    "L9 cell:0 = (0, BOTTOM)",
    "L10 = false",
    "L13 A = true",
    "L4 cell:1 = (1, NULL)",
    "L5 S = (0, 0, BOTTOM, h#0)",
    "L6 cell:0 = false",
    "L7 A = false",
    "L8 A = (1, inc, h#3)",
    "L9 cell:1 = (1, NULL)",
    "L10 = true",
    "L11 = 0",
    "L12 S = true",
    "L4 cell:1 = (1, NULL)",
    "L5 S = (1, 1, 0, h#3)",
    "L6 cell:1 = true",
    "L7 A = false",
    "L8 A = (1, inc, h#3)",
    "L9 cell:1 = (1, 0)",
    "L10 = false",
    "L13 A = true",
    "L4 cell:1 = (1, 0)",
    "L14 cell:1 = (1, 0)",
    "inc -> 0",
];

/// Event display without the `#seq pid ` prefix.
pub fn strip(e: &Event) -> String {
    let s = e.to_string();
    let prefix = format!("#{} {} ", e.seq, e.pid);
    s.strip_prefix(&prefix).unwrap_or(&s).to_string()
}
