//! Generalized compare-and-swap (GCAS), a wait-free universal construction
//! built from GCAS and fetch-and-increment, and the tooling used to check it:
//! a deterministic interleaving explorer with invariant monitors and
//! progress-cycle detection, and a linearizability checker.

pub mod checker;
pub mod cli;
pub mod construction;
pub mod explore;
pub mod history;
pub mod memory;
pub mod stress;
pub mod types;

pub use construction::{do_op, new_process, Mutation, Pid, ProcessContext, StepLabel, UniversalObject};
pub use memory::{Comparator, FieldValue, NativeMemory, Record, Sentinel, SimMemory, Substrate};
pub use types::{builtin, run_sequential, OperationDescriptor, SequentialType, TypeSpec, Value};
