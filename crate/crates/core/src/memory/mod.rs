//! Atomic shared objects: GCAS objects holding immutable [`Record`]s and
//! fetch-and-increment counters.
//!
//! Two backends implement [`Substrate`]: [`SimMemory`] is single-threaded and
//! is stepped by the exploration scheduler, [`NativeMemory`] is safe to share
//! across threads and emulates GCAS with a single-word CAS on a pointer to an
//! immutable record.

mod native;
mod sim;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::types::{OperationDescriptor, Value};

pub use native::NativeMemory;
pub use sim::SimMemory;

/// Distinguished values that can never be a response, a state, or an
/// operation name.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sentinel {
    /// "No response yet."
    Null,
    /// Response placeholder of the initial state record.
    Bottom,
    /// The fictitious operation that precedes every real one.
    Noop,
}

impl fmt::Display for Sentinel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sentinel::Null => "NULL",
            Sentinel::Bottom => "BOTTOM",
            Sentinel::Noop => "NOOP",
        })
    }
}

/// Identifier of a response cell, a two-field GCAS object.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellHandle(u32);

impl CellHandle {
    pub fn from_raw(id: u32) -> Self {
        CellHandle(id)
    }

    pub fn id(self) -> u32 {
        self.0
    }

    pub fn object(self) -> ObjectHandle {
        ObjectHandle { id: self.0, arity: 2 }
    }
}

/// One field of a [`Record`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FieldValue {
    Time(u64),
    Op(Arc<OperationDescriptor>),
    Resp(Value),
    State(Value),
    Cell(CellHandle),
    Sentinel(Sentinel),
}

impl FieldValue {
    pub const NULL: FieldValue = FieldValue::Sentinel(Sentinel::Null);
    pub const BOTTOM: FieldValue = FieldValue::Sentinel(Sentinel::Bottom);
    pub const NOOP: FieldValue = FieldValue::Sentinel(Sentinel::Noop);

    pub fn as_time(&self) -> Option<u64> {
        match self {
            FieldValue::Time(t) => Some(*t),
            _ => None,
        }
    }

    pub fn as_cell(&self) -> Option<CellHandle> {
        match self {
            FieldValue::Cell(c) => Some(*c),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, FieldValue::Sentinel(Sentinel::Null))
    }
}

impl fmt::Display for FieldValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FieldValue::Time(t) => write!(f, "{t}"),
            FieldValue::Op(op) => write!(f, "{op}"),
            FieldValue::Resp(v) | FieldValue::State(v) => write!(f, "{v}"),
            FieldValue::Cell(c) => write!(f, "h#{}", c.0),
            FieldValue::Sentinel(s) => write!(f, "{s}"),
        }
    }
}

pub const MAX_ARITY: usize = 4;

/// An immutable tuple of one to four fields.
///
/// Cloning shares the underlying storage; records are never mutated once
/// built, only superseded.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Record(Arc<[FieldValue]>);

impl Record {
    pub fn new(fields: Vec<FieldValue>) -> Result<Self, MemoryError> {
        if fields.is_empty() || fields.len() > MAX_ARITY {
            return Err(MemoryError::Arity { got: fields.len() });
        }
        Ok(Record(fields.into()))
    }

    /// A probe that carries only a time field, for [`Comparator::TimeGt`].
    pub fn time_probe(t: u64) -> Self {
        Record(Arc::from([FieldValue::Time(t)]))
    }

    pub fn fields(&self) -> &[FieldValue] {
        &self.0
    }

    pub fn field(&self, i: usize) -> Option<&FieldValue> {
        self.0.get(i)
    }

    pub fn arity(&self) -> usize {
        self.0.len()
    }

    /// The leading time field, if the record has one.
    pub fn time(&self) -> Option<u64> {
        self.0.first().and_then(FieldValue::as_time)
    }
}

impl fmt::Display for Record {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("(")?;
        for (i, field) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{field}")?;
        }
        if self.0.len() == 1 {
            f.write_str(",")?;
        }
        f.write_str(")")
    }
}

/// Identifier of a GCAS object together with the arity of the records it
/// holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectHandle {
    id: u32,
    arity: u8,
}

impl ObjectHandle {
    pub fn id(self) -> u32 {
        self.id
    }

    pub fn arity(self) -> usize {
        self.arity as usize
    }

    /// Views a two-field object as a response cell.
    pub fn as_cell(self) -> Option<CellHandle> {
        (self.arity == 2).then_some(CellHandle(self.id))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CounterHandle(u32);

impl CounterHandle {
    pub fn id(self) -> u32 {
        self.0
    }
}

/// The closed set of GCAS comparators.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Comparator {
    /// Every field structurally equal.
    Eq,
    /// `current.time > probe.time`; every other probe field is ignored.
    TimeGt,
}

impl Comparator {
    pub fn holds(self, current: &Record, probe: &Record) -> bool {
        match self {
            Comparator::Eq => current == probe,
            Comparator::TimeGt => match (current.time(), probe.time()) {
                (Some(cur), Some(p)) => cur > p,
                _ => false,
            },
        }
    }

    fn check_probe(self, obj: ObjectHandle, probe: &Record) -> Result<(), MemoryError> {
        match self {
            Comparator::Eq if probe.arity() != obj.arity() => Err(MemoryError::ArityMismatch {
                expected: obj.arity(),
                got: probe.arity(),
            }),
            Comparator::TimeGt if probe.time().is_none() => Err(MemoryError::MissingTime),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Eq => "=",
            Comparator::TimeGt => ">",
        })
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MemoryError {
    #[error("record arity {got} is outside 1..=4")]
    Arity { got: usize },
    #[error("record arity {got} does not match object arity {expected}")]
    ArityMismatch { expected: usize, got: usize },
    #[error("probe for the time comparator has no time field")]
    MissingTime,
    #[error("object slab exhausted ({capacity} objects)")]
    Exhausted { capacity: usize },
}

/// Shared-memory operations available to the universal construction.
///
/// Every method is a single atomic step.
pub trait Substrate {
    fn alloc_object(&self, initial: Record) -> Result<ObjectHandle, MemoryError>;

    fn read(&self, obj: ObjectHandle) -> Record;

    /// Unconditional store, used only by an owner resetting its own cell.
    fn write(&self, obj: ObjectHandle, record: Record) -> Result<(), MemoryError>;

    /// Replaces the value of `obj` with `replacement` iff
    /// `cmp(current, probe)` holds; returns whether it did.
    fn gcas(
        &self,
        cmp: Comparator,
        obj: ObjectHandle,
        probe: &Record,
        replacement: Record,
    ) -> Result<bool, MemoryError>;

    fn alloc_counter(&self, initial: u64) -> Result<CounterHandle, MemoryError>;

    fn fetch_and_increment(&self, ctr: CounterHandle) -> u64;
}

fn check_replacement(obj: ObjectHandle, replacement: &Record) -> Result<(), MemoryError> {
    if replacement.arity() != obj.arity() {
        return Err(MemoryError::ArityMismatch {
            expected: obj.arity(),
            got: replacement.arity(),
        });
    }
    Ok(())
}
