use std::cell::{Cell, RefCell};
use std::hash::{Hash, Hasher};

use super::{
    check_replacement, Comparator, CounterHandle, MemoryError, ObjectHandle, Record, Substrate,
};

/// Single-threaded memory whose contents are plain values, so a snapshot is
/// just a clone. Driven one access at a time by the exploration scheduler.
#[derive(Debug, Default)]
pub struct SimMemory {
    objects: RefCell<Vec<Record>>,
    counters: RefCell<Vec<u64>>,
    accesses: Cell<u64>,
}

impl SimMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of shared-memory operations performed so far. Not part of the
    /// memory's identity.
    pub fn accesses(&self) -> u64 {
        self.accesses.get()
    }

    /// Snapshot of every object's current record, indexed by object id.
    pub fn objects(&self) -> Vec<Record> {
        self.objects.borrow().clone()
    }

    /// Current record of `obj` without counting an access.
    pub fn peek(&self, obj: ObjectHandle) -> Record {
        self.objects.borrow()[obj.id as usize].clone()
    }

    pub fn object_count(&self) -> usize {
        self.objects.borrow().len()
    }

    pub fn counter_value(&self, ctr: CounterHandle) -> u64 {
        self.counters.borrow()[ctr.0 as usize]
    }

    fn touch(&self) {
        self.accesses.set(self.accesses.get() + 1);
    }
}

impl Clone for SimMemory {
    fn clone(&self) -> Self {
        SimMemory {
            objects: RefCell::new(self.objects.borrow().clone()),
            counters: RefCell::new(self.counters.borrow().clone()),
            accesses: Cell::new(self.accesses.get()),
        }
    }
}

impl PartialEq for SimMemory {
    fn eq(&self, other: &Self) -> bool {
        *self.objects.borrow() == *other.objects.borrow()
            && *self.counters.borrow() == *other.counters.borrow()
    }
}

impl Eq for SimMemory {}

impl Hash for SimMemory {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.objects.borrow().hash(state);
        self.counters.borrow().hash(state);
    }
}

impl Substrate for SimMemory {
    fn alloc_object(&self, initial: Record) -> Result<ObjectHandle, MemoryError> {
        let mut objects = self.objects.borrow_mut();
        let handle = ObjectHandle {
            id: objects.len() as u32,
            arity: initial.arity() as u8,
        };
        objects.push(initial);
        Ok(handle)
    }

    fn read(&self, obj: ObjectHandle) -> Record {
        self.touch();
        self.objects.borrow()[obj.id as usize].clone()
    }

    fn write(&self, obj: ObjectHandle, record: Record) -> Result<(), MemoryError> {
        check_replacement(obj, &record)?;
        self.touch();
        self.objects.borrow_mut()[obj.id as usize] = record;
        Ok(())
    }

    fn gcas(
        &self,
        cmp: Comparator,
        obj: ObjectHandle,
        probe: &Record,
        replacement: Record,
    ) -> Result<bool, MemoryError> {
        check_replacement(obj, &replacement)?;
        cmp.check_probe(obj, probe)?;
        self.touch();
        let mut objects = self.objects.borrow_mut();
        let slot = &mut objects[obj.id as usize];
        if cmp.holds(slot, probe) {
            *slot = replacement;
            Ok(true)
        } else {
            Ok(false)
        }
    }

    fn alloc_counter(&self, initial: u64) -> Result<CounterHandle, MemoryError> {
        let mut counters = self.counters.borrow_mut();
        counters.push(initial);
        Ok(CounterHandle(counters.len() as u32 - 1))
    }

    fn fetch_and_increment(&self, ctr: CounterHandle) -> u64 {
        self.touch();
        let mut counters = self.counters.borrow_mut();
        let slot = &mut counters[ctr.0 as usize];
        let prev = *slot;
        *slot += 1;
        prev
    }
}
