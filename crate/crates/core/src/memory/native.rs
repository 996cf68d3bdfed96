use std::ptr;
use std::sync::atomic::{AtomicPtr, AtomicU64, AtomicUsize, Ordering};
use std::sync::OnceLock;

use super::{
    check_replacement, Comparator, CounterHandle, MemoryError, ObjectHandle, Record, Substrate,
};

const DEFAULT_CAPACITY: usize = 4096;
const COUNTER_CAPACITY: usize = 64;

struct Node {
    record: Record,
    next_retired: AtomicPtr<Node>,
}

impl Node {
    fn boxed(record: Record) -> *mut Node {
        Box::into_raw(Box::new(Node {
            record,
            next_retired: AtomicPtr::new(ptr::null_mut()),
        }))
    }
}

/// One GCAS object: a swappable pointer to an immutable record node.
///
/// Superseded nodes go onto a push-only retired list and are freed only when
/// the memory is dropped, so a loaded pointer stays valid for the lifetime of
/// the run and pointer identity cannot be recycled (no ABA).
struct Slot {
    current: AtomicPtr<Node>,
    retired: AtomicPtr<Node>,
}

impl Slot {
    fn new(initial: Record) -> Self {
        Slot {
            current: AtomicPtr::new(Node::boxed(initial)),
            retired: AtomicPtr::new(ptr::null_mut()),
        }
    }

    fn load(&self) -> &Record {
        // SAFETY: nodes reachable from `current` are freed only in `Drop`.
        unsafe { &(*self.current.load(Ordering::Acquire)).record }
    }

    fn retire(&self, node: *mut Node) {
        let mut head = self.retired.load(Ordering::Relaxed);
        loop {
            // SAFETY: the caller unlinked `node` from `current`; only it pushes it.
            unsafe { (*node).next_retired.store(head, Ordering::Relaxed) };
            match self
                .retired
                .compare_exchange_weak(head, node, Ordering::Release, Ordering::Relaxed)
            {
                Ok(_) => return,
                Err(actual) => head = actual,
            }
        }
    }

    fn install(&self, expected: *mut Node, new: *mut Node) -> bool {
        if self
            .current
            .compare_exchange(expected, new, Ordering::AcqRel, Ordering::Acquire)
            .is_ok()
        {
            self.retire(expected);
            true
        } else {
            false
        }
    }
}

impl Drop for Slot {
    fn drop(&mut self) {
        // SAFETY: `&mut self` means no reader remains; every node is owned by
        // exactly one of `current` or the retired list.
        unsafe {
            drop(Box::from_raw(*self.current.get_mut()));
            let mut node = *self.retired.get_mut();
            while !node.is_null() {
                let next = (*node).next_retired.load(Ordering::Relaxed);
                drop(Box::from_raw(node));
                node = next;
            }
        }
    }
}

/// Thread-safe memory backed by a fixed-capacity slab of GCAS objects.
///
/// `gcas` is lock-free: a failed pointer CAS means another GCAS succeeded.
pub struct NativeMemory {
    objects: Box<[OnceLock<Slot>]>,
    next_object: AtomicUsize,
    counters: Box<[OnceLock<AtomicU64>]>,
    next_counter: AtomicUsize,
}

// SAFETY: slots hold raw pointers to heap nodes that are only dereferenced
// while the memory is alive and are never mutated after publication.
unsafe impl Send for NativeMemory {}
unsafe impl Sync for NativeMemory {}

impl Default for NativeMemory {
    fn default() -> Self {
        Self::new()
    }
}

impl NativeMemory {
    pub fn new() -> Self {
        Self::with_capacity(DEFAULT_CAPACITY)
    }

    pub fn with_capacity(objects: usize) -> Self {
        NativeMemory {
            objects: (0..objects).map(|_| OnceLock::new()).collect(),
            next_object: AtomicUsize::new(0),
            counters: (0..COUNTER_CAPACITY).map(|_| OnceLock::new()).collect(),
            next_counter: AtomicUsize::new(0),
        }
    }

    pub fn capacity(&self) -> usize {
        self.objects.len()
    }

    fn slot(&self, obj: ObjectHandle) -> &Slot {
        self.objects[obj.id as usize]
            .get()
            .expect("handle refers to an allocated object")
    }
}

impl Substrate for NativeMemory {
    fn alloc_object(&self, initial: Record) -> Result<ObjectHandle, MemoryError> {
        let id = self.next_object.fetch_add(1, Ordering::Relaxed);
        let Some(cell) = self.objects.get(id) else {
            return Err(MemoryError::Exhausted {
                capacity: self.objects.len(),
            });
        };
        let arity = initial.arity() as u8;
        if cell.set(Slot::new(initial)).is_err() {
            unreachable!("object ids are handed out once");
        }
        Ok(ObjectHandle {
            id: id as u32,
            arity,
        })
    }

    fn read(&self, obj: ObjectHandle) -> Record {
        self.slot(obj).load().clone()
    }

    fn write(&self, obj: ObjectHandle, record: Record) -> Result<(), MemoryError> {
        check_replacement(obj, &record)?;
        let slot = self.slot(obj);
        let old = slot.current.swap(Node::boxed(record), Ordering::AcqRel);
        slot.retire(old);
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
        let slot = self.slot(obj);
        let mut replacement = Some(replacement);
        let mut fresh: *mut Node = ptr::null_mut();
        loop {
            let cur = slot.current.load(Ordering::Acquire);
            // SAFETY: see `Slot::load`.
            if !cmp.holds(unsafe { &(*cur).record }, probe) {
                if !fresh.is_null() {
                    // SAFETY: `fresh` was never published.
                    drop(unsafe { Box::from_raw(fresh) });
                }
                return Ok(false);
            }
            if fresh.is_null() {
                fresh = Node::boxed(replacement.take().expect("allocated once"));
            }
            if slot.install(cur, fresh) {
                return Ok(true);
            }
        }
    }

    fn alloc_counter(&self, initial: u64) -> Result<CounterHandle, MemoryError> {
        let id = self.next_counter.fetch_add(1, Ordering::Relaxed);
        let Some(cell) = self.counters.get(id) else {
            return Err(MemoryError::Exhausted {
                capacity: self.counters.len(),
            });
        };
        if cell.set(AtomicU64::new(initial)).is_err() {
            unreachable!("counter ids are handed out once");
        }
        Ok(CounterHandle(id as u32))
    }

    fn fetch_and_increment(&self, ctr: CounterHandle) -> u64 {
        self.counters[ctr.0 as usize]
            .get()
            .expect("handle refers to an allocated counter")
            .fetch_add(1, Ordering::AcqRel)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::FieldValue;
    use std::sync::Arc;
    use std::thread;

    #[test]
    fn exhausted_slab() {
        let mem = NativeMemory::with_capacity(1);
        mem.alloc_object(Record::time_probe(0)).unwrap();
        assert_eq!(
            mem.alloc_object(Record::time_probe(0)),
            Err(MemoryError::Exhausted { capacity: 1 })
        );
    }

    #[test]
    fn concurrent_fetch_and_increment_is_an_initial_segment() {
        let mem = Arc::new(NativeMemory::new());
        let c = mem.alloc_counter(1).unwrap();
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let mem = Arc::clone(&mem);
                thread::spawn(move || (0..1000).map(|_| mem.fetch_and_increment(c)).collect::<Vec<_>>())
            })
            .collect();
        let mut all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
        all.sort_unstable();
        assert_eq!(all, (1..=4000).collect::<Vec<_>>());
    }

    #[test]
    fn concurrent_increments_through_gcas_are_not_lost() {
        let mem = Arc::new(NativeMemory::new());
        let obj = mem.alloc_object(Record::time_probe(0)).unwrap();
        let threads = 4;
        let per_thread = 2000;
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let mem = Arc::clone(&mem);
                thread::spawn(move || {
                    for _ in 0..per_thread {
                        loop {
                            let cur = mem.read(obj);
                            let next = Record::new(vec![FieldValue::Time(cur.time().unwrap() + 1)]).unwrap();
                            if mem.gcas(Comparator::Eq, obj, &cur, next).unwrap() {
                                break;
                            }
                        }
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        assert_eq!(mem.read(obj).time(), Some(threads * per_thread));
    }
}
