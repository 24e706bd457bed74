//! Per-predicate clause chains.
//!
//! A chain is a singly linked list that readers walk without locking.
//! Writers (assert at either end, and the collector unlinking dead clauses)
//! serialize on a per-chain mutex. Unlinked nodes keep their `next` pointer,
//! so a reader parked on an unlinked node still reaches every node that was
//! linked when its traversal began. Memory is returned through the epoch
//! collector once no pinned traversal can reach it.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use crossbeam_epoch::{self as epoch, Atomic, Guard, Owned, Shared};
use parking_lot::Mutex;

use crate::generation::{GEN_INFINITY, G_TBASE};
use crate::term::{PredicateIndicator, Term};

pub(crate) struct Node {
    pub id: u64,
    pub pred: PredicateIndicator,
    pub head: Term,
    pub born: AtomicU64,
    pub died: AtomicU64,
    /// Session id + 1 of the last successful retract, 0 if none.
    pub erased_by: AtomicU64,
    pub next: Atomic<Node>,
    pub poisoned: AtomicBool,
}

impl Node {
    pub fn new(id: u64, pred: PredicateIndicator, head: Term, born: u64) -> Self {
        Node {
            id,
            pred,
            head,
            born: AtomicU64::new(born),
            died: AtomicU64::new(GEN_INFINITY),
            erased_by: AtomicU64::new(0),
            next: Atomic::null(),
            poisoned: AtomicBool::new(false),
        }
    }

    pub fn born(&self) -> u64 {
        self.born.load(Ordering::Acquire)
    }

    pub fn died(&self) -> u64 {
        self.died.load(Ordering::Acquire)
    }

    /// Claims the clause for retraction. Succeeds only if nobody retracted it
    /// before.
    pub fn claim(&self, gen: u64) -> bool {
        self.died.compare_exchange(GEN_INFINITY, gen, Ordering::AcqRel, Ordering::Acquire).is_ok()
    }

    /// Garbage with respect to the oldest generation any view can observe:
    /// died globally at or before it, or discarded by the transaction that
    /// created it (born == died in a local range).
    pub fn is_garbage(&self, oldest_active: u64) -> bool {
        let died = self.died();
        if died == GEN_INFINITY {
            return false;
        }
        if died < G_TBASE {
            died <= oldest_active
        } else {
            self.born() == died
        }
    }

    /// Dead for every present and future view once the views registered at
    /// the time of the call have gone.
    pub fn is_dead(&self) -> bool {
        let died = self.died();
        died != GEN_INFINITY && (died < G_TBASE || self.born() == died)
    }
}

/// Raw node address that may cross threads. Dereferencing is only valid
/// while the node cannot have been reclaimed; every use site states why.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub(crate) struct NodePtr(pub *const Node);

unsafe impl Send for NodePtr {}
unsafe impl Sync for NodePtr {}

impl NodePtr {
    /// # Safety
    /// The node must still be allocated: reachable under a pinned guard,
    /// referenced by a live change-log entry, or visible to a registered view.
    pub unsafe fn get<'a>(self) -> &'a Node {
        &*self.0
    }
}

pub(crate) struct Chain {
    head: Atomic<Node>,
    /// Last node. Only read and written with `writer` held.
    tail: Atomic<Node>,
    writer: Mutex<()>,
}

impl Chain {
    pub fn new() -> Self {
        Chain { head: Atomic::null(), tail: Atomic::null(), writer: Mutex::new(()) }
    }

    pub fn first<'g>(&self, guard: &'g Guard) -> Shared<'g, Node> {
        self.head.load(Ordering::Acquire, guard)
    }

    /// Links a fully initialized node at the front or back.
    pub fn link(&self, node: Node, front: bool) -> NodePtr {
        let guard = epoch::pin();
        let _w = self.writer.lock();
        let owned = Owned::new(node);
        if front {
            let head = self.head.load(Ordering::Relaxed, &guard);
            owned.next.store(head, Ordering::Relaxed);
            let shared = owned.into_shared(&guard);
            self.head.store(shared, Ordering::Release);
            if head.is_null() {
                self.tail.store(shared, Ordering::Relaxed);
            }
            NodePtr(shared.as_raw())
        } else {
            let shared = owned.into_shared(&guard);
            let tail = self.tail.load(Ordering::Relaxed, &guard);
            match unsafe { tail.as_ref() } {
                None => self.head.store(shared, Ordering::Release),
                Some(t) => t.next.store(shared, Ordering::Release),
            }
            self.tail.store(shared, Ordering::Relaxed);
            NodePtr(shared.as_raw())
        }
    }

    /// Unlinks every node for which `dead` holds, handing each unlinked node
    /// to `retire`. The writer lock is dropped every `batch` visited nodes so
    /// long chains never block asserts for long.
    pub fn sweep(
        &self,
        batch: usize,
        mut dead: impl FnMut(&Node) -> bool,
        mut retire: impl FnMut(NodePtr, &Guard),
    ) -> usize {
        let mut unlinked = 0;
        // `prev` is always a retained, linked node (or null for the head
        // position). Only the sweeper unlinks, so it stays valid across
        // yields even without a guard.
        let mut prev: *const Node = std::ptr::null();
        let mut guard = epoch::pin();
        let mut w = self.writer.lock();
        let mut cur = self.head.load(Ordering::Acquire, &guard);
        let mut visited = 0usize;
        while let Some(node) = unsafe { cur.as_ref() } {
            let next = node.next.load(Ordering::Acquire, &guard);
            if dead(node) {
                match unsafe { prev.as_ref() } {
                    None => self.head.store(next, Ordering::Release),
                    Some(p) => p.next.store(next, Ordering::Release),
                }
                if self.tail.load(Ordering::Relaxed, &guard) == cur {
                    self.tail.store(Shared::from(prev), Ordering::Relaxed);
                }
                retire(NodePtr(cur.as_raw()), &guard);
                unlinked += 1;
            } else {
                prev = cur.as_raw();
            }
            visited += 1;
            if visited.is_multiple_of(batch) && !prev.is_null() {
                drop(w);
                drop(guard);
                std::thread::yield_now();
                guard = epoch::pin();
                w = self.writer.lock();
                cur = unsafe { &*prev }.next.load(Ordering::Acquire, &guard);
            } else {
                cur = next;
            }
        }
        drop(w);
        unlinked
    }

    /// Frees every node. Requires exclusive access to the chain.
    pub unsafe fn free_all(&mut self) {
        let guard = epoch::unprotected();
        let mut cur = self.head.load(Ordering::Relaxed, guard);
        while !cur.is_null() {
            let next = cur.deref().next.load(Ordering::Relaxed, guard);
            drop(cur.into_owned());
            cur = next;
        }
        self.head.store(Shared::null(), Ordering::Relaxed);
        self.tail.store(Shared::null(), Ordering::Relaxed);
    }
}

/// Holds nodes that would have been freed when the store runs in poison
/// mode; they are marked and kept so traversals can assert they never reach
/// one.
#[derive(Default)]
pub(crate) struct Quarantine(pub parking_lot::Mutex<Vec<NodePtr>>);

impl Drop for Quarantine {
    fn drop(&mut self) {
        for p in self.0.get_mut().drain(..) {
            drop(unsafe { Box::from_raw(p.0 as *mut Node) });
        }
    }
}

/// Schedules physical reclamation of an unlinked node.
pub(crate) fn retire(node: NodePtr, guard: &Guard, reclaimed: &Arc<AtomicU64>, quarantine: Option<&Arc<Quarantine>>) {
    let reclaimed = reclaimed.clone();
    let addr = node.0 as usize;
    match quarantine {
        None => unsafe {
            guard.defer_unchecked(move || {
                drop(Owned::from_raw(addr as *mut Node));
                reclaimed.fetch_add(1, Ordering::Relaxed);
            });
        },
        Some(q) => {
            let q = q.clone();
            unsafe {
                guard.defer_unchecked(move || {
                    (*(addr as *const Node)).poisoned.store(true, Ordering::Release);
                    q.0.lock().push(NodePtr(addr as *const Node));
                    reclaimed.fetch_add(1, Ordering::Relaxed);
                });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn contents(chain: &Chain) -> Vec<Term> {
        let guard = epoch::pin();
        let mut out = Vec::new();
        let mut cur = chain.first(&guard);
        while let Some(n) = unsafe { cur.as_ref() } {
            out.push(n.head.clone());
            cur = n.next.load(Ordering::Acquire, &guard);
        }
        out
    }

    fn node(i: i64) -> Node {
        Node::new(i as u64, PredicateIndicator::new("f", 1), Term::compound("f", vec![Term::Int(i)]), 1)
    }

    #[test]
    fn prepend_and_append_order() {
        let chain = Chain::new();
        chain.link(node(2), false);
        chain.link(node(1), true);
        chain.link(node(3), false);
        chain.link(node(0), true);
        let ints: Vec<i64> = contents(&chain).iter().map(|t| t.args()[0].as_int().unwrap()).collect();
        assert_eq!(ints, vec![0, 1, 2, 3]);
        let mut c = chain;
        unsafe { c.free_all() };
    }

    #[test]
    fn sweep_fixes_head_and_tail() {
        let chain = Chain::new();
        for i in 0..10 {
            chain.link(node(i), false);
        }
        let reclaimed = Arc::new(AtomicU64::new(0));
        let n = chain.sweep(
            3,
            |n| matches!(n.head.args()[0].as_int(), Some(0 | 4 | 5 | 9)),
            |p, g| retire(p, g, &reclaimed, None),
        );
        assert_eq!(n, 4);
        chain.link(node(10), false);
        chain.link(node(-1), true);
        let ints: Vec<i64> = contents(&chain).iter().map(|t| t.args()[0].as_int().unwrap()).collect();
        assert_eq!(ints, vec![-1, 1, 2, 3, 6, 7, 8, 10]);
        let all = chain.sweep(2, |_| true, |p, g| retire(p, g, &reclaimed, None));
        assert_eq!(all, 8);
        assert!(contents(&chain).is_empty());
        chain.link(node(11), false);
        assert_eq!(contents(&chain).len(), 1);
        let mut c = chain;
        unsafe { c.free_all() };
    }
}
