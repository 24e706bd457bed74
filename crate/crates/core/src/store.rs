use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::Arc;

use crossbeam_epoch as epoch;
use dashmap::DashMap;
use parking_lot::Mutex;

use crate::chain::{self, Chain, Node, NodePtr, Quarantine};
use crate::error::{Error, Result};
use crate::generation::{Generation, SessionId, MAX_SESSIONS};
use crate::session::Session;
use crate::term::{PredicateIndicator, Term};

/// Handle to a stored clause, returned by the assert operations.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ClauseRef(pub u64);

/// Order of the steps in a commit. Only `Publish` is correct; the other
/// variant exists so the interleaving checker can demonstrate that it catches
/// a commit that becomes visible before all stamps are rewritten.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default)]
pub enum CommitOrder {
    /// Renumber every modification, then increment the global generation.
    #[default]
    Publish,
    /// Increment first, then renumber. Broken on purpose.
    #[doc(hidden)]
    IncrementFirst,
}

#[derive(Clone, Debug, Default)]
pub struct StoreConfig {
    /// Keep reclaimed nodes as poisoned tombstones and assert that no
    /// traversal ever reaches one.
    pub poison_reclaimed: bool,
    pub commit_order: CommitOrder,
}

/// Active view generations of open cursors and transactions.
#[derive(Default)]
pub(crate) struct Registry {
    slots: Vec<Option<u64>>,
    free: Vec<usize>,
}

impl Registry {
    fn insert(&mut self, gen: u64) -> usize {
        match self.free.pop() {
            Some(i) => {
                self.slots[i] = Some(gen);
                i
            }
            None => {
                self.slots.push(Some(gen));
                self.slots.len() - 1
            }
        }
    }

    fn remove(&mut self, slot: usize) {
        debug_assert!(self.slots[slot].is_some());
        self.slots[slot] = None;
        self.free.push(slot);
    }

    fn min(&self) -> Option<u64> {
        self.slots.iter().flatten().copied().min()
    }

    pub(crate) fn len(&self) -> usize {
        self.slots.len() - self.free.len()
    }
}

struct SessionIds {
    free: Vec<u64>,
    next: u64,
}

pub(crate) struct StoreInner {
    pub generation: AtomicU64,
    pub commit_lock: Arc<Mutex<()>>,
    pub registry: Mutex<Registry>,
    chains: DashMap<PredicateIndicator, Arc<Chain>>,
    refs: DashMap<u64, NodePtr>,
    next_clause: AtomicU64,
    sessions: Mutex<SessionIds>,
    pub config: StoreConfig,
    pub linked: AtomicUsize,
    pub peak_linked: AtomicUsize,
    /// Clauses that became garbage and have not been unlinked yet.
    pub dead_estimate: AtomicUsize,
    pub unlinked_total: AtomicU64,
    pub reclaimed: Arc<AtomicU64>,
    pub sweep_lock: Mutex<()>,
    pub collector_running: AtomicBool,
    quarantine: Option<Arc<Quarantine>>,
}

/// A thread-safe in-memory fact store. Cloning yields another handle to the
/// same store.
#[derive(Clone)]
pub struct Store {
    pub(crate) inner: Arc<StoreInner>,
}

impl Default for Store {
    fn default() -> Self {
        Store::new()
    }
}

impl std::fmt::Debug for Store {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Store")
            .field("generation", &self.current_generation())
            .field("linked", &self.linked_clauses())
            .finish()
    }
}

impl Store {
    pub fn new() -> Store {
        Store::with_config(StoreConfig::default())
    }

    pub fn with_config(config: StoreConfig) -> Store {
        let quarantine = config.poison_reclaimed.then(|| Arc::new(Quarantine::default()));
        Store {
            inner: Arc::new(StoreInner {
                generation: AtomicU64::new(1),
                commit_lock: Arc::new(Mutex::new(())),
                registry: Mutex::new(Registry::default()),
                chains: DashMap::new(),
                refs: DashMap::new(),
                next_clause: AtomicU64::new(1),
                sessions: Mutex::new(SessionIds { free: Vec::new(), next: 0 }),
                config,
                linked: AtomicUsize::new(0),
                peak_linked: AtomicUsize::new(0),
                dead_estimate: AtomicUsize::new(0),
                unlinked_total: AtomicU64::new(0),
                reclaimed: Arc::new(AtomicU64::new(0)),
                sweep_lock: Mutex::new(()),
                collector_running: AtomicBool::new(false),
                quarantine,
            }),
        }
    }

    /// Latest committed global generation.
    pub fn current_generation(&self) -> Generation {
        Generation(self.inner.generation.load(Ordering::Acquire))
    }

    /// Opens a session. Each session owns a transaction-local generation
    /// range for as long as it lives.
    pub fn session(&self) -> Result<Session> {
        let id = {
            let mut ids = self.inner.sessions.lock();
            match ids.free.pop() {
                Some(id) => id,
                None if ids.next < MAX_SESSIONS => {
                    ids.next += 1;
                    ids.next - 1
                }
                None => return Err(Error::Resource("session ranges exhausted")),
            }
        };
        Ok(Session::new(self.clone(), SessionId(id)))
    }

    pub fn predicates(&self) -> Vec<PredicateIndicator> {
        let mut out: Vec<_> = self.inner.chains.iter().map(|e| e.key().clone()).collect();
        out.sort();
        out
    }

    pub fn config(&self) -> &StoreConfig {
        &self.inner.config
    }

    /// Clauses currently linked into chains, dead or alive.
    pub fn linked_clauses(&self) -> usize {
        self.inner.linked.load(Ordering::Relaxed)
    }

    pub fn peak_linked_clauses(&self) -> usize {
        self.inner.peak_linked.load(Ordering::Relaxed)
    }

    /// Counts linked clauses that no present or future view can see once
    /// the currently registered views are gone. Walks every chain.
    pub fn dead_linked_clauses(&self) -> usize {
        let guard = epoch::pin();
        let mut n = 0;
        for chain in self.inner.chain_list() {
            let mut cur = chain.first(&guard);
            while let Some(node) = unsafe { cur.as_ref() } {
                if node.is_dead() {
                    n += 1;
                }
                cur = node.next.load(Ordering::Acquire, &guard);
            }
        }
        n
    }

    /// Number of registered views (open cursors and transactions).
    pub fn active_views(&self) -> usize {
        self.inner.registry.lock().len()
    }
}

impl StoreInner {
    pub fn chain(&self, pred: &PredicateIndicator) -> Option<Arc<Chain>> {
        self.chains.get(pred).map(|c| c.clone())
    }

    pub fn chain_or_create(&self, pred: &PredicateIndicator) -> Arc<Chain> {
        if let Some(c) = self.chains.get(pred) {
            return c.clone();
        }
        self.chains.entry(pred.clone()).or_insert_with(|| Arc::new(Chain::new())).clone()
    }

    pub fn chain_list(&self) -> Vec<Arc<Chain>> {
        self.chains.iter().map(|e| e.value().clone()).collect()
    }

    /// Creates and links a clause stamped `born`.
    pub fn link(&self, term: Term, pred: PredicateIndicator, born: u64, front: bool) -> (ClauseRef, NodePtr) {
        let chain = self.chain_or_create(&pred);
        let id = self.next_clause.fetch_add(1, Ordering::Relaxed);
        // The node is invisible to every other view until the caller
        // publishes it, so it cannot be unlinked before the ref is recorded.
        let ptr = chain.link(Node::new(id, pred, term, born), front);
        self.refs.insert(id, ptr);
        let now = self.linked.fetch_add(1, Ordering::Relaxed) + 1;
        self.peak_linked.fetch_max(now, Ordering::Relaxed);
        (ClauseRef(id), ptr)
    }

    pub fn lookup(&self, r: ClauseRef) -> Option<NodePtr> {
        self.refs.get(&r.0).map(|p| *p)
    }

    /// Registers a view at the current generation; reading the generation
    /// and registering happen atomically with respect to the collector.
    pub fn register_current(&self) -> (usize, Generation) {
        let mut reg = self.registry.lock();
        let g = self.generation.load(Ordering::Acquire);
        (reg.insert(g), Generation(g))
    }

    pub fn register_at(&self, gen: Generation) -> usize {
        self.registry.lock().insert(gen.0)
    }

    pub fn deregister(&self, slot: usize) {
        self.registry.lock().remove(slot);
    }

    pub fn oldest_active(&self) -> Generation {
        let reg = self.registry.lock();
        let current = self.generation.load(Ordering::Acquire);
        Generation(reg.min().map_or(current, |m| m.min(current)))
    }

    pub fn poisoned_check(&self, node: &Node) {
        if self.quarantine.is_some() {
            assert!(!node.poisoned.load(Ordering::Acquire), "traversal reached reclaimed clause {}", node.head);
        }
    }

    pub fn sweep_chains(&self, oldest: Generation) -> usize {
        let mut total = 0;
        for chain in self.chain_list() {
            total += chain.sweep(
                256,
                |n| n.is_garbage(oldest.0),
                |p, guard| {
                    let id = unsafe { p.get() }.id;
                    self.refs.remove(&id);
                    chain::retire(p, guard, &self.reclaimed, self.quarantine.as_ref());
                },
            );
        }
        self.linked.fetch_sub(total, Ordering::Relaxed);
        let _ =
            self.dead_estimate.fetch_update(Ordering::Relaxed, Ordering::Relaxed, |d| Some(d.saturating_sub(total)));
        self.unlinked_total.fetch_add(total as u64, Ordering::Relaxed);
        total
    }

    pub fn release_session(&self, id: SessionId) {
        self.sessions.lock().free.push(id.0);
    }
}

impl Drop for StoreInner {
    fn drop(&mut self) {
        for mut entry in self.chains.iter_mut() {
            if let Some(chain) = Arc::get_mut(entry.value_mut()) {
                unsafe { chain.free_all() };
            }
        }
    }
}
