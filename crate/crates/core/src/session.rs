//! Sessions and the clause operations: assert, retract, erase and queries.
//!
//! A session is the unit that owns a transaction stack and a local generation
//! range. Operations outside a transaction commit immediately, each consuming
//! one global generation. Inside a transaction they are stamped in the
//! session's local range and logged for commit or rollback.

use std::sync::atomic::Ordering;

use crossbeam_epoch::{self as epoch, Guard};
use parking_lot::{Mutex, MutexGuard};

use crate::chain::{Chain, Node, NodePtr};
use crate::error::{Error, Result, TxnError};
use crate::generation::{Generation, SessionId, ViewContext, GEN_INFINITY, G_TBASE};
use crate::store::{ClauseRef, Store, StoreInner};
use crate::term::{Bindings, Pattern, Term};
use crate::txn::{ChangeEntry, ChangeKind, CommitInProgress, TxnState};

/// Per-session counters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SessionStats {
    pub commits: u64,
    pub rollbacks: u64,
    pub conflicts: u64,
    pub restarts: u64,
    pub snapshots: u64,
}

#[derive(Default)]
pub(crate) struct SessionState {
    pub txn: Option<TxnState>,
    /// Set between `begin_commit` and the final commit step. While set the
    /// session may read but not modify the database.
    pub committing: Option<CommitInProgress>,
    pub stats: SessionStats,
    pub last_commit: Option<Generation>,
    pub next_serial: u64,
}

/// A handle for issuing operations against a [`Store`].
///
/// A session is used by one thread at a time. It may move between threads
/// between operations.
pub struct Session {
    pub(crate) store: Store,
    pub(crate) id: SessionId,
    pub(crate) state: Mutex<SessionState>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session").field("id", &self.id).finish()
    }
}

impl Session {
    pub(crate) fn new(store: Store, id: SessionId) -> Self {
        Session { store, id, state: Mutex::new(SessionState::default()) }
    }

    pub(crate) fn state(&self) -> MutexGuard<'_, SessionState> {
        if cfg!(debug_assertions) {
            self.state.try_lock().expect("session used from two threads at once")
        } else {
            self.state.lock()
        }
    }

    pub(crate) fn inner(&self) -> &StoreInner {
        &self.store.inner
    }

    pub fn id(&self) -> SessionId {
        self.id
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn stats(&self) -> SessionStats {
        self.state().stats
    }

    /// Global generation assigned by this session's most recent commit,
    /// including auto-committed single operations.
    pub fn last_commit_generation(&self) -> Option<Generation> {
        self.state().last_commit
    }

    /// The view a goal started now would get.
    pub fn view(&self) -> ViewContext {
        match &self.state().txn {
            Some(txn) => txn.view(self.id),
            None => ViewContext::global(self.store.current_generation()),
        }
    }

    pub fn assertz(&self, term: Term) -> Result<ClauseRef> {
        self.assert(term, false)
    }

    pub fn asserta(&self, term: Term) -> Result<ClauseRef> {
        self.assert(term, true)
    }

    fn assert(&self, term: Term, front: bool) -> Result<ClauseRef> {
        let pred = term.indicator().ok_or_else(|| Error::Domain(format!("{term} is not callable")))?;
        let inner = self.inner();
        let mut st = self.state();
        if st.committing.is_some() {
            return Err(modification_in_constraint());
        }
        if let Some(txn) = st.txn.as_mut() {
            let stamp = txn.next_stamp(self.id)?;
            let (r, node) = inner.link(term, pred, stamp, front);
            txn.counter += 1;
            let kind = if front { ChangeKind::AssertA } else { ChangeKind::AssertZ };
            txn.log.push(ChangeEntry { kind, node, stamp });
            return Ok(r);
        }
        let _commit = inner.commit_lock.lock();
        let gen = next_global(inner)?;
        let (r, _) = inner.link(term, pred, gen, front);
        inner.generation.store(gen, Ordering::Release);
        st.last_commit = Some(Generation(gen));
        Ok(r)
    }

    /// Removes the first clause matching `pattern` visible to this session
    /// and returns it, or `None` when nothing matches.
    ///
    /// Inside a transaction, finding the clause already retracted by another
    /// session raises `transaction_error(conflict, name/arity)` and dooms the
    /// innermost transaction. Outside a transaction a lost race simply moves
    /// on to the next matching clause.
    pub fn retract(&self, pattern: &Pattern) -> Result<Option<Term>> {
        let pred =
            pattern.indicator().ok_or_else(|| Error::Domain(format!("cannot retract {pattern}: unknown predicate")))?;
        let inner = self.inner();
        let mut st = self.state();
        if st.committing.is_some() {
            return Err(modification_in_constraint());
        }
        let Some(chain) = inner.chain(&pred) else {
            return Ok(None);
        };
        let st = &mut *st;
        if let Some(txn) = st.txn.as_mut() {
            let ctx = txn.view(self.id);
            let guard = epoch::pin();
            let Some(node) = first_visible(inner, &chain, &ctx, &guard, |n| pattern.matches(&n.head).is_some()) else {
                return Ok(None);
            };
            let stamp = txn.next_stamp(self.id)?;
            if !node.claim(stamp) {
                let err = TxnError::Conflict(pred);
                txn.doom(err.clone());
                st.stats.conflicts += 1;
                return Err(err.into());
            }
            node.erased_by.store(self.id.0 + 1, Ordering::Relaxed);
            txn.counter += 1;
            txn.log.push(ChangeEntry { kind: ChangeKind::Retract, node: NodePtr(node), stamp });
            return Ok(Some(node.head.clone()));
        }
        loop {
            let ctx = ViewContext::global(self.store.current_generation());
            let guard = epoch::pin();
            let Some(node) = first_visible(inner, &chain, &ctx, &guard, |n| {
                n.died() == GEN_INFINITY && pattern.matches(&n.head).is_some()
            }) else {
                return Ok(None);
            };
            if let Some(gen) = self.retract_now(inner, node)? {
                st.last_commit = Some(gen);
                return Ok(Some(node.head.clone()));
            }
        }
    }

    /// Auto-commits the retraction of a clause outside any transaction.
    /// Returns `None` if someone else claimed it first.
    fn retract_now(&self, inner: &StoreInner, node: &Node) -> Result<Option<Generation>> {
        let _commit = inner.commit_lock.lock();
        let gen = next_global(inner)?;
        if !node.claim(gen) {
            return Ok(None);
        }
        node.erased_by.store(self.id.0 + 1, Ordering::Relaxed);
        inner.generation.store(gen, Ordering::Release);
        inner.dead_estimate.fetch_add(1, Ordering::Relaxed);
        Ok(Some(Generation(gen)))
    }

    /// Retracts a clause by reference. Returns `false` if the clause is not
    /// visible to this session.
    pub fn erase(&self, clause: ClauseRef) -> Result<bool> {
        let inner = self.inner();
        let mut st = self.state();
        if st.committing.is_some() {
            return Err(modification_in_constraint());
        }
        // Pinned before the lookup: a concurrent sweep that removes the ref
        // afterwards cannot free the node while we hold the guard.
        let _guard = epoch::pin();
        let Some(ptr) = inner.lookup(clause) else {
            return Ok(false);
        };
        let node = unsafe { ptr.get() };
        let st = &mut *st;
        if let Some(txn) = st.txn.as_mut() {
            if !txn.view(self.id).sees(node.born(), node.died()) {
                return Ok(false);
            }
            let stamp = txn.next_stamp(self.id)?;
            if !node.claim(stamp) {
                let err = TxnError::Conflict(node.pred.clone());
                txn.doom(err.clone());
                st.stats.conflicts += 1;
                return Err(err.into());
            }
            node.erased_by.store(self.id.0 + 1, Ordering::Relaxed);
            txn.counter += 1;
            txn.log.push(ChangeEntry { kind: ChangeKind::Retract, node: ptr, stamp });
            return Ok(true);
        }
        let ctx = ViewContext::global(self.store.current_generation());
        if !ctx.sees(node.born(), node.died()) {
            return Ok(false);
        }
        match self.retract_now(inner, node)? {
            Some(gen) => {
                st.last_commit = Some(gen);
                Ok(true)
            }
            None => Ok(false),
        }
    }

    /// Opens a cursor over the clauses matching `pattern`. The set of
    /// clauses it can yield is frozen now; later asserts and retracts, by
    /// this or any other session, do not change it.
    pub fn query(&self, pattern: &Pattern) -> Result<Cursor<'_>> {
        let pred =
            pattern.indicator().ok_or_else(|| Error::Domain(format!("cannot call {pattern}: unknown predicate")))?;
        let inner = self.inner();
        let chain = inner.chain(&pred);
        let st = self.state();
        let (slot, ctx) = match &st.txn {
            Some(txn) => (inner.register_at(txn.start), txn.view(self.id)),
            None => {
                let (slot, gen) = inner.register_current();
                (slot, ViewContext::global(gen))
            }
        };
        drop(st);
        Ok(Cursor { inner, chain, pattern: pattern.clone(), ctx, pos: Position::Start, slot: Some(slot) })
    }

    /// Runs a query to completion and returns the matching terms in order.
    pub fn query_all(&self, pattern: &Pattern) -> Result<Vec<Term>> {
        Ok(self.query(pattern)?.map(|row| row.term).collect())
    }
}

fn next_global(inner: &StoreInner) -> Result<u64> {
    let gen = inner.generation.load(Ordering::Relaxed) + 1;
    if gen >= G_TBASE {
        return Err(Error::Resource("global generations exhausted"));
    }
    Ok(gen)
}

fn modification_in_constraint() -> Error {
    Error::Usage("database modification inside a commit constraint".into())
}

fn first_visible<'g>(
    inner: &StoreInner,
    chain: &Chain,
    ctx: &ViewContext,
    guard: &'g Guard,
    accept: impl Fn(&Node) -> bool,
) -> Option<&'g Node> {
    let mut cur = chain.first(guard);
    while let Some(node) = unsafe { cur.as_ref() } {
        inner.poisoned_check(node);
        if ctx.sees(node.born(), node.died()) && accept(node) {
            return Some(node);
        }
        cur = node.next.load(Ordering::Acquire, guard);
    }
    None
}

/// One result of a query.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub clause: ClauseRef,
    pub term: Term,
    pub bindings: Bindings,
}

enum Position {
    Start,
    /// Last yielded node. It was visible to this cursor's view, and the
    /// view stays registered until the cursor finishes, so the collector
    /// cannot unlink it in the meantime.
    At(NodePtr),
    Done,
}

/// Iterator over the clauses visible to a frozen view.
pub struct Cursor<'s> {
    inner: &'s StoreInner,
    chain: Option<std::sync::Arc<Chain>>,
    pattern: Pattern,
    ctx: ViewContext,
    pos: Position,
    slot: Option<usize>,
}

impl Cursor<'_> {
    pub fn view(&self) -> ViewContext {
        self.ctx
    }

    fn finish(&mut self) {
        self.pos = Position::Done;
        if let Some(slot) = self.slot.take() {
            self.inner.deregister(slot);
        }
    }
}

impl Iterator for Cursor<'_> {
    type Item = Row;

    fn next(&mut self) -> Option<Row> {
        let Some(chain) = self.chain.as_ref() else {
            self.finish();
            return None;
        };
        let guard = epoch::pin();
        let mut cur = match self.pos {
            Position::Done => return None,
            Position::Start => chain.first(&guard),
            Position::At(p) => unsafe { p.get() }.next.load(Ordering::Acquire, &guard),
        };
        while let Some(node) = unsafe { cur.as_ref() } {
            self.inner.poisoned_check(node);
            if self.ctx.sees(node.born(), node.died()) {
                if let Some(bindings) = self.pattern.matches(&node.head) {
                    self.pos = Position::At(NodePtr(node));
                    return Some(Row { clause: ClauseRef(node.id), term: node.head.clone(), bindings });
                }
            }
            cur = node.next.load(Ordering::Acquire, &guard);
        }
        drop(guard);
        self.finish();
        None
    }
}

impl Drop for Cursor<'_> {
    fn drop(&mut self) {
        self.finish();
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        // A commit that already applied steps must run to completion;
        // otherwise the store would keep half-renumbered stamps.
        match &self.state.get_mut().committing {
            Some(c) if c.started => {
                let _ = self.finish_commit();
            }
            _ => self.state.get_mut().committing = None,
        }
        while self.state.get_mut().txn.is_some() {
            let _ = self.rollback();
        }
        self.store.inner.release_session(self.id);
    }
}
