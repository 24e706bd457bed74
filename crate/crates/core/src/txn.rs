//! Transactions: nesting, commit, rollback, constraints and restart.
//!
//! A transaction takes its view generation when it starts. Its changes are
//! stamped with local generations in the session's private range and
//! recorded in a change log shared by all nesting levels; each level only
//! remembers where its part of the log begins.
//!
//! Committing the outermost transaction takes the store-wide commit lock,
//! renumbers every logged change to `G + 1` and only then publishes `G + 1`
//! as the new global generation. The commit is split into steps so that a
//! scheduler can interleave other sessions between them.

use std::collections::{HashSet, VecDeque};
use std::sync::atomic::Ordering;
use std::time::Duration;

use parking_lot::lock_api::ArcMutexGuard;
use parking_lot::RawMutex;
use rand::Rng;

use crate::chain::NodePtr;
use crate::error::{Error, Result, TxnError};
use crate::generation::{Generation, LocalView, SessionId, ViewContext, GEN_INFINITY, G_TBASE, G_TMAX};
use crate::session::Session;
use crate::store::CommitOrder;
use crate::term::Term;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum TxnKind {
    /// Changes are committed at the end.
    Transaction,
    /// Changes are always discarded at the end.
    Snapshot,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub(crate) enum ChangeKind {
    AssertA,
    AssertZ,
    Retract,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ChangeEntry {
    pub kind: ChangeKind,
    /// Log entries keep their node allocated: until the entry is committed
    /// or rolled back the node is neither a local sentinel nor globally dead.
    pub node: NodePtr,
    /// Local generation written by this change.
    pub stamp: u64,
}

pub(crate) struct Frame {
    kind: TxnKind,
    marker: usize,
    id: Option<Term>,
    serial: u64,
    doomed: Option<TxnError>,
}

pub(crate) struct TxnState {
    pub start: Generation,
    /// Local modifications made so far by the outermost transaction.
    pub counter: u64,
    pub log: Vec<ChangeEntry>,
    frames: Vec<Frame>,
    slot: usize,
}

impl TxnState {
    pub fn view(&self, sid: SessionId) -> ViewContext {
        ViewContext { view_gen: self.start, txn: Some(LocalView { session: sid, current: sid.base() + self.counter }) }
    }

    /// Stamp for the next modification. The caller bumps `counter` once the
    /// modification succeeded.
    pub fn next_stamp(&self, sid: SessionId) -> Result<u64> {
        if self.counter + 1 >= G_TMAX {
            return Err(Error::Resource("transaction generations exhausted"));
        }
        Ok(sid.base() + self.counter + 1)
    }

    /// Marks the innermost transaction so it can no longer commit.
    pub fn doom(&mut self, err: TxnError) {
        if let Some(f) = self.frames.last_mut() {
            f.doomed.get_or_insert(err);
        }
    }
}

enum CommitAction {
    /// Rewrite a local birth stamp to the commit generation.
    Birth(NodePtr, u64),
    /// Rewrite a local death stamp to the commit generation.
    Death(NodePtr, u64, u64),
    /// Make a clause asserted and retracted by this transaction invisible
    /// to everyone.
    Discard(NodePtr),
    Publish(u64),
}

pub(crate) struct CommitInProgress {
    _lock: Option<ArcMutexGuard<RawMutex, ()>>,
    actions: VecDeque<CommitAction>,
    target: Option<Generation>,
    pub(crate) started: bool,
}

/// Progress of a commit driven one step at a time.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum CommitProgress {
    Pending,
    /// The transaction is closed. Carries the new global generation if the
    /// commit changed the database.
    Done(Option<Generation>),
}

/// Options for [`Session::transaction_with_options`].
#[derive(Clone, Debug, Default)]
pub struct TxnOptions {
    /// Re-run the goal after a conflict or failed constraint. Only honored
    /// by an outermost transaction.
    pub restart: bool,
    pub id: Option<Term>,
    /// Upper bound on restarts; unbounded if `None`.
    pub max_retries: Option<u32>,
}

impl TxnOptions {
    pub fn restart(mut self, on: bool) -> Self {
        self.restart = on;
        self
    }

    pub fn id(mut self, id: Term) -> Self {
        self.id = Some(id);
        self
    }

    pub fn max_retries(mut self, n: u32) -> Self {
        self.max_retries = Some(n);
        self
    }
}

/// Identifies one transaction of one session.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct TxnId {
    pub session: SessionId,
    pub serial: u64,
}

#[derive(Clone, PartialEq, Debug)]
pub enum Modification {
    Asserta(Term),
    Assertz(Term),
    Retract(Term),
}

impl Modification {
    pub fn to_term(&self) -> Term {
        match self {
            Modification::Asserta(t) => Term::compound("asserta", vec![t.clone()]),
            Modification::Assertz(t) => Term::compound("assertz", vec![t.clone()]),
            Modification::Retract(t) => Term::compound("retract", vec![t.clone()]),
        }
    }
}

#[derive(Clone, PartialEq, Debug)]
pub enum TxnProperty {
    /// Nesting depth, 1 for the outermost transaction.
    Level(usize),
    Modified(bool),
    Modifications(Vec<Modification>),
    Id(Term),
}

const BACKOFF_START: Duration = Duration::from_micros(100);
const BACKOFF_CAP: Duration = Duration::from_millis(10);

/// Randomized exponential backoff before restart number `attempt` (from 1).
pub fn backoff_delay(attempt: u32, rng: &mut impl Rng) -> Duration {
    let shift = attempt.saturating_sub(1).min(16);
    let d = (BACKOFF_START * (1u32 << shift)).min(BACKOFF_CAP);
    rng.gen_range(d / 2..=d)
}

/// Effective changes of a log span: an assert and a retract of the same
/// clause cancel out.
fn net_changes(span: &[ChangeEntry]) -> (Vec<ChangeEntry>, Vec<NodePtr>) {
    let retracted: HashSet<NodePtr> = span.iter().filter(|e| e.kind == ChangeKind::Retract).map(|e| e.node).collect();
    let asserted: HashSet<NodePtr> = span.iter().filter(|e| e.kind != ChangeKind::Retract).map(|e| e.node).collect();
    let mut effective = Vec::new();
    let mut cancelled = Vec::new();
    for e in span {
        match e.kind {
            ChangeKind::Retract if asserted.contains(&e.node) => {}
            ChangeKind::Retract => effective.push(*e),
            _ if retracted.contains(&e.node) => cancelled.push(e.node),
            _ => effective.push(*e),
        }
    }
    (effective, cancelled)
}

impl Session {
    /// Current nesting depth, 0 outside any transaction.
    pub fn level(&self) -> usize {
        self.state().txn.as_ref().map_or(0, |t| t.frames.len())
    }

    pub fn in_transaction(&self) -> bool {
        self.state().txn.is_some()
    }

    /// True between `begin_commit` and the final commit step.
    pub fn is_committing(&self) -> bool {
        self.state().committing.is_some()
    }

    /// Generation a pending commit will publish, if it changes anything.
    pub fn pending_commit_generation(&self) -> Option<Generation> {
        self.state().committing.as_ref().and_then(|c| c.target)
    }

    /// Opens a transaction or snapshot, nested in the current one if any.
    /// Returns the new nesting depth.
    pub fn begin(&mut self, kind: TxnKind, id: Option<Term>) -> Result<usize> {
        let inner = self.store.inner.clone();
        let st = self.state.get_mut();
        if st.committing.is_some() {
            return Err(Error::Usage("cannot start a transaction inside a commit constraint".into()));
        }
        let serial = st.next_serial;
        st.next_serial += 1;
        if kind == TxnKind::Snapshot {
            st.stats.snapshots += 1;
        }
        match st.txn.as_mut() {
            Some(txn) => {
                let marker = txn.log.len();
                txn.frames.push(Frame { kind, marker, id, serial, doomed: None });
                Ok(txn.frames.len())
            }
            None => {
                let (slot, start) = inner.register_current();
                st.txn = Some(TxnState {
                    start,
                    counter: 0,
                    log: Vec::new(),
                    frames: vec![Frame { kind, marker: 0, id, serial, doomed: None }],
                    slot,
                });
                Ok(1)
            }
        }
    }

    /// Undoes the innermost transaction's changes and closes it.
    pub fn rollback(&mut self) -> Result<()> {
        let inner = self.store.inner.clone();
        let st = self.state.get_mut();
        if let Some(c) = &st.committing {
            if c.started {
                return Err(Error::Usage("rollback of a partially applied commit".into()));
            }
            st.committing = None;
        }
        let Some(txn) = st.txn.as_mut() else {
            return Err(Error::Usage("rollback outside a transaction".into()));
        };
        let frame = txn.frames.pop().expect("transaction without frames");
        for e in txn.log.drain(frame.marker..).rev() {
            // SAFETY: see `ChangeEntry::node`.
            let node = unsafe { e.node.get() };
            match e.kind {
                ChangeKind::Retract => {
                    let restored =
                        node.died.compare_exchange(e.stamp, GEN_INFINITY, Ordering::AcqRel, Ordering::Acquire).is_ok();
                    assert!(restored, "retracted clause changed under its transaction");
                }
                ChangeKind::AssertA | ChangeKind::AssertZ => {
                    node.died.store(node.born(), Ordering::Release);
                    inner.dead_estimate.fetch_add(1, Ordering::Relaxed);
                }
            }
        }
        if txn.frames.is_empty() {
            inner.deregister(txn.slot);
            st.txn = None;
        }
        st.stats.rollbacks += 1;
        Ok(())
    }

    /// Starts committing the innermost transaction. Takes the commit lock if
    /// the commit changes the database or a constraint is going to run.
    ///
    /// A transaction doomed by a conflict is rolled back and its error
    /// returned.
    pub fn begin_commit(&mut self, with_constraint: bool) -> Result<()> {
        let inner = self.store.inner.clone();
        let st = self.state.get_mut();
        if st.committing.is_some() {
            return Err(Error::Usage("commit already in progress".into()));
        }
        let Some(txn) = st.txn.as_ref() else {
            return Err(Error::Usage("commit outside a transaction".into()));
        };
        let frame = txn.frames.last().expect("transaction without frames");
        if frame.kind == TxnKind::Snapshot {
            return Err(Error::Usage("a snapshot cannot be committed".into()));
        }
        if let Some(err) = frame.doomed.clone() {
            self.rollback()?;
            return Err(err.into());
        }
        let outermost = txn.frames.len() == 1;
        let publishes = outermost && !txn.log.is_empty();
        let lock = (with_constraint || publishes).then(|| inner.commit_lock.lock_arc());
        let mut actions = VecDeque::new();
        let mut target = None;
        if publishes {
            let (effective, cancelled) = net_changes(&txn.log);
            let mut renumber: Vec<CommitAction> = Vec::new();
            if !effective.is_empty() {
                let g = inner.generation.load(Ordering::Relaxed) + 1;
                if g >= G_TBASE {
                    drop(lock);
                    return Err(Error::Resource("global generations exhausted"));
                }
                target = Some(Generation(g));
                for e in &effective {
                    renumber.push(match e.kind {
                        ChangeKind::Retract => CommitAction::Death(e.node, e.stamp, g),
                        _ => CommitAction::Birth(e.node, g),
                    });
                }
            }
            let discards = cancelled.into_iter().map(CommitAction::Discard);
            match (target, inner.config.commit_order) {
                (Some(Generation(g)), CommitOrder::IncrementFirst) => {
                    actions.push_back(CommitAction::Publish(g));
                    actions.extend(renumber);
                    actions.extend(discards);
                }
                (Some(Generation(g)), CommitOrder::Publish) => {
                    actions.extend(renumber);
                    actions.extend(discards);
                    actions.push_back(CommitAction::Publish(g));
                }
                (None, _) => actions.extend(discards),
            }
        }
        let st = self.state.get_mut();
        st.committing = Some(CommitInProgress { _lock: lock, actions, target, started: false });
        Ok(())
    }

    /// Abandons a commit before any step ran and rolls the transaction back.
    pub fn abort_commit(&mut self) -> Result<()> {
        let st = self.state.get_mut();
        match &st.committing {
            None => return Err(Error::Usage("no commit in progress".into())),
            Some(c) if c.started => return Err(Error::Usage("commit already partially applied".into())),
            Some(_) => st.committing = None,
        }
        self.rollback()
    }

    /// Applies the next commit action. The last step closes the transaction
    /// and releases the commit lock.
    pub fn commit_step(&mut self) -> Result<CommitProgress> {
        let inner = self.store.inner.clone();
        let st = self.state.get_mut();
        let Some(c) = st.committing.as_mut() else {
            return Err(Error::Usage("no commit in progress".into()));
        };
        c.started = true;
        if let Some(action) = c.actions.pop_front() {
            // SAFETY: the log still holds every node named by an action.
            match action {
                CommitAction::Birth(p, g) => unsafe { p.get() }.born.store(g, Ordering::Release),
                CommitAction::Death(p, stamp, g) => {
                    let node = unsafe { p.get() };
                    let moved = node.died.compare_exchange(stamp, g, Ordering::AcqRel, Ordering::Acquire).is_ok();
                    assert!(moved, "retracted clause changed under its transaction");
                    inner.dead_estimate.fetch_add(1, Ordering::Relaxed);
                }
                CommitAction::Discard(p) => {
                    let node = unsafe { p.get() };
                    node.died.store(node.born(), Ordering::Release);
                    inner.dead_estimate.fetch_add(1, Ordering::Relaxed);
                }
                CommitAction::Publish(g) => inner.generation.store(g, Ordering::Release),
            }
            if !c.actions.is_empty() {
                return Ok(CommitProgress::Pending);
            }
        }
        let c = st.committing.take().expect("commit in progress");
        let txn = st.txn.as_mut().expect("commit outside a transaction");
        txn.frames.pop();
        if txn.frames.is_empty() {
            inner.deregister(txn.slot);
            st.txn = None;
            st.stats.commits += 1;
            if c.target.is_some() {
                st.last_commit = c.target;
            }
        }
        Ok(CommitProgress::Done(c.target))
    }

    /// Commits the innermost transaction. A nested commit only closes the
    /// level; its changes become part of the enclosing transaction.
    pub fn commit(&mut self) -> Result<Option<Generation>> {
        self.begin_commit(false)?;
        self.finish_commit()
    }

    /// Commits after `constraint` holds, evaluated under the commit lock
    /// against the transaction's view. On failure the transaction is rolled
    /// back.
    pub fn commit_with(&mut self, constraint: &mut dyn FnMut(&Session) -> Result<bool>) -> Result<Option<Generation>> {
        self.begin_commit(true)?;
        match constraint(self) {
            Ok(true) => self.finish_commit(),
            Ok(false) => {
                self.abort_commit()?;
                Err(TxnError::ConstraintFailed.into())
            }
            Err(e) => {
                self.abort_commit()?;
                Err(e)
            }
        }
    }

    pub(crate) fn finish_commit(&mut self) -> Result<Option<Generation>> {
        loop {
            if let CommitProgress::Done(g) = self.commit_step()? {
                return Ok(g);
            }
        }
    }

    /// Runs `goal` as a transaction. `Ok(Some(_))` commits, `Ok(None)`
    /// (failure) and `Err(_)` roll back.
    pub fn transaction<R>(&mut self, goal: impl FnMut(&mut Session) -> Result<Option<R>>) -> Result<Option<R>> {
        self.run_transaction(goal, None, &TxnOptions::default())
    }

    pub fn transaction_with_options<R>(
        &mut self,
        goal: impl FnMut(&mut Session) -> Result<Option<R>>,
        options: &TxnOptions,
    ) -> Result<Option<R>> {
        self.run_transaction(goal, None, options)
    }

    /// Like [`Session::transaction`], but commits only if `constraint`
    /// succeeds when evaluated under the commit lock. A failing constraint
    /// raises `transaction_error(constraint, failed)`.
    pub fn transaction_with_constraint<R>(
        &mut self,
        goal: impl FnMut(&mut Session) -> Result<Option<R>>,
        mut constraint: impl FnMut(&Session) -> Result<bool>,
        options: &TxnOptions,
    ) -> Result<Option<R>> {
        self.run_transaction(goal, Some(&mut constraint), options)
    }

    fn run_transaction<R>(
        &mut self,
        mut goal: impl FnMut(&mut Session) -> Result<Option<R>>,
        mut constraint: Option<&mut dyn FnMut(&Session) -> Result<bool>>,
        options: &TxnOptions,
    ) -> Result<Option<R>> {
        let restartable = options.restart && self.level() == 0;
        let mut attempt = 0u32;
        loop {
            let depth = self.begin(TxnKind::Transaction, options.id.clone())?;
            let outcome = goal(self);
            self.close_inner_levels(depth)?;
            let err = match outcome {
                Ok(Some(v)) => {
                    let committed = match constraint.as_mut() {
                        Some(c) => self.commit_with(&mut **c),
                        None => self.commit(),
                    };
                    match committed {
                        Ok(_) => return Ok(Some(v)),
                        Err(e) => e,
                    }
                }
                Ok(None) => {
                    self.rollback()?;
                    return Ok(None);
                }
                Err(e) => {
                    self.rollback()?;
                    e
                }
            };
            let may_retry = options.max_retries.is_none_or(|m| attempt < m);
            if restartable && err.is_transaction_error() && may_retry {
                attempt += 1;
                self.state.get_mut().stats.restarts += 1;
                std::thread::sleep(backoff_delay(attempt, &mut rand::thread_rng()));
                continue;
            }
            return Err(err);
        }
    }

    /// Runs `goal` against a frozen view; every change it makes is discarded.
    pub fn snapshot<R>(&mut self, goal: impl FnOnce(&mut Session) -> Result<Option<R>>) -> Result<Option<R>> {
        let depth = self.begin(TxnKind::Snapshot, None)?;
        let outcome = goal(self);
        self.close_inner_levels(depth)?;
        self.rollback()?;
        outcome
    }

    /// Rolls back levels a goal opened but did not close.
    fn close_inner_levels(&mut self, depth: usize) -> Result<()> {
        if self.state.get_mut().committing.is_some() {
            self.abort_commit()?;
        }
        while self.level() > depth {
            self.rollback()?;
        }
        if self.level() < depth {
            return Err(Error::Usage("goal closed its enclosing transaction".into()));
        }
        Ok(())
    }

    /// Properties of every open transaction, innermost first.
    pub fn transaction_properties(&self) -> Vec<(TxnId, Vec<TxnProperty>)> {
        let st = self.state();
        let Some(txn) = st.txn.as_ref() else {
            return Vec::new();
        };
        let mut out = Vec::new();
        for (i, frame) in txn.frames.iter().enumerate().rev() {
            let span = &txn.log[frame.marker..];
            let mut props = vec![
                TxnProperty::Level(i + 1),
                TxnProperty::Modified(!span.is_empty()),
                TxnProperty::Modifications(modifications(span)),
            ];
            if let Some(id) = &frame.id {
                props.push(TxnProperty::Id(id.clone()));
            }
            out.push((TxnId { session: self.id, serial: frame.serial }, props));
        }
        out
    }

    /// Net modifications of the innermost transaction, in log order.
    pub fn modifications(&self) -> Vec<Modification> {
        let st = self.state();
        match st.txn.as_ref() {
            Some(txn) => modifications(&txn.log[txn.frames.last().map_or(0, |f| f.marker)..]),
            None => Vec::new(),
        }
    }

    /// Id of the innermost transaction.
    pub fn transaction_id(&self) -> Option<TxnId> {
        let st = self.state();
        let frame = st.txn.as_ref()?.frames.last()?;
        Some(TxnId { session: self.id, serial: frame.serial })
    }
}

fn modifications(span: &[ChangeEntry]) -> Vec<Modification> {
    let (effective, _) = net_changes(span);
    effective
        .iter()
        .map(|e| {
            // SAFETY: see `ChangeEntry::node`.
            let head = unsafe { e.node.get() }.head.clone();
            match e.kind {
                ChangeKind::AssertA => Modification::Asserta(head),
                ChangeKind::AssertZ => Modification::Assertz(head),
                ChangeKind::Retract => Modification::Retract(head),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{Store, StoreConfig};
    use crate::term::Pattern;
    use rand::SeedableRng;

    fn t(s: &str) -> Term {
        s.parse().unwrap()
    }

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    fn all(s: &Session, pat: &str) -> Vec<String> {
        s.query_all(&p(pat)).unwrap().iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn commit_is_one_increment() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let before = store.current_generation();
        s.transaction(|s| {
            for i in 0..5 {
                s.assertz(Term::compound("f", vec![Term::Int(i)]))?;
            }
            Ok(Some(()))
        })
        .unwrap();
        assert_eq!(store.current_generation(), before.next());
        assert_eq!(s.last_commit_generation(), Some(before.next()));
    }

    #[test]
    fn committed_asserts_share_one_born_generation() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        let refs: Vec<_> = (0..3).map(|i| s.assertz(Term::compound("f", vec![Term::Int(i)])).unwrap()).collect();
        let g = s.commit().unwrap().unwrap();
        for r in refs {
            assert_eq!(unsafe { store.inner.lookup(r).unwrap().get() }.born(), g.0);
        }
        assert_eq!(store.current_generation(), g);
    }

    #[test]
    fn failure_and_error_leave_store_unchanged() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let out: Option<()> = s
            .transaction(|s| {
                s.assertz(t("f(1)"))?;
                Ok(None)
            })
            .unwrap();
        assert_eq!(out, None);
        let err = s
            .transaction(|s| -> Result<Option<()>> {
                s.assertz(t("f(2)"))?;
                Err(Error::Thrown(t("oops")))
            })
            .unwrap_err();
        assert_eq!(err.to_string(), "oops");
        assert!(all(&s, "f(X)").is_empty());
        assert_eq!(store.current_generation(), Generation(1));
        assert_eq!(s.stats().rollbacks, 2);
    }

    #[test]
    fn read_only_commit_keeps_generation() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.assertz(t("f(1)")).unwrap();
        let g = store.current_generation();
        let n = s.transaction(|s| Ok(Some(s.query_all(&p("f(X)"))?.len()))).unwrap();
        assert_eq!(n, Some(1));
        assert_eq!(store.current_generation(), g);
    }

    #[test]
    fn constraint_failure_and_error_paths() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let goal = |s: &mut Session| {
            s.assertz(t("f(1)"))?;
            Ok(Some(()))
        };
        let err = s.transaction_with_constraint(goal, |_| Ok(false), &TxnOptions::default()).unwrap_err();
        assert_eq!(err.to_string(), "transaction_error(constraint, failed)");
        let err =
            s.transaction_with_constraint(goal, |_| Err(Error::Thrown(t("bad"))), &TxnOptions::default()).unwrap_err();
        assert_eq!(err, Error::Thrown(t("bad")));
        assert!(all(&s, "f(X)").is_empty());
        s.transaction_with_constraint(goal, |_| Ok(true), &TxnOptions::default()).unwrap();
        assert_eq!(all(&s, "f(X)"), ["f(1)"]);
    }

    #[test]
    fn constraint_sees_the_transaction() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.transaction_with_constraint(
            |s| {
                s.assertz(t("f(1)"))?;
                Ok(Some(()))
            },
            |s| {
                assert_eq!(s.level(), 1);
                assert_eq!(s.modifications(), vec![Modification::Assertz(t("f(1)"))]);
                Ok(s.query_all(&p("f(X)"))?.len() == 1)
            },
            &TxnOptions::default(),
        )
        .unwrap();
    }

    #[test]
    fn concurrent_retract_conflicts() {
        let store = Store::new();
        let mut a = store.session().unwrap();
        let mut b = store.session().unwrap();
        a.assertz(t("f(1)")).unwrap();
        a.begin(TxnKind::Transaction, None).unwrap();
        b.begin(TxnKind::Transaction, None).unwrap();
        assert_eq!(a.retract(&p("f(X)")).unwrap(), Some(t("f(1)")));
        let err = b.retract(&p("f(X)")).unwrap_err();
        assert_eq!(err.to_string(), "transaction_error(conflict, f/1)");
        // Doomed: the commit raises the conflict again and rolls back.
        assert_eq!(b.commit().unwrap_err().to_string(), "transaction_error(conflict, f/1)");
        assert!(!b.in_transaction());
        a.commit().unwrap();
        assert!(all(&b, "f(X)").is_empty());
        assert_eq!(b.stats().conflicts, 1);
    }

    #[test]
    fn erase_inside_transaction() {
        let store = Store::new();
        let mut a = store.session().unwrap();
        let mut b = store.session().unwrap();
        let r = a.assertz(t("f(1)")).unwrap();
        a.begin(TxnKind::Transaction, None).unwrap();
        assert!(a.erase(r).unwrap());
        assert!(!a.erase(r).unwrap(), "already erased by this transaction");
        assert!(all(&a, "f(X)").is_empty());
        a.rollback().unwrap();
        assert_eq!(all(&a, "f(X)"), ["f(1)"]);

        b.begin(TxnKind::Transaction, None).unwrap();
        assert!(a.erase(r).unwrap());
        let err = b.erase(r).unwrap_err();
        assert_eq!(err.to_string(), "transaction_error(conflict, f/1)");
        b.rollback().unwrap();
        assert!(!a.erase(r).unwrap());
    }

    #[test]
    fn rollback_restores_retracted_and_hides_asserted() {
        let store = Store::new();
        let mut a = store.session().unwrap();
        let b = store.session().unwrap();
        a.assertz(t("f(1)")).unwrap();
        a.begin(TxnKind::Transaction, None).unwrap();
        a.retract(&p("f(1)")).unwrap();
        a.assertz(t("f(2)")).unwrap();
        assert_eq!(all(&b, "f(X)"), ["f(1)"]);
        a.rollback().unwrap();
        assert_eq!(all(&b, "f(X)"), ["f(1)"]);
        assert_eq!(all(&a, "f(X)"), ["f(1)"]);
    }

    #[test]
    fn nested_rollback_discards_only_inner() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        s.assertz(t("a(1)")).unwrap();
        assert_eq!(s.begin(TxnKind::Transaction, None).unwrap(), 2);
        s.assertz(t("b(1)")).unwrap();
        s.rollback().unwrap();
        assert_eq!(s.level(), 1);
        assert_eq!(all(&s, "a(X)"), ["a(1)"]);
        assert!(all(&s, "b(X)").is_empty());
        s.commit().unwrap();
        assert_eq!(all(&s, "a(X)"), ["a(1)"]);
        assert!(all(&s, "b(X)").is_empty());
    }

    #[test]
    fn nested_commit_defers_to_outer() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        s.assertz(t("x(1)")).unwrap();
        assert_eq!(s.commit().unwrap(), None);
        assert_eq!(store.current_generation(), Generation(1));
        s.rollback().unwrap();
        assert!(all(&s, "x(X)").is_empty());
    }

    #[test]
    fn properties_report_levels_modifications_and_ids() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        assert!(s.transaction_properties().is_empty());
        s.assertz(t("g(2)")).unwrap();
        s.begin(TxnKind::Transaction, Some(t("job(7)"))).unwrap();
        s.assertz(t("f(1)")).unwrap();
        s.retract(&p("g(2)")).unwrap();
        let r = s.assertz(t("tmp(1)")).unwrap();
        s.erase(r).unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        let props = s.transaction_properties();
        assert_eq!(props.len(), 2);
        assert_eq!(
            props[0].1,
            vec![TxnProperty::Level(2), TxnProperty::Modified(false), TxnProperty::Modifications(vec![])]
        );
        assert_eq!(
            props[1].1,
            vec![
                TxnProperty::Level(1),
                TxnProperty::Modified(true),
                TxnProperty::Modifications(vec![Modification::Assertz(t("f(1)")), Modification::Retract(t("g(2)"))]),
                TxnProperty::Id(t("job(7)")),
            ]
        );
        s.commit().unwrap();
        let g = s.commit().unwrap();
        assert_eq!(g, Some(Generation(3)));
        assert!(all(&s, "tmp(X)").is_empty());
    }

    #[test]
    fn assert_then_erase_consumes_no_generation() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        s.begin(TxnKind::Transaction, None).unwrap();
        let r = s.assertz(t("f(1)")).unwrap();
        s.erase(r).unwrap();
        assert_eq!(s.commit().unwrap(), None);
        assert_eq!(store.current_generation(), Generation(1));
        assert_eq!(store.dead_linked_clauses(), 1);
    }

    #[test]
    fn snapshot_discards() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let seen = s
            .snapshot(|s| {
                s.assertz(t("f(1)"))?;
                Ok(Some(s.query_all(&p("f(X)"))?.len()))
            })
            .unwrap();
        assert_eq!(seen, Some(1));
        assert!(all(&s, "f(X)").is_empty());
        assert_eq!(store.current_generation(), Generation(1));
        s.begin(TxnKind::Snapshot, None).unwrap();
        assert!(matches!(s.commit(), Err(Error::Usage(_))));
    }

    #[test]
    fn snapshot_sum_ignores_concurrent_commit() {
        let store = Store::new();
        let mut auditor = store.session().unwrap();
        let mut teller = store.session().unwrap();
        auditor.assertz(t("account(a, 100)")).unwrap();
        auditor.assertz(t("account(b, 100)")).unwrap();
        let read = |s: &Session, who: &str| -> i64 {
            s.query_all(&p(&format!("account({who}, X)"))).unwrap()[0].args()[1].as_int().unwrap()
        };
        let transfer = |s: &mut Session| {
            s.transaction(|s| {
                s.retract(&p("account(a, 100)"))?;
                s.retract(&p("account(b, 100)"))?;
                s.assertz(t("account(a, 90)"))?;
                s.assertz(t("account(b, 110)"))?;
                Ok(Some(()))
            })
            .unwrap();
        };
        let a = read(&auditor, "a");
        transfer(&mut teller);
        let stale = a + read(&auditor, "b");
        assert_eq!(stale, 210);

        let mut teller2 = store.session().unwrap();
        let sum = auditor
            .snapshot(|s| {
                let a = read(s, "a");
                teller2
                    .transaction(|s| {
                        s.retract(&p("account(a, 90)"))?;
                        s.retract(&p("account(b, 110)"))?;
                        s.assertz(t("account(a, 80)"))?;
                        s.assertz(t("account(b, 120)"))?;
                        Ok(Some(()))
                    })
                    .unwrap();
                Ok(Some(a + read(s, "b")))
            })
            .unwrap();
        assert_eq!(sum, Some(200));
    }

    #[test]
    fn restart_reruns_after_conflict() {
        let store = Store::new();
        let mut a = store.session().unwrap();
        let mut b = store.session().unwrap();
        a.assertz(t("token(1)")).unwrap();
        a.assertz(t("token(2)")).unwrap();
        let mut attempts = 0;
        let got = b
            .transaction_with_options(
                |s| {
                    attempts += 1;
                    if attempts == 1 {
                        // Another session takes token(1) after we started.
                        a.transaction(|a| Ok(a.retract(&p("token(1)"))?.map(|_| ()))).unwrap();
                    }
                    s.retract(&p("token(X)"))
                },
                &TxnOptions::default().restart(true),
            )
            .unwrap();
        assert_eq!(attempts, 2);
        assert_eq!(got, Some(t("token(2)")));
        assert_eq!(b.stats().restarts, 1);
    }

    #[test]
    fn restart_gives_up_after_max_retries() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let mut runs = 0;
        let err = s
            .transaction_with_constraint(
                |_| {
                    runs += 1;
                    Ok(Some(()))
                },
                |_| Ok(false),
                &TxnOptions::default().restart(true).max_retries(3),
            )
            .unwrap_err();
        assert_eq!(err, Error::Transaction(TxnError::ConstraintFailed));
        assert_eq!(runs, 4);
    }

    #[test]
    fn without_restart_goal_runs_once() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let mut runs = 0;
        let _ = s.transaction_with_constraint(
            |_| {
                runs += 1;
                Ok(Some(()))
            },
            |_| Ok(false),
            &TxnOptions::default(),
        );
        assert_eq!(runs, 1);
    }

    #[test]
    fn nested_restart_is_not_honored() {
        let store = Store::new();
        let mut s = store.session().unwrap();
        let mut inner_runs = 0;
        let out = s.transaction(|s| {
            let r = s.transaction_with_constraint(
                |_| {
                    inner_runs += 1;
                    Ok(Some(()))
                },
                |_| Ok(false),
                &TxnOptions::default().restart(true),
            );
            assert!(r.is_err());
            Ok(Some(()))
        });
        assert!(out.is_ok());
        assert_eq!(inner_runs, 1);
    }

    #[test]
    fn increment_first_publishes_early() {
        let store = Store::with_config(StoreConfig { commit_order: CommitOrder::IncrementFirst, ..Default::default() });
        let mut a = store.session().unwrap();
        let b = store.session().unwrap();
        a.begin(TxnKind::Transaction, None).unwrap();
        a.assertz(t("f(1)")).unwrap();
        a.assertz(t("f(2)")).unwrap();
        a.begin_commit(false).unwrap();
        assert_eq!(a.commit_step().unwrap(), CommitProgress::Pending);
        assert_eq!(a.commit_step().unwrap(), CommitProgress::Pending);
        // Generation published but only one clause renumbered.
        assert_eq!(all(&b, "f(X)"), ["f(1)"]);
        assert_eq!(a.commit_step().unwrap(), CommitProgress::Done(Some(Generation(2))));
        assert_eq!(all(&b, "f(X)").len(), 2);
    }

    #[test]
    fn stepped_commit_is_invisible_until_published() {
        let store = Store::new();
        let mut a = store.session().unwrap();
        let b = store.session().unwrap();
        a.begin(TxnKind::Transaction, None).unwrap();
        a.assertz(t("f(1)")).unwrap();
        a.assertz(t("f(2)")).unwrap();
        a.begin_commit(false).unwrap();
        assert_eq!(a.pending_commit_generation(), Some(Generation(2)));
        while a.commit_step().unwrap() == CommitProgress::Pending {
            assert!(all(&b, "f(X)").is_empty());
        }
        assert_eq!(all(&b, "f(X)").len(), 2);
    }

    #[test]
    fn backoff_bounds() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(7);
        for attempt in 1..40 {
            let d = backoff_delay(attempt, &mut rng);
            let cap = (BACKOFF_START * (1u32 << (attempt - 1).min(16))).min(BACKOFF_CAP);
            assert!(d >= cap / 2 && d <= cap, "{attempt}: {d:?}");
        }
        let late = backoff_delay(30, &mut rng);
        assert!(late >= Duration::from_millis(5) && late <= Duration::from_millis(10));
    }
}
