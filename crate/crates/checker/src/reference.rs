//! Naive single-session oracle.
//!
//! Keeps the committed clause list as a plain vector. A transaction works on
//! a private copy; every nesting level remembers the copy it started from.
//! Cursors copy their matches when opened. None of this shares code with the
//! generation-based store.

use genstore_core::{Pattern, Term, TxnKind};

#[derive(Clone, Debug, PartialEq)]
struct Clause {
    id: u64,
    term: Term,
}

#[derive(Clone, Debug)]
struct Level {
    kind: TxnKind,
    saved: Vec<Clause>,
}

#[derive(Clone, Debug)]
pub struct ReferenceStore {
    committed: Vec<Clause>,
    working: Option<Vec<Clause>>,
    levels: Vec<Level>,
    generation: u64,
    next_id: u64,
}

impl Default for ReferenceStore {
    fn default() -> Self {
        ReferenceStore::new()
    }
}

impl ReferenceStore {
    pub fn new() -> Self {
        ReferenceStore { committed: Vec::new(), working: None, levels: Vec::new(), generation: 1, next_id: 0 }
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn level(&self) -> usize {
        self.levels.len()
    }

    fn view(&self) -> &Vec<Clause> {
        self.working.as_ref().unwrap_or(&self.committed)
    }

    fn view_mut(&mut self) -> &mut Vec<Clause> {
        self.working.as_mut().unwrap_or(&mut self.committed)
    }

    /// A change made outside any transaction commits on its own.
    fn auto_commit(&mut self) {
        if self.working.is_none() {
            self.generation += 1;
        }
    }

    /// Returns an identifier for the new clause, usable with [`erase`].
    ///
    /// [`erase`]: ReferenceStore::erase
    pub fn assertz(&mut self, term: Term) -> u64 {
        self.insert(term, false)
    }

    pub fn asserta(&mut self, term: Term) -> u64 {
        self.insert(term, true)
    }

    fn insert(&mut self, term: Term, front: bool) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        let clause = Clause { id, term };
        let view = self.view_mut();
        if front {
            view.insert(0, clause);
        } else {
            view.push(clause);
        }
        self.auto_commit();
        id
    }

    pub fn retract(&mut self, pattern: &Pattern) -> Option<Term> {
        let pos = self.view().iter().position(|c| pattern.matches(&c.term).is_some())?;
        let removed = self.view_mut().remove(pos);
        self.auto_commit();
        Some(removed.term)
    }

    pub fn erase(&mut self, id: u64) -> bool {
        let Some(pos) = self.view().iter().position(|c| c.id == id) else {
            return false;
        };
        self.view_mut().remove(pos);
        self.auto_commit();
        true
    }

    pub fn query(&self, pattern: &Pattern) -> Vec<Term> {
        self.view().iter().filter(|c| pattern.matches(&c.term).is_some()).map(|c| c.term.clone()).collect()
    }

    pub fn begin(&mut self, kind: TxnKind) -> usize {
        if self.working.is_none() {
            self.working = Some(self.committed.clone());
        }
        let saved = self.view().clone();
        self.levels.push(Level { kind, saved });
        self.levels.len()
    }

    /// Returns the new global generation if the outermost commit changed
    /// the committed clause set.
    pub fn commit(&mut self) -> Option<u64> {
        let level = self.levels.pop().expect("commit outside a transaction");
        assert_eq!(level.kind, TxnKind::Transaction, "snapshots are never committed");
        if !self.levels.is_empty() {
            return None;
        }
        let working = self.working.take().expect("transaction without working set");
        let ids = |v: &[Clause]| {
            let mut ids: Vec<u64> = v.iter().map(|c| c.id).collect();
            ids.sort_unstable();
            ids
        };
        if ids(&working) == ids(&self.committed) {
            return None;
        }
        self.committed = working;
        self.generation += 1;
        Some(self.generation)
    }

    pub fn rollback(&mut self) {
        let level = self.levels.pop().expect("rollback outside a transaction");
        if self.levels.is_empty() {
            self.working = None;
        } else {
            self.working = Some(level.saved);
        }
    }

    /// Committed clauses in insertion order.
    pub fn committed(&self) -> Vec<Term> {
        self.committed.iter().map(|c| c.term.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Term {
        s.parse().unwrap()
    }

    fn p(s: &str) -> Pattern {
        s.parse().unwrap()
    }

    #[test]
    fn cursor_copy_ignores_later_asserts() {
        let mut r = ReferenceStore::new();
        r.assertz(t("f(1)"));
        let cursor = r.query(&p("f(X)"));
        r.assertz(t("f(2)"));
        assert_eq!(cursor, vec![t("f(1)")]);
        assert_eq!(r.generation(), 3);
    }

    #[test]
    fn failed_transaction_leaves_nothing() {
        let mut r = ReferenceStore::new();
        r.begin(TxnKind::Transaction);
        r.assertz(t("f(1)"));
        r.rollback();
        assert!(r.committed().is_empty());
        assert_eq!(r.generation(), 1);
    }

    #[test]
    fn snapshot_discards() {
        let mut r = ReferenceStore::new();
        r.begin(TxnKind::Snapshot);
        r.assertz(t("f(1)"));
        assert_eq!(r.query(&p("f(X)")).len(), 1);
        r.rollback();
        assert!(r.query(&p("f(X)")).is_empty());
    }

    #[test]
    fn assert_and_erase_in_one_transaction_consumes_no_generation() {
        let mut r = ReferenceStore::new();
        r.begin(TxnKind::Transaction);
        let id = r.assertz(t("f(1)"));
        assert!(r.erase(id));
        assert_eq!(r.commit(), None);
        assert_eq!(r.generation(), 1);
    }

    #[test]
    fn nested_rollback_restores_the_level_start() {
        let mut r = ReferenceStore::new();
        r.begin(TxnKind::Transaction);
        r.assertz(t("a(1)"));
        r.begin(TxnKind::Transaction);
        r.assertz(t("b(1)"));
        r.rollback();
        assert_eq!(r.commit(), Some(2));
        assert_eq!(r.committed(), vec![t("a(1)")]);
    }
}
