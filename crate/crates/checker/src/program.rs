//! Random single-session programs, run against both the store and the
//! reference oracle.

use std::collections::VecDeque;

use genstore_core::{ClauseRef, Cursor, Pattern, Session, Store, Term, TxnKind};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::reference::ReferenceStore;

#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Assertz(Term),
    Asserta(Term),
    Retract(Pattern),
    /// Runs a query to completion.
    Query(Pattern),
    Open(Pattern),
    /// Advances the i-th open cursor.
    Next(usize),
    /// Erases the clause created by the k-th assert of the program.
    Erase(usize),
    /// Drains and closes every open cursor.
    CloseCursors,
    Begin(TxnKind),
    Commit,
    Rollback,
}

impl Op {
    /// Operations that open or close a transaction level. No cursor may be
    /// open across them.
    pub fn is_structural(&self) -> bool {
        matches!(self, Op::Begin(_) | Op::Commit | Op::Rollback)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Outcome {
    Asserted,
    Retracted(Option<Term>),
    Erased(bool),
    Rows(Vec<Term>),
    Opened,
    Next(Option<Term>),
    Closed(Vec<Vec<Term>>),
    Began(usize),
    Committed(Option<u64>),
    RolledBack,
}

/// Outcome of every operation together with the global generation after it.
pub type Trace = Vec<(Outcome, u64)>;

/// Predicates used by generated programs.
pub const PREDICATES: [(&str, usize); 5] = [("f", 1), ("g", 1), ("h", 2), ("p", 1), ("q", 2)];

fn random_term(rng: &mut impl Rng) -> Term {
    let (name, arity) = PREDICATES[rng.gen_range(0..PREDICATES.len())];
    Term::compound(name, (0..arity).map(|_| Term::Int(rng.gen_range(0..4))).collect())
}

fn random_pattern(rng: &mut impl Rng) -> Pattern {
    let (name, arity) = PREDICATES[rng.gen_range(0..PREDICATES.len())];
    let args = (0..arity)
        .map(|i| match rng.gen_range(0..4) {
            0 => Pattern::Int(rng.gen_range(0..4)),
            1 => Pattern::Any,
            2 if i > 0 => Pattern::var("X"),
            _ => Pattern::var(["X", "Y"][i]),
        })
        .collect();
    Pattern::compound(name, args)
}

/// Generates a well-formed program of at most `max_len` operations plus
/// the closing operations needed to end every open transaction.
pub fn random_program(seed: u64, max_len: usize) -> Vec<Op> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.gen_range(1..=max_len);
    let mut ops = Vec::with_capacity(len + 8);
    let mut levels: Vec<TxnKind> = Vec::new();
    let mut cursors = 0usize;
    let mut asserts = 0usize;
    let close = |ops: &mut Vec<Op>, cursors: &mut usize| {
        if *cursors > 0 {
            ops.push(Op::CloseCursors);
            *cursors = 0;
        }
    };
    while ops.len() < len {
        match rng.gen_range(0..100) {
            0..=19 => {
                ops.push(Op::Assertz(random_term(&mut rng)));
                asserts += 1;
            }
            20..=27 => {
                ops.push(Op::Asserta(random_term(&mut rng)));
                asserts += 1;
            }
            28..=41 => ops.push(Op::Retract(random_pattern(&mut rng))),
            42..=51 => ops.push(Op::Query(random_pattern(&mut rng))),
            52..=57 if cursors < 3 => {
                ops.push(Op::Open(random_pattern(&mut rng)));
                cursors += 1;
            }
            58..=67 if cursors > 0 => ops.push(Op::Next(rng.gen_range(0..cursors))),
            68..=72 if asserts > 0 => ops.push(Op::Erase(rng.gen_range(0..asserts))),
            73..=80 if levels.len() < 4 => {
                close(&mut ops, &mut cursors);
                let kind = if rng.gen_bool(0.25) { TxnKind::Snapshot } else { TxnKind::Transaction };
                ops.push(Op::Begin(kind));
                levels.push(kind);
            }
            81..=92 if !levels.is_empty() => {
                close(&mut ops, &mut cursors);
                let kind = levels.pop().unwrap();
                if kind == TxnKind::Transaction && rng.gen_bool(0.7) {
                    ops.push(Op::Commit);
                } else {
                    ops.push(Op::Rollback);
                }
            }
            _ => {}
        }
    }
    close(&mut ops, &mut cursors);
    while let Some(kind) = levels.pop() {
        let commit = kind == TxnKind::Transaction && rng.gen_bool(0.5);
        ops.push(if commit { Op::Commit } else { Op::Rollback });
    }
    ops
}

/// Closing operations to append to `prefix` so every open level ends.
pub fn closing_ops(prefix: &[Op], rng: &mut impl Rng) -> Vec<Op> {
    let mut levels = Vec::new();
    for op in prefix {
        match op {
            Op::Begin(k) => levels.push(*k),
            Op::Commit | Op::Rollback => {
                levels.pop();
            }
            _ => {}
        }
    }
    let mut out = Vec::new();
    while let Some(kind) = levels.pop() {
        let choices: &[Op] = if kind == TxnKind::Transaction { &[Op::Commit, Op::Rollback] } else { &[Op::Rollback] };
        out.push(choices.choose(rng).unwrap().clone());
    }
    out
}

/// Runs `ops` on a fresh [`Store`].
pub fn run_store(ops: &[Op]) -> Trace {
    let store = Store::new();
    let mut session = store.session().expect("session");
    let trace = run_on_session(&mut session, ops);
    drop(session);
    trace
}

/// Runs `ops` on an existing session and returns the trace.
pub fn run_on_session(s: &mut Session, ops: &[Op]) -> Trace {
    let mut trace = Vec::with_capacity(ops.len());
    let mut refs: Vec<ClauseRef> = Vec::new();
    let mut i = 0;
    while i < ops.len() {
        {
            let s: &Session = s;
            let mut cursors: Vec<Cursor<'_>> = Vec::new();
            while i < ops.len() && !ops[i].is_structural() {
                let out = match &ops[i] {
                    Op::Assertz(t) => {
                        refs.push(s.assertz(t.clone()).expect("assertz"));
                        Outcome::Asserted
                    }
                    Op::Asserta(t) => {
                        refs.push(s.asserta(t.clone()).expect("asserta"));
                        Outcome::Asserted
                    }
                    Op::Retract(p) => Outcome::Retracted(s.retract(p).expect("retract")),
                    Op::Query(p) => Outcome::Rows(s.query_all(p).expect("query")),
                    Op::Open(p) => {
                        cursors.push(s.query(p).expect("query"));
                        Outcome::Opened
                    }
                    Op::Next(c) => Outcome::Next(cursors[*c].next().map(|r| r.term)),
                    Op::Erase(k) => Outcome::Erased(s.erase(refs[*k]).expect("erase")),
                    Op::CloseCursors => {
                        Outcome::Closed(cursors.drain(..).map(|c| c.map(|r| r.term).collect()).collect())
                    }
                    _ => unreachable!(),
                };
                trace.push((out, s.store().current_generation().0));
                i += 1;
            }
        }
        if i < ops.len() {
            let out = match &ops[i] {
                Op::Begin(kind) => Outcome::Began(s.begin(*kind, None).expect("begin")),
                Op::Commit => Outcome::Committed(s.commit().expect("commit").map(|g| g.0)),
                Op::Rollback => {
                    s.rollback().expect("rollback");
                    Outcome::RolledBack
                }
                _ => unreachable!(),
            };
            trace.push((out, s.store().current_generation().0));
            i += 1;
        }
    }
    trace
}

/// Runs `ops` on a fresh [`ReferenceStore`].
pub fn run_reference(ops: &[Op]) -> Trace {
    run_on_reference(&mut ReferenceStore::new(), ops)
}

pub fn run_on_reference(r: &mut ReferenceStore, ops: &[Op]) -> Trace {
    let mut trace = Vec::with_capacity(ops.len());
    let mut ids = Vec::new();
    let mut cursors: Vec<VecDeque<Term>> = Vec::new();
    for op in ops {
        let out = match op {
            Op::Assertz(t) => {
                ids.push(r.assertz(t.clone()));
                Outcome::Asserted
            }
            Op::Asserta(t) => {
                ids.push(r.asserta(t.clone()));
                Outcome::Asserted
            }
            Op::Retract(p) => Outcome::Retracted(r.retract(p)),
            Op::Query(p) => Outcome::Rows(r.query(p)),
            Op::Open(p) => {
                cursors.push(r.query(p).into());
                Outcome::Opened
            }
            Op::Next(c) => Outcome::Next(cursors[*c].pop_front()),
            Op::Erase(k) => Outcome::Erased(r.erase(ids[*k])),
            Op::CloseCursors => Outcome::Closed(cursors.drain(..).map(Vec::from).collect()),
            Op::Begin(kind) => Outcome::Began(r.begin(*kind)),
            Op::Commit => Outcome::Committed(r.commit()),
            Op::Rollback => {
                r.rollback();
                Outcome::RolledBack
            }
        };
        trace.push((out, r.generation()));
    }
    trace
}

/// First position where the two traces disagree.
pub fn first_divergence(a: &Trace, b: &Trace) -> Option<usize> {
    (0..a.len().max(b.len())).find(|&i| a.get(i) != b.get(i))
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
    fn frozen_cursor_example() {
        let ops = vec![Op::Assertz(t("f(1)")), Op::Open(p("f(X)")), Op::Assertz(t("f(2)")), Op::CloseCursors];
        let trace = run_reference(&ops);
        assert_eq!(trace[3].0, Outcome::Closed(vec![vec![t("f(1)")]]));
        assert_eq!(run_store(&ops), trace);
    }

    #[test]
    fn failed_transaction_example() {
        let ops = vec![Op::Begin(TxnKind::Transaction), Op::Assertz(t("f(1)")), Op::Rollback, Op::Query(p("f(X)"))];
        let trace = run_reference(&ops);
        assert_eq!(trace[3].0, Outcome::Rows(vec![]));
        assert_eq!(run_store(&ops), trace);
    }

    #[test]
    fn snapshot_example() {
        let ops = vec![Op::Begin(TxnKind::Snapshot), Op::Assertz(t("f(1)")), Op::Rollback, Op::Query(p("f(X)"))];
        let trace = run_reference(&ops);
        assert_eq!(trace[3].0, Outcome::Rows(vec![]));
        assert_eq!(run_store(&ops), trace);
    }

    #[test]
    fn generated_programs_are_well_formed() {
        for seed in 0..200 {
            let ops = random_program(seed, 50);
            let mut depth = 0i32;
            let mut cursors = 0;
            for op in &ops {
                match op {
                    Op::Begin(_) => depth += 1,
                    Op::Commit | Op::Rollback => depth -= 1,
                    _ => {}
                }
                assert!(depth >= 0);
                if op.is_structural() {
                    assert_eq!(cursors, 0);
                }
                match op {
                    Op::Open(_) => cursors += 1,
                    Op::CloseCursors => cursors = 0,
                    _ => {}
                }
            }
            assert_eq!(depth, 0);
        }
    }

    #[test]
    fn store_agrees_with_reference_on_seeded_programs() {
        for seed in 0..500 {
            let ops = random_program(seed, 50);
            let a = run_store(&ops);
            let b = run_reference(&ops);
            if let Some(i) = first_divergence(&a, &b) {
                panic!("seed {seed} diverges at op {i} ({:?}): store {:?} reference {:?}", ops[i], a.get(i), b.get(i));
            }
        }
    }
}
