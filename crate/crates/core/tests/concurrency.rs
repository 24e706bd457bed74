use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Barrier};
use std::thread;

use genstore_core::{
    Error, Generation, Pattern, PredicateIndicator, Session, Store, Term, TxnError, TxnKind, TxnOptions,
};

fn t(s: &str) -> Term {
    s.parse().unwrap()
}

fn p(s: &str) -> Pattern {
    s.parse().unwrap()
}

#[test]
fn commit_generations_are_unique_and_dense() {
    let store = Store::new();
    let threads = 6;
    let per_thread = 300;
    let handles: Vec<_> = (0..threads)
        .map(|i| {
            let store = store.clone();
            thread::spawn(move || {
                let mut s = store.session().unwrap();
                let mut gens = Vec::new();
                for j in 0..per_thread {
                    let fact = Term::compound("f", vec![Term::Int(i), Term::Int(j)]);
                    if j % 3 == 0 {
                        s.assertz(fact).unwrap();
                    } else {
                        s.transaction(|s| {
                            s.assertz(fact.clone())?;
                            s.assertz(Term::compound("g", vec![fact.clone()]))?;
                            Ok(Some(()))
                        })
                        .unwrap();
                    }
                    gens.push(s.last_commit_generation().unwrap().0);
                }
                gens
            })
        })
        .collect();
    let mut all: Vec<u64> = handles.into_iter().flat_map(|h| h.join().unwrap()).collect();
    all.sort_unstable();
    let n = (threads * per_thread) as u64;
    assert_eq!(all.len() as u64, n);
    assert_eq!(all, (2..2 + n).collect::<Vec<_>>());
    assert_eq!(store.current_generation(), Generation(1 + n));
}

#[test]
fn constraint_runs_while_no_other_commit_can_interleave() {
    let store = Store::new();
    let counter = Arc::new(AtomicU64::new(0));
    let threads = 4;
    let handles: Vec<_> = (0..threads)
        .map(|i| {
            let store = store.clone();
            let counter = counter.clone();
            thread::spawn(move || {
                let mut s = store.session().unwrap();
                for j in 0..200 {
                    let gen_in_constraint = std::cell::Cell::new(Generation(0));
                    s.transaction_with_constraint(
                        |s| {
                            s.assertz(Term::compound("w", vec![Term::Int(i), Term::Int(j)]))?;
                            Ok(Some(()))
                        },
                        |s| {
                            let c = counter.load(Ordering::SeqCst);
                            thread::yield_now();
                            assert_eq!(counter.load(Ordering::SeqCst), c, "two constraints ran at once");
                            counter.store(c + 1, Ordering::SeqCst);
                            gen_in_constraint.set(s.store().current_generation());
                            Ok(true)
                        },
                        &TxnOptions::default(),
                    )
                    .unwrap();
                    // No other commit may land between our constraint and
                    // our own increment.
                    assert_eq!(s.last_commit_generation(), Some(gen_in_constraint.get().next()));
                }
            })
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
}

#[test]
fn concurrent_retracts_of_one_clause_have_one_winner() {
    for round in 0..50 {
        let store = Store::new();
        store.session().unwrap().assertz(t("token(1)")).unwrap();
        let threads = 4;
        let barrier = Arc::new(Barrier::new(threads));
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                let store = store.clone();
                let barrier = barrier.clone();
                thread::spawn(move || {
                    let mut s = store.session().unwrap();
                    s.begin(TxnKind::Transaction, None).unwrap();
                    barrier.wait();
                    let r = s.retract(&p("token(X)"));
                    match r {
                        Ok(Some(_)) => s.commit().map(|_| true),
                        Ok(None) => {
                            s.rollback().unwrap();
                            Ok(false)
                        }
                        Err(e) => {
                            s.rollback().unwrap();
                            Err(e)
                        }
                    }
                })
            })
            .collect();
        let results: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
        let winners = results.iter().filter(|r| matches!(r, Ok(true))).count();
        assert_eq!(winners, 1, "round {round}: {results:?}");
        for r in &results {
            if let Err(e) = r {
                assert_eq!(*e, Error::Transaction(TxnError::Conflict(PredicateIndicator::new("token", 1))));
            }
        }
    }
}

fn balance(s: &Session, who: i64) -> i64 {
    let pat = Pattern::compound("account", vec![Pattern::Int(who), Pattern::var("B")]);
    s.query_all(&pat).unwrap()[0].args()[1].as_int().unwrap()
}

#[test]
fn transfers_with_restart_conserve_money() {
    let store = Store::new();
    let accounts = 4;
    {
        let s = store.session().unwrap();
        for a in 0..accounts {
            s.assertz(Term::compound("account", vec![Term::Int(a), Term::Int(100)])).unwrap();
        }
    }
    let handles: Vec<_> = (0..4)
        .map(|i| {
            let store = store.clone();
            thread::spawn(move || {
                let mut s = store.session().unwrap();
                for j in 0..200 {
                    let from = (i + j) % accounts;
                    let to = (from + 1 + j % (accounts - 1)) % accounts;
                    s.transaction_with_options(
                        |s| {
                            let fb = balance(s, from);
                            let tb = balance(s, to);
                            let acc = |a: i64, b: i64| Term::compound("account", vec![Term::Int(a), Term::Int(b)]);
                            s.retract(&Pattern::from(&acc(from, fb)))?;
                            s.retract(&Pattern::from(&acc(to, tb)))?;
                            s.assertz(acc(from, fb - 1))?;
                            s.assertz(acc(to, tb + 1))?;
                            Ok(Some(()))
                        },
                        &TxnOptions::default().restart(true),
                    )
                    .unwrap();
                }
                s.stats()
            })
        })
        .collect();
    let mut auditor = store.session().unwrap();
    for _ in 0..50 {
        let total = auditor.snapshot(|s| Ok(Some((0..accounts).map(|a| balance(s, a)).sum::<i64>()))).unwrap().unwrap();
        assert_eq!(total, 100 * accounts);
    }
    let commits: u64 = handles.into_iter().map(|h| h.join().unwrap().commits).sum();
    assert_eq!(commits, 800);
    let total: i64 = (0..accounts).map(|a| balance(&auditor, a)).sum();
    assert_eq!(total, 100 * accounts);
    assert_eq!(auditor.query_all(&p("account(A, B)")).unwrap().len(), accounts as usize);
}

#[test]
fn other_sessions_never_see_pending_clauses() {
    let store = Store::new();
    let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
    let writer = {
        let store = store.clone();
        let stop = stop.clone();
        thread::spawn(move || {
            let mut s = store.session().unwrap();
            let mut i = 0;
            while !stop.load(Ordering::Relaxed) {
                s.begin(TxnKind::Transaction, None).unwrap();
                s.assertz(Term::compound("pending", vec![Term::Int(i)])).unwrap();
                s.assertz(Term::compound("pending", vec![Term::Int(i + 1)])).unwrap();
                thread::yield_now();
                s.rollback().unwrap();
                i += 2;
            }
        })
    };
    let reader = store.session().unwrap();
    for _ in 0..2000 {
        assert!(reader.query_all(&p("pending(X)")).unwrap().is_empty());
    }
    stop.store(true, Ordering::Relaxed);
    writer.join().unwrap();
}
