use genstore_core::{Pattern, Store, Term, TxnKind};
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Mutation {
    Assertz(i64),
    Asserta(i64),
    Retract(i64),
}

fn mutation() -> impl Strategy<Value = Mutation> {
    prop_oneof![
        (0..6i64).prop_map(Mutation::Assertz),
        (0..6i64).prop_map(Mutation::Asserta),
        (0..6i64).prop_map(Mutation::Retract),
    ]
}

fn f(i: i64) -> Term {
    Term::compound("f", vec![Term::Int(i)])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    /// A cursor yields exactly what a full query returned when it was
    /// opened, however mutations and iteration interleave.
    #[test]
    fn cursor_results_depend_only_on_the_opening_state(
        initial in proptest::collection::vec(0..6i64, 0..12),
        script in proptest::collection::vec((mutation(), 0..3usize), 0..30),
        in_txn in any::<bool>(),
    ) {
        let store = Store::new();
        let mut s = store.session().unwrap();
        for i in &initial {
            s.assertz(f(*i)).unwrap();
        }
        if in_txn {
            s.begin(TxnKind::Transaction, None).unwrap();
            s.assertz(f(99)).unwrap();
        }
        let pat: Pattern = "f(X)".parse().unwrap();
        let expected = s.query_all(&pat).unwrap();
        let mut cursor = s.query(&pat).unwrap();
        let mut got = Vec::new();
        for (m, advance) in script {
            match m {
                Mutation::Assertz(i) => { s.assertz(f(i)).unwrap(); }
                Mutation::Asserta(i) => { s.asserta(f(i)).unwrap(); }
                Mutation::Retract(i) => { s.retract(&Pattern::from(&f(i))).unwrap(); }
            }
            for _ in 0..advance {
                if let Some(row) = cursor.next() {
                    got.push(row.term);
                }
            }
        }
        got.extend(cursor.map(|r| r.term));
        prop_assert_eq!(got, expected);
    }

    /// Outside transactions, visibility is exactly born <= g < died.
    #[test]
    fn bare_operations_follow_interval_semantics(ops in proptest::collection::vec(mutation(), 1..40)) {
        let store = Store::new();
        let s = store.session().unwrap();
        // (value, born, died) for every clause ever asserted, in chain order.
        let mut model: Vec<(i64, u64, u64)> = Vec::new();
        let mut views = Vec::new();
        for m in ops {
            let g = store.current_generation().0;
            views.push((g, s.query(&"f(X)".parse().unwrap()).unwrap()));
            match m {
                Mutation::Assertz(i) => { s.assertz(f(i)).unwrap(); model.push((i, g + 1, u64::MAX)); }
                Mutation::Asserta(i) => { s.asserta(f(i)).unwrap(); model.insert(0, (i, g + 1, u64::MAX)); }
                Mutation::Retract(i) => {
                    let hit = s.retract(&Pattern::from(&f(i))).unwrap();
                    if let Some(c) = model.iter_mut().find(|c| c.0 == i && c.2 == u64::MAX) {
                        prop_assert!(hit.is_some());
                        c.2 = g + 1;
                    } else {
                        prop_assert!(hit.is_none());
                    }
                }
            }
        }
        for (g, cursor) in views {
            let want: Vec<Term> = model.iter().filter(|c| c.1 <= g && g < c.2).map(|c| f(c.0)).collect();
            let got: Vec<Term> = cursor.map(|r| r.term).collect();
            prop_assert_eq!(got, want);
        }
    }
}
