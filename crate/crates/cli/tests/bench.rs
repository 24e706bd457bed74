//! Bank benchmark behaviour that the unit tests do not cover.

use genstore_cli::{run_bank_bench, BenchConfig};

#[test]
fn collector_does_not_change_results() {
    let base = BenchConfig { threads: 1, accounts: 8, transfers: 2000, seed: 42, ..Default::default() };
    let on = run_bank_bench(&BenchConfig { gc: true, ..base.clone() }).unwrap();
    let off = run_bank_bench(&BenchConfig { gc: false, ..base }).unwrap();
    assert!(on.ok && off.ok);
    assert_eq!(on.balances, off.balances);
    assert_eq!(on.dead_linked_clauses, 0);
    assert!(off.dead_linked_clauses > 0);
    assert!(on.linked_clauses < off.linked_clauses);
}

#[test]
fn two_accounts_eight_threads_conflict_and_conserve() {
    let r = run_bank_bench(&BenchConfig { threads: 8, accounts: 2, transfers: 300, ..Default::default() }).unwrap();
    assert!(r.ok, "{:?}", r.violation);
    assert_eq!(r.final_total, 200);
    assert_eq!(r.snapshot_mismatches, 0);
    assert!(r.conflicts > 0, "{r:?}");
    assert_eq!(r.commits, 8 * 300);
}

#[test]
fn same_seed_single_thread_is_deterministic() {
    let c = BenchConfig { threads: 1, accounts: 5, transfers: 500, seed: 9, gc: false, ..Default::default() };
    assert_eq!(run_bank_bench(&c).unwrap().balances, run_bank_bench(&c).unwrap().balances);
}
