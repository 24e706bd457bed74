//! The bundled probe scripts under exhaustive exploration.

use std::path::PathBuf;

use genstore_checker::{explore, parse_script, run_script, RunOptions, Script};

fn load(name: &str) -> Script {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../cli/scripts").join(name);
    let src = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    parse_script(&src).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn atomicity_probe_all_twenty_schedules() {
    let e = explore(&load("atomicity.gs"), 10_000);
    assert!(e.exhaustive);
    assert_eq!(e.schedules, 20);
    assert!(e.ok(), "{:?}", e.first_violation);
}

#[test]
fn rollback_probe_all_twenty_schedules() {
    let e = explore(&load("rollback.gs"), 10_000);
    assert!(e.exhaustive);
    assert_eq!(e.schedules, 20);
    assert!(e.ok(), "{:?}", e.first_violation);
}

#[test]
fn double_retract_one_commit_one_conflict() {
    let e = explore(&load("double-retract.gs"), 10_000);
    assert!(e.exhaustive);
    assert!(e.ok(), "{:?}", e.first_violation);
    for o in &e.outcomes {
        assert_eq!((o.totals.commits, o.totals.conflicts), (1, 1), "schedule {:?}", o.schedule);
    }
    println!("double retract: {} schedules", e.schedules);
}

#[test]
fn bank_pair_conserves_money() {
    let e = explore(&load("bank-pair.gs"), 100_000);
    assert!(e.exhaustive, "{} schedules", e.schedules);
    assert!(e.ok(), "{:?}", e.first_violation);
    println!("bank pair: {} schedules", e.schedules);
}

#[test]
fn mutant_is_caught_and_correct_store_is_not() {
    let mutant = load("mutant.gs");
    let e = explore(&mutant, 10_000);
    assert!(e.exhaustive);
    assert!(!e.ok());
    println!("mutant: {} of {} schedules fail: {:?}", e.violations, e.schedules, e.first_violation);
    let fixed = Script { increment_first: false, ..mutant };
    let e = explore(&fixed, 10_000);
    assert!(e.exhaustive);
    assert!(e.ok(), "{:?}", e.first_violation);
}

#[test]
fn stale_sum_with_and_without_snapshot() {
    for name in ["stale-sum.gs", "stale-sum-snapshot.gs"] {
        let r = run_script(&load(name), RunOptions::default());
        assert!(r.ok(), "{name}: {:?} {:?}", r.failures, r.errors);
    }
}

#[test]
fn hello_and_journal_scripts_run_clean() {
    for name in ["hello.gs", "journal.gs"] {
        let r = run_script(&load(name), RunOptions::default());
        assert!(r.ok(), "{name}: {:?} {:?} {:?}", r.failures, r.errors, r.verdict);
    }
}
