//! Journal records written from the commit constraint replay to the live state.

use std::path::Path;

use genstore_checker::parse_script;
use genstore_cli::journal::{random_workload, read_journal, run_journal};
use genstore_cli::CliError;

fn bundled(name: &str) -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("scripts").join(name)).unwrap()
}

#[test]
fn replay_matches_live_state_for_100_workloads() {
    let dir = tempfile::tempdir().unwrap();
    for seed in 0..100 {
        let script = parse_script(&random_workload(seed)).unwrap();
        let out = dir.path().join(format!("{seed}.log"));
        let (report, run) = run_journal(&script, &out).unwrap();
        assert!(report.ok(), "seed {seed}: {report:?}\n{:?}", run.failures);
        assert_eq!(read_journal(&out).unwrap().len(), report.records);
    }
}

#[test]
fn only_effective_commits_are_journaled() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j.log");
    let (report, _) = run_journal(&parse_script(&bundled("journal.gs")).unwrap(), &out).unwrap();
    assert!(report.ok(), "{report:?}");
    let records = read_journal(&out).unwrap();
    assert_eq!(records.len(), 2);
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(!text.contains("scratch"), "{text}");
    assert!(!text.contains("broken"), "{text}");
    let ids: Vec<String> = records.iter().map(|r| r.id.as_ref().unwrap().to_string()).collect();
    assert_eq!(ids, ["open(a)", "open(b)"]);
    assert!(records[0].generation < records[1].generation);
}

#[test]
fn empty_script_gives_empty_journal() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("j.log");
    let (report, _) = run_journal(&parse_script("session idle { true }").unwrap(), &out).unwrap();
    assert!(report.ok());
    assert_eq!(report.records, 0);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn bare_mutations_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let err =
        run_journal(&parse_script("session s { assertz(f(1)) }").unwrap(), &dir.path().join("j.log")).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)), "{err}");
}
