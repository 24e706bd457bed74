//! Command-line harness: script runs, the bank benchmark, interleaving
//! exploration and the journal demo. Every command can report as JSON.

pub mod bench;
pub mod error;
pub mod journal;

use std::fmt::Write as _;
use std::path::Path;

use genstore_checker::{explore, parse_script, run_script, Exploration, RunOptions, RunReport, Script, Verdict};
use serde::Serialize;

pub use bench::{run_bank_bench, BenchConfig, BenchReport};
pub use error::CliError;
pub use journal::{run_journal, JournalRecord, JournalReport};

/// Exit status: success.
pub const EXIT_OK: i32 = 0;
/// Exit status: an expectation, invariant or replay check failed.
pub const EXIT_FAILED: i32 = 1;
/// Exit status: the input could not be used.
pub const EXIT_USAGE: i32 = 2;

pub fn load_script(path: &Path) -> Result<Script, CliError> {
    let src = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    parse_script(&src).map_err(|e| CliError::Parse(format!("{}:{e}", path.display())))
}

#[derive(Debug, Serialize)]
pub struct RunJson<'a> {
    pub script: String,
    pub ok: bool,
    pub serializable: bool,
    pub verdict: String,
    #[serde(flatten)]
    pub report: &'a RunReport,
}

pub fn verdict_text(v: &Verdict) -> String {
    match v {
        Verdict::Serializable(order) => format!("serializable ({} units)", order.len()),
        Verdict::Violation(why) => format!("violation: {why}"),
    }
}

pub fn run_json(path: &Path, report: &RunReport) -> serde_json::Value {
    let j = RunJson {
        script: path.display().to_string(),
        ok: report.ok(),
        serializable: report.verdict.is_serializable(),
        verdict: verdict_text(&report.verdict),
        report,
    };
    serde_json::to_value(j).expect("report serializes")
}

pub fn run_text(path: &Path, report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "script {}", path.display());
    for s in &report.sessions {
        let _ = writeln!(
            out,
            "\n[{}] commits {} conflicts {} restarts {} aborts {}",
            s.name, s.stats.commits, s.stats.conflicts, s.stats.restarts, s.stats.aborts
        );
        for line in &s.log {
            let _ = writeln!(out, "  {line}");
        }
    }
    let _ = writeln!(out, "\nfinal store (generation {}):", report.generation);
    for t in &report.final_store {
        let _ = writeln!(out, "  {t}");
    }
    let _ = writeln!(out, "\nhistory: {}", verdict_text(&report.verdict));
    for e in &report.errors {
        let _ = writeln!(out, "error: {e}");
    }
    for f in &report.failures {
        let _ = writeln!(out, "expectation failed: {f}");
    }
    let _ = writeln!(out, "{}", if report.ok() { "OK" } else { "FAILED" });
    out
}

/// `genstore run`.
pub fn cmd_run(path: &Path, json: bool) -> Result<(i32, String), CliError> {
    let script = load_script(path)?;
    let report = run_script(&script, RunOptions { backoff: true, ..RunOptions::default() });
    let code = if report.ok() { EXIT_OK } else { EXIT_FAILED };
    let text = if json { pretty(&run_json(path, &report)) } else { run_text(path, &report) };
    Ok((code, text))
}

pub fn explore_json(path: &Path, e: &Exploration) -> serde_json::Value {
    let mut v = serde_json::to_value(e).expect("exploration serializes");
    v["script"] = path.display().to_string().into();
    v["ok"] = e.ok().into();
    v
}

/// `genstore explore`.
pub fn cmd_explore(path: &Path, budget: usize) -> Result<(i32, String), CliError> {
    if budget == 0 {
        return Err(CliError::Usage("budget must be at least 1".into()));
    }
    let script = load_script(path)?;
    let e = explore(&script, budget);
    let code = if e.ok() { EXIT_OK } else { EXIT_FAILED };
    Ok((code, pretty(&explore_json(path, &e))))
}

/// `genstore bench bank`.
pub fn cmd_bench(config: &BenchConfig) -> Result<(i32, String), CliError> {
    let r = run_bank_bench(config)?;
    let code = if r.ok { EXIT_OK } else { EXIT_FAILED };
    Ok((code, pretty(&serde_json::to_value(&r).expect("report serializes"))))
}

/// `genstore journal`.
pub fn cmd_journal(path: &Path, out: &Path) -> Result<(i32, String), CliError> {
    let script = load_script(path)?;
    let (j, _) = run_journal(&script, out)?;
    let code = if j.ok() { EXIT_OK } else { EXIT_FAILED };
    Ok((code, pretty(&serde_json::to_value(&j).expect("report serializes"))))
}

fn pretty(v: &serde_json::Value) -> String {
    serde_json::to_string_pretty(v).expect("json renders")
}
