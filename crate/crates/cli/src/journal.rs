//! Durability through a commit constraint.
//!
//! A hook runs inside the commit critical section of every outermost
//! transaction, reads the pending modifications and appends one line to a
//! journal file:
//!
//! ```text
//! <generation>\t<id or ->\t[assertz(account(a,100)),retract(account(b,50))]
//! ```
//!
//! Transactions without net modifications write nothing. Replaying the
//! journal into an empty store reproduces the committed state.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use genstore_checker::{dump_store, run_script, CommitHook, RunOptions, RunReport, Script};
use genstore_core::{Lexer, Modification, Pattern, Session, Store, Term, Tok, TxnProperty};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct JournalRecord {
    pub generation: u64,
    pub id: Option<Term>,
    pub modifications: Vec<Modification>,
}

impl fmt::Display for JournalRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}\t", self.generation)?;
        match &self.id {
            Some(id) => write!(f, "{id}\t[")?,
            None => f.write_str("-\t[")?,
        }
        for (i, m) in self.modifications.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{}", m.to_term())?;
        }
        f.write_str("]")
    }
}

fn ground(text: &str, what: &str) -> Result<Term, String> {
    text.parse::<Pattern>()
        .map_err(|e| format!("{what}: {e}"))?
        .to_term()
        .ok_or_else(|| format!("{what}: `{text}` is not ground"))
}

fn modification(p: &Pattern) -> Result<Modification, String> {
    let t = p.to_term().ok_or_else(|| format!("modification `{p}` is not ground"))?;
    let (name, arg) = match &t {
        Term::Compound(name, args) if args.len() == 1 => (name.as_str(), args[0].clone()),
        _ => return Err(format!("`{t}` is not a modification")),
    };
    match name {
        "assertz" => Ok(Modification::Assertz(arg)),
        "asserta" => Ok(Modification::Asserta(arg)),
        "retract" => Ok(Modification::Retract(arg)),
        _ => Err(format!("`{t}` is not a modification")),
    }
}

impl std::str::FromStr for JournalRecord {
    type Err = String;

    fn from_str(line: &str) -> Result<Self, String> {
        let mut parts = line.splitn(3, '\t');
        let (Some(generation), Some(id), Some(mods)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format!("malformed record `{line}`"));
        };
        let generation = generation.parse().map_err(|_| format!("bad generation `{generation}`"))?;
        let id = if id == "-" { None } else { Some(ground(id, "id")?) };
        let mut lx = Lexer::new(mods);
        let mut modifications = Vec::new();
        lx.expect_punct("[").map_err(|e| e.to_string())?;
        if lx.peek().map_err(|e| e.to_string())? == Some(Tok::Punct("]")) {
            lx.next_token().map_err(|e| e.to_string())?;
        } else {
            loop {
                modifications.push(modification(&lx.arg().map_err(|e| e.to_string())?)?);
                match lx.next_token().map_err(|e| e.to_string())? {
                    Some(Tok::Punct(",")) => continue,
                    Some(Tok::Punct("]")) => break,
                    other => {
                        return Err(format!("expected `,` or `]`, found {}", genstore_core::term::describe(&other)))
                    }
                }
            }
        }
        if !lx.at_end() {
            return Err(format!("trailing text in `{line}`"));
        }
        Ok(JournalRecord { generation, id, modifications })
    }
}

/// The record the pending commit of `session` would write, if any.
pub fn pending_record(session: &Session) -> Option<JournalRecord> {
    let props = session.transaction_properties().into_iter().next()?.1;
    let mut id = None;
    let mut modifications = Vec::new();
    for p in props {
        match p {
            TxnProperty::Id(t) => id = Some(t),
            TxnProperty::Modifications(m) => modifications = m,
            _ => {}
        }
    }
    if modifications.is_empty() {
        return None;
    }
    let generation = session.pending_commit_generation()?.0;
    Some(JournalRecord { generation, id, modifications })
}

/// A commit hook appending to `out`. Write errors fail the commit.
pub fn journal_hook(out: Arc<Mutex<File>>) -> CommitHook {
    Arc::new(move |session: &Session| {
        if let Some(record) = pending_record(session) {
            let mut f = out.lock().unwrap();
            writeln!(f, "{record}").and_then(|_| f.flush()).map_err(|e| {
                genstore_core::Error::Thrown(Term::compound("io_error", vec![Term::string(&e.to_string())]))
            })?;
        }
        Ok(true)
    })
}

pub fn read_journal(path: &Path) -> Result<Vec<JournalRecord>, CliError> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = line.parse().map_err(|e| CliError::Journal(format!("{}:{}: {e}", path.display(), n + 1)))?;
        out.push(record);
    }
    Ok(out)
}

/// Applies `records` in order to a fresh store.
pub fn replay(records: &[JournalRecord]) -> Result<Store, CliError> {
    let store = Store::new();
    let mut s = store.session().map_err(CliError::Store)?;
    for r in records {
        s.begin(genstore_core::TxnKind::Transaction, r.id.clone()).map_err(CliError::Store)?;
        for m in &r.modifications {
            match m {
                Modification::Assertz(t) => s.assertz(t.clone()).map(drop),
                Modification::Asserta(t) => s.asserta(t.clone()).map(drop),
                Modification::Retract(t) => match s.retract(&Pattern::from(t)) {
                    Ok(Some(_)) => Ok(()),
                    Ok(None) => {
                        return Err(CliError::Journal(format!(
                            "generation {}: nothing to retract for {t}",
                            r.generation
                        )))
                    }
                    Err(e) => Err(e),
                },
            }
            .map_err(CliError::Store)?;
        }
        s.commit().map_err(CliError::Store)?;
    }
    drop(s);
    Ok(store)
}

/// Committed clauses in a canonical order: by predicate, then by term.
pub fn canonical_state(store: &Store) -> Vec<String> {
    let mut terms = dump_store(store);
    terms.sort_by(|a, b| (a.indicator(), a).cmp(&(b.indicator(), b)));
    terms.iter().map(Term::to_string).collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct JournalReport {
    pub journal: String,
    pub records: usize,
    pub replay_matches: bool,
    pub live_state: Vec<String>,
    pub replayed_state: Vec<String>,
    pub run_ok: bool,
    pub failures: Vec<String>,
}

impl JournalReport {
    pub fn ok(&self) -> bool {
        self.replay_matches && self.run_ok
    }
}

/// Runs `script` with the journal hook installed, then replays the journal
/// and compares.
pub fn run_journal(script: &Script, out: &Path) -> Result<(JournalReport, RunReport), CliError> {
    check_transactional(script)?;
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let hook = journal_hook(Arc::new(Mutex::new(file)));
    let report = run_script(script, RunOptions { hook: Some(hook), backoff: true, max_retries: None });
    let live = report_state(&report);
    let records = read_journal(out)?;
    let replayed = canonical_state(&replay(&records)?);
    let journal = JournalReport {
        journal: out.display().to_string(),
        records: records.len(),
        replay_matches: live == replayed,
        live_state: live,
        replayed_state: replayed,
        run_ok: report.ok(),
        failures: report.failures.iter().chain(&report.errors).cloned().collect(),
    };
    Ok((journal, report))
}

fn report_state(report: &RunReport) -> Vec<String> {
    let mut terms = report.final_terms.clone();
    terms.sort_by(|a, b| (a.indicator(), a).cmp(&(b.indicator(), b)));
    terms.iter().map(Term::to_string).collect()
}

/// The journal only sees transactions; reject modifications outside them.
fn check_transactional(script: &Script) -> Result<(), CliError> {
    use genstore_checker::script::{Stmt, StmtKind};
    fn walk(block: &[Stmt], in_txn: bool, snapshot: bool) -> Option<&Stmt> {
        for s in block {
            match &s.kind {
                StmtKind::Assertz(_) | StmtKind::Asserta(_) | StmtKind::Retract(_) if !in_txn && !snapshot => {
                    return Some(s)
                }
                StmtKind::Txn { body, constraint, .. } => {
                    if let Some(bad) = walk(body, true, snapshot) {
                        return Some(bad);
                    }
                    if let Some(bad) = constraint.as_ref().and_then(|c| walk(c, true, snapshot)) {
                        return Some(bad);
                    }
                }
                StmtKind::Snapshot(body) => {
                    if let Some(bad) = walk(body, in_txn, true) {
                        return Some(bad);
                    }
                }
                _ => {}
            }
        }
        None
    }
    let blocks = std::iter::once(&script.init)
        .chain(script.sessions.iter().map(|s| &s.body))
        .chain(std::iter::once(&script.finally));
    for b in blocks {
        if let Some(s) = walk(b, false, false) {
            return Err(CliError::Usage(format!(
                "{}:{}: `{}` modifies the database outside a transaction; the journal would miss it",
                s.line, s.column, s.text
            )));
        }
    }
    Ok(())
}

/// A random transactional workload of three parallel sessions.
pub fn random_workload(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut src = String::from("schedule parallel\n\ninit {\n    txn [id(setup)] {\n");
    for i in 0..4 {
        src.push_str(&format!("        assertz(item(0, {i})),\n"));
    }
    src.push_str("        true\n    }\n}\n");
    for k in 1..=3 {
        src.push_str(&format!("\nsession s{k} {{\n"));
        for i in 0..rng.gen_range(3..10) {
            let stmt = match rng.gen_range(0..8) {
                0 | 1 => format!("txn [id(t({k}, {i}))] {{ assertz(item({k}, {i})) }}"),
                2 => format!("txn [restart(true)] {{ retract(item(_, V)), assertz(moved({k}, V)) }}"),
                3 => format!("txn {{ asserta(item({k}, {i})), assertz(tmp({k}, {i})), retract(tmp({k}, {i})) }}"),
                4 => format!("txn {{ assertz(item({k}, {i})), fail }}"),
                5 => format!("txn [restart(true)] {{ assertz(a({k}, {i})), txn {{ assertz(b({k}, {i})) }}, retract(moved(_, _)) }}"),
                6 => format!(
                    "txn {{ assertz(c({k}, {i})) }} constraint {{ count(c({k}, _), N), N =< {} }}",
                    rng.gen_range(1..4)
                ),
                _ => format!("snapshot {{ assertz(item({k}, {i})), count(item(_, _), _) }}"),
            };
            src.push_str(&format!("    {stmt}\n"));
        }
        src.push_str("}\n");
    }
    src
}
