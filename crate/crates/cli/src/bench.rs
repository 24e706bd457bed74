//! Concurrent bank transfers with a snapshot auditor.

use std::sync::atomic::{AtomicBool, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use genstore_core::{
    gc_background, gc_sweep, GcStats, Pattern, Result as CoreResult, Session, SessionStats, Store, Term, TxnOptions,
};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BenchConfig {
    pub threads: usize,
    pub accounts: usize,
    /// Transfers per worker thread.
    pub transfers: usize,
    pub initial_balance: i64,
    pub seed: u64,
    pub gc: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { threads: 4, accounts: 16, transfers: 1000, initial_balance: 100, seed: 1, gc: true }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.threads < 1 {
            return Err(CliError::Usage("threads must be at least 1".into()));
        }
        if self.accounts < 2 {
            return Err(CliError::Usage("accounts must be at least 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct GcReport {
    pub unlinked: u64,
    pub reclaimed: u64,
    pub oldest_active: u64,
    pub micros: u64,
}

impl GcReport {
    pub fn from_stats(s: &GcStats) -> Self {
        GcReport {
            unlinked: s.clauses_unlinked as u64,
            reclaimed: s.clauses_reclaimed,
            oldest_active: s.oldest_active.0,
            micros: s.sweep_duration.as_micros() as u64,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub threads: usize,
    pub accounts: usize,
    pub transfers_per_thread: usize,
    pub initial_balance: i64,
    pub seed: u64,
    pub gc: bool,
    pub expected_total: i64,
    pub final_total: i64,
    pub balances: Vec<i64>,
    pub commits: u64,
    pub conflicts: u64,
    pub retries: u64,
    pub snapshots: u64,
    pub snapshot_mismatches: u64,
    pub elapsed_secs: f64,
    pub transfers_per_sec: f64,
    /// Background sweeps run during the benchmark.
    pub gc_sweeps: u64,
    /// The sweep after all workers finished.
    pub gc_final: Option<GcReport>,
    pub linked_clauses: usize,
    pub dead_linked_clauses: usize,
    pub ok: bool,
    pub violation: Option<String>,
}

fn balance(account: usize, amount: i64) -> Term {
    Term::compound("balance", vec![Term::Int(account as i64), Term::Int(amount)])
}

fn balance_of(account: usize) -> Pattern {
    Pattern::compound("balance", vec![Pattern::Int(account as i64), Pattern::var("B")])
}

fn amount_of(t: &Term) -> i64 {
    t.args()[1].as_int().expect("balance amounts are integers")
}

/// One transfer, written like the textbook version: retract both balances,
/// assert the new ones. Fails if an account is missing.
pub fn transfer(s: &Session, from: usize, to: usize, amount: i64) -> CoreResult<Option<()>> {
    let Some(f) = s.retract(&balance_of(from))? else { return Ok(None) };
    let Some(t) = s.retract(&balance_of(to))? else { return Ok(None) };
    s.asserta(balance(from, amount_of(&f) - amount))?;
    s.asserta(balance(to, amount_of(&t) + amount))?;
    Ok(Some(()))
}

fn total(s: &Session) -> CoreResult<i64> {
    let all = Pattern::compound("balance", vec![Pattern::Any, Pattern::Any]);
    Ok(s.query_all(&all)?.iter().map(amount_of).sum())
}

/// Snapshots taken, snapshots with a wrong sum, and the first bad sum.
type Audit = (u64, u64, Option<String>);

pub fn run_bank_bench(config: &BenchConfig) -> Result<BenchReport, CliError> {
    config.validate()?;
    let store = Store::new();
    let expected = config.accounts as i64 * config.initial_balance;
    {
        let mut s = store.session()?;
        s.transaction(|s| {
            for a in 0..config.accounts {
                s.assertz(balance(a, config.initial_balance))?;
            }
            Ok(Some(()))
        })?;
    }
    let collector = if config.gc { Some(gc_background(&store, Duration::from_millis(1), 64)?) } else { None };
    let done = AtomicBool::new(false);
    let started = Instant::now();
    let (workers, auditor) = thread::scope(|scope| -> Result<(Vec<SessionStats>, Audit), CliError> {
        let auditor = {
            let mut s = store.session()?;
            let done = &done;
            scope.spawn(move || -> CoreResult<Audit> {
                let (mut count, mut mismatches, mut first) = (0u64, 0u64, None);
                loop {
                    let last = done.load(Ordering::Acquire);
                    let sum = s.snapshot(|s| total(s).map(Some))?.expect("snapshot goal succeeds");
                    count += 1;
                    if sum != expected {
                        mismatches += 1;
                        first.get_or_insert_with(|| format!("snapshot {count} summed to {sum}, expected {expected}"));
                    }
                    if last {
                        return Ok((count, mismatches, first));
                    }
                    thread::yield_now();
                }
            })
        };
        let mut handles = Vec::new();
        for t in 0..config.threads {
            let mut s = store.session()?;
            let seed = config.seed.wrapping_add(t as u64);
            let (accounts, transfers) = (config.accounts, config.transfers);
            handles.push(scope.spawn(move || -> CoreResult<SessionStats> {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let options = TxnOptions::default().restart(true);
                for _ in 0..transfers {
                    let pair = sample(&mut rng, accounts, 2);
                    let (from, to) = (pair.index(0), pair.index(1));
                    let amount = rng.gen_range(1..=10);
                    let moved = s.transaction_with_options(|s| transfer(s, from, to, amount), &options)?;
                    assert!(moved.is_some(), "account {from} or {to} disappeared");
                }
                Ok(s.stats())
            }));
        }
        let mut stats = Vec::new();
        for h in handles {
            stats.push(h.join().expect("worker panicked")?);
        }
        done.store(true, Ordering::Release);
        let audit = auditor.join().expect("auditor panicked")?;
        Ok((stats, audit))
    })?;
    let elapsed = started.elapsed();
    let gc_sweeps = collector.map_or(0, |c| c.stop());
    let gc_final = config.gc.then(|| GcReport::from_stats(&gc_sweep(&store)));
    let s = store.session()?;
    let mut balances = vec![0; config.accounts];
    for (a, b) in balances.iter_mut().enumerate() {
        let rows = s.query_all(&balance_of(a))?;
        if rows.len() != 1 {
            return Err(CliError::Usage(format!("account {a} has {} balance clauses", rows.len())));
        }
        *b = amount_of(&rows[0]);
    }
    let final_total = total(&s)?;
    drop(s);
    let (snapshots, snapshot_mismatches, first_mismatch) = auditor;
    let sum = |f: fn(&SessionStats) -> u64| workers.iter().map(f).sum::<u64>();
    let moved = (config.threads * config.transfers) as f64;
    let violation = if final_total != expected {
        Some(format!("final total {final_total}, expected {expected}"))
    } else {
        first_mismatch
    };
    Ok(BenchReport {
        threads: config.threads,
        accounts: config.accounts,
        transfers_per_thread: config.transfers,
        initial_balance: config.initial_balance,
        seed: config.seed,
        gc: config.gc,
        expected_total: expected,
        final_total,
        balances,
        commits: sum(|s| s.commits),
        conflicts: sum(|s| s.conflicts),
        retries: sum(|s| s.restarts),
        snapshots,
        snapshot_mismatches,
        elapsed_secs: elapsed.as_secs_f64(),
        transfers_per_sec: moved / elapsed.as_secs_f64().max(1e-9),
        gc_sweeps,
        gc_final,
        linked_clauses: store.linked_clauses(),
        dead_linked_clauses: store.dead_linked_clauses(),
        ok: violation.is_none(),
        violation,
    })
}
