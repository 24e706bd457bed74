//! Running a script: sequentially, under an explicit schedule, with one
//! thread per session, or step by step for the explorer.

use std::thread;

use genstore_core::{CommitOrder, Store, StoreConfig, Term};
use serde::Serialize;

use crate::history::{check_serializable, History, Verdict};
use crate::machine::{Barriers, CommitHook, Machine, MachineConfig, MachineStats, Pending, Status};
use crate::script::{ScheduleSpec, Script};

#[derive(Clone, Default)]
pub struct RunOptions {
    /// Restart cap used when neither the transaction nor the script sets one.
    pub max_retries: Option<u32>,
    pub backoff: bool,
    pub hook: Option<CommitHook>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SessionReport {
    pub name: String,
    #[serde(flatten)]
    pub stats: StatsReport,
    pub log: Vec<String>,
}

#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq, Eq)]
pub struct StatsReport {
    pub commits: u64,
    pub conflicts: u64,
    pub restarts: u64,
    pub aborts: u64,
}

impl From<MachineStats> for StatsReport {
    fn from(s: MachineStats) -> Self {
        StatsReport { commits: s.commits, conflicts: s.conflicts, restarts: s.restarts, aborts: s.aborts }
    }
}

/// Outcome of one run of a script.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub sessions: Vec<SessionReport>,
    /// Failed expectations in execution order, from every session and the
    /// `final` block.
    pub failures: Vec<String>,
    /// Scheduling problems: deadlocks and schedule items naming a session
    /// that cannot step.
    pub errors: Vec<String>,
    /// Steps taken, as (session, step index of that session).
    pub schedule: Vec<(usize, usize)>,
    /// Committed clauses at the end, grouped by predicate.
    pub final_store: Vec<String>,
    pub generation: u64,
    #[serde(skip)]
    pub final_terms: Vec<Term>,
    #[serde(skip)]
    pub history: History,
    #[serde(skip)]
    pub verdict: Verdict,
}

impl RunReport {
    pub fn ok(&self) -> bool {
        self.failures.is_empty() && self.errors.is_empty() && self.verdict.is_serializable()
    }

    pub fn totals(&self) -> StatsReport {
        let mut t = StatsReport::default();
        for s in &self.sessions {
            t.commits += s.stats.commits;
            t.conflicts += s.stats.conflicts;
            t.restarts += s.stats.restarts;
            t.aborts += s.stats.aborts;
        }
        t
    }

    pub fn violation(&self) -> Option<String> {
        if let Some(e) = self.errors.first() {
            return Some(e.clone());
        }
        if let Verdict::Violation(why) = &self.verdict {
            return Some(format!("not serializable: {why}"));
        }
        self.failures.first().map(|f| format!("expectation failed: {f}"))
    }
}

/// Committed clauses of every predicate, in link order per predicate.
pub fn dump_store(store: &Store) -> Vec<Term> {
    let session = store.session().expect("session for dump");
    let mut preds = session.store().predicates();
    preds.sort();
    let mut out = Vec::new();
    for p in preds {
        out.extend(session.query_all(&p.most_general()).expect("query"));
    }
    out
}

fn store_for(script: &Script) -> Store {
    let order = if script.increment_first { CommitOrder::IncrementFirst } else { CommitOrder::Publish };
    Store::with_config(StoreConfig { commit_order: order, ..StoreConfig::default() })
}

/// Sessions of one script run, driven one step at a time.
pub struct World {
    script: Script,
    store: Store,
    config: MachineConfig,
    machines: Vec<Machine>,
    barriers: Barriers,
    initial: Vec<Term>,
    failures: Vec<String>,
    errors: Vec<String>,
    schedule: Vec<(usize, usize)>,
    steps: Vec<usize>,
    init_logs: Vec<String>,
}

impl World {
    /// Creates the store, runs the `init` block and positions every session
    /// before its first store operation.
    pub fn new(script: &Script, options: RunOptions) -> World {
        let store = store_for(script);
        let config = MachineConfig {
            granularity: script.granularity,
            max_retries: script.max_retries.or(options.max_retries),
            backoff: options.backoff,
            hook: options.hook.clone(),
        };
        let barriers = Barriers::new(script.barriers());
        let mut init = Machine::new(
            script.sessions.len(),
            "init",
            store.session().expect("session"),
            script.init.clone(),
            config.clone(),
        );
        let mut errors = Vec::new();
        if !init.run_to_end(&Barriers::new(Vec::new())) {
            errors.push("init block did not finish".to_string());
        }
        let failures = init.failures().to_vec();
        let init_logs = init.log().to_vec();
        drop(init);
        let initial = dump_store(&store);
        let mut machines: Vec<Machine> = script
            .sessions
            .iter()
            .enumerate()
            .map(|(i, s)| Machine::new(i, &s.name, store.session().expect("session"), s.body.clone(), config.clone()))
            .collect();
        for m in &mut machines {
            m.advance(&barriers);
        }
        let steps = vec![0; machines.len()];
        World {
            script: script.clone(),
            store,
            config,
            machines,
            barriers,
            initial,
            failures,
            errors,
            schedule: Vec::new(),
            steps,
            init_logs,
        }
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn machines(&self) -> &[Machine] {
        &self.machines
    }

    fn refresh(&mut self) {
        for m in &mut self.machines {
            if matches!(m.status(), Status::AtSync(_)) {
                m.poll(&self.barriers);
            }
        }
    }

    /// Why session `i` cannot step now, if it cannot.
    pub fn blocked_reason(&self, i: usize) -> Option<String> {
        let m = &self.machines[i];
        match m.pending(&self.barriers) {
            Pending::Done => Some(format!("session {} has finished", m.name())),
            Pending::Blocked => match m.status() {
                Status::AtSync(b) => Some(format!("session {} is waiting at sync({b})", m.name())),
                _ => Some(format!("session {} is blocked", m.name())),
            },
            Pending::Ready { needs_lock: true } => self
                .machines
                .iter()
                .enumerate()
                .find(|(j, o)| *j != i && o.is_committing())
                .map(|(_, o)| format!("session {} needs the commit lock held by {}", m.name(), o.name())),
            Pending::Ready { needs_lock: false } => None,
        }
    }

    /// Sessions that can take a step without blocking.
    pub fn enabled(&mut self) -> Vec<usize> {
        self.refresh();
        (0..self.machines.len()).filter(|&i| self.blocked_reason(i).is_none()).collect()
    }

    pub fn all_done(&self) -> bool {
        self.machines.iter().all(|m| *m.status() == Status::Done)
    }

    pub fn step(&mut self, i: usize) {
        self.schedule.push((i, self.steps[i]));
        self.steps[i] += 1;
        self.machines[i].step(&self.barriers);
        self.refresh();
    }

    fn deadlock(&self) -> String {
        let waiting: Vec<String> = (0..self.machines.len()).filter_map(|i| self.blocked_reason(i)).collect();
        format!("deadlock: {}", waiting.join("; "))
    }

    /// Runs every session to completion, lowest-numbered enabled session
    /// first.
    pub fn run_remaining(&mut self) {
        loop {
            let enabled = self.enabled();
            if self.all_done() {
                return;
            }
            let Some(&i) = enabled.first() else {
                let msg = self.deadlock();
                self.errors.push(msg);
                return;
            };
            while self.blocked_reason(i).is_none() {
                self.step(i);
            }
        }
    }

    /// Follows explicit schedule items, then runs what is left.
    pub fn run_explicit(&mut self, items: &[crate::script::ScheduleItem]) {
        for (k, item) in items.iter().enumerate() {
            let i = self.script.session_index(&item.session).expect("schedule checked by the parser");
            self.refresh();
            if let Some(why) = self.blocked_reason(i) {
                if item.to_end && *self.machines[i].status() == Status::Done {
                    continue;
                }
                self.errors.push(format!("schedule item {}: {why}", k + 1));
                return;
            }
            self.step(i);
            while item.to_end && self.blocked_reason(i).is_none() {
                self.step(i);
            }
        }
        self.run_remaining();
    }

    /// Runs the `final` block and checks the history.
    pub fn finish(mut self) -> RunReport {
        let mut sessions = Vec::new();
        let mut units = Vec::new();
        for m in &self.machines {
            self.failures.extend(m.failures().iter().cloned());
            units.extend(m.units().iter().cloned());
        }
        let config = MachineConfig { backoff: false, ..self.config.clone() };
        let n = self.machines.len();
        for m in self.machines.drain(..) {
            sessions.push(SessionReport { name: m.name().to_string(), stats: m.stats().into(), log: m.log().to_vec() });
        }
        let mut last =
            Machine::new(n + 1, "final", self.store.session().expect("session"), self.script.finally.clone(), config);
        if !last.run_to_end(&Barriers::new(Vec::new())) {
            self.errors.push("final block did not finish".to_string());
        }
        self.failures.extend(last.failures().iter().cloned());
        let history = History { initial: self.initial.clone(), units, trailing: last.units().to_vec() };
        let verdict = check_serializable(&history);
        let mut final_log = self.init_logs.clone();
        final_log.extend(last.log().iter().cloned());
        if !final_log.is_empty() {
            sessions.push(SessionReport { name: "init/final".into(), stats: StatsReport::default(), log: final_log });
        }
        drop(last);
        let final_terms = dump_store(&self.store);
        RunReport {
            sessions,
            failures: self.failures,
            errors: self.errors,
            schedule: self.schedule,
            final_store: final_terms.iter().map(Term::to_string).collect(),
            final_terms,
            generation: self.store.current_generation().0,
            history,
            verdict,
        }
    }
}

/// Runs a script according to its schedule directive.
pub fn run_script(script: &Script, options: RunOptions) -> RunReport {
    match &script.schedule {
        ScheduleSpec::Sequential => {
            let mut w = World::new(script, options);
            w.run_remaining();
            w.finish()
        }
        ScheduleSpec::Explicit(items) => {
            let mut w = World::new(script, options);
            w.run_explicit(items);
            w.finish()
        }
        ScheduleSpec::Parallel => run_parallel(script, options),
    }
}

/// One native thread per session.
fn run_parallel(script: &Script, options: RunOptions) -> RunReport {
    let mut world = World::new(script, RunOptions { backoff: true, ..options });
    let machines: Vec<Machine> = world.machines.drain(..).collect();
    let barriers = &world.barriers;
    let finished: Vec<Machine> = thread::scope(|scope| {
        let handles: Vec<_> = machines
            .into_iter()
            .map(|mut m| {
                scope.spawn(move || {
                    loop {
                        m.poll(barriers);
                        match m.pending(barriers) {
                            Pending::Done => break,
                            Pending::Blocked => {
                                if let Status::AtSync(name) = m.status().clone() {
                                    barriers.wait(&name);
                                }
                            }
                            Pending::Ready { .. } => m.step(barriers),
                        }
                    }
                    m
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("session thread panicked")).collect()
    });
    world.machines = finished;
    world.finish()
}
