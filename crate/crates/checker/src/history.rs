//! Observed histories and a brute-force serializability check.
//!
//! A history is a list of units per session. A unit is an outermost
//! transaction, an outermost snapshot or a single operation outside any
//! transaction. Each unit carries what it observed. The check looks for an
//! order of the completed units, consistent with each session's program
//! order, in which replaying every unit against a plain multiset of clauses
//! reproduces every observation. Aborted units must have no effect and are
//! left out; snapshot units are replayed but their writes are dropped.

use std::collections::{BTreeMap, HashSet};

use genstore_core::{Pattern, Term};

#[derive(Clone, Debug, PartialEq)]
pub enum Obs {
    Assert(Term),
    /// Pattern as issued and the clause removed, if any.
    Retract(Pattern, Option<Term>),
    /// First match of a query, if any.
    First(Pattern, Option<Term>),
    /// Every match of a query.
    All(Pattern, Vec<Term>),
    NestBegin,
    NestCommit,
    NestRollback,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitKind {
    Bare,
    Transaction,
    Snapshot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnitEnd {
    /// Completed. Carries the generation published, if any.
    Committed(Option<u64>),
    Aborted,
    /// Still running when the history was taken.
    Open,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Unit {
    pub session: usize,
    pub kind: UnitKind,
    pub obs: Vec<Obs>,
    pub end: UnitEnd,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    /// Committed clauses before any session ran.
    pub initial: Vec<Term>,
    pub units: Vec<Unit>,
    /// Units that must come after every other unit, such as the final
    /// checks of a script.
    pub trailing: Vec<Unit>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Verdict {
    /// A witness order, as indices into `History::units`.
    Serializable(Vec<usize>),
    Violation(String),
}

impl Verdict {
    pub fn is_serializable(&self) -> bool {
        matches!(self, Verdict::Serializable(_))
    }
}

type State = BTreeMap<Term, usize>;

fn add(state: &mut State, t: &Term) {
    *state.entry(t.clone()).or_insert(0) += 1;
}

fn remove(state: &mut State, t: &Term) -> bool {
    match state.get_mut(t) {
        Some(n) if *n > 1 => {
            *n -= 1;
            true
        }
        Some(_) => {
            state.remove(t);
            true
        }
        None => false,
    }
}

fn matches_of(state: &State, p: &Pattern) -> Vec<Term> {
    let mut out = Vec::new();
    for (t, n) in state {
        if p.matches(t).is_some() {
            out.extend(std::iter::repeat_n(t.clone(), *n));
        }
    }
    out
}

/// Replays `unit` on `state`. Returns the description of the first
/// observation the state cannot explain.
fn replay(unit: &Unit, state: &mut State) -> Result<(), String> {
    let mut work = state.clone();
    let mut saved: Vec<State> = Vec::new();
    for obs in &unit.obs {
        match obs {
            Obs::Assert(t) => add(&mut work, t),
            Obs::Retract(p, Some(t)) | Obs::First(p, Some(t)) => {
                if p.matches(t).is_none() || !work.contains_key(t) {
                    return Err(format!("{t} was not available"));
                }
                if matches!(obs, Obs::Retract(..)) {
                    remove(&mut work, t);
                }
            }
            Obs::Retract(p, None) | Obs::First(p, None) => {
                if let Some(t) = matches_of(&work, p).first() {
                    return Err(format!("{p} found nothing although {t} was present"));
                }
            }
            Obs::All(p, seen) => {
                let mut seen = seen.clone();
                seen.sort();
                let expected = matches_of(&work, p);
                if seen != expected {
                    return Err(format!("{p} saw {} clause(s), expected {}", seen.len(), expected.len()));
                }
            }
            Obs::NestBegin => saved.push(work.clone()),
            Obs::NestCommit => {
                saved.pop();
            }
            Obs::NestRollback => {
                if let Some(s) = saved.pop() {
                    work = s;
                }
            }
        }
    }
    if unit.kind != UnitKind::Snapshot {
        *state = work;
    }
    Ok(())
}

fn describe(unit: &Unit, index: usize) -> String {
    let kind = match unit.kind {
        UnitKind::Bare => "operation",
        UnitKind::Transaction => "transaction",
        UnitKind::Snapshot => "snapshot",
    };
    format!("{kind} #{index} of session {}", unit.session)
}

/// Searches for a serial order of the completed units.
pub fn check_serializable(history: &History) -> Verdict {
    let mut per_session: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, u) in history.units.iter().enumerate() {
        if matches!(u.end, UnitEnd::Committed(_)) {
            per_session.entry(u.session).or_default().push(i);
        }
    }
    let queues: Vec<Vec<usize>> = per_session.into_values().collect();
    let mut state = State::new();
    for t in &history.initial {
        add(&mut state, t);
    }
    let mut search = Search {
        history,
        queues: &queues,
        pos: vec![0; queues.len()],
        order: Vec::new(),
        visited: HashSet::new(),
        deepest: (0, String::new()),
    };
    if search.dfs(&state) {
        return Verdict::Serializable(search.order);
    }
    let (depth, why) = search.deepest;
    let total: usize = queues.iter().map(Vec::len).sum();
    Verdict::Violation(format!(
        "no serial order of the {total} completed units explains the observations; \
         longest explainable prefix has {depth} unit(s), then {why}"
    ))
}

struct Search<'a> {
    history: &'a History,
    queues: &'a [Vec<usize>],
    pos: Vec<usize>,
    order: Vec<usize>,
    visited: HashSet<Vec<usize>>,
    deepest: (usize, String),
}

impl Search<'_> {
    fn note(&mut self, why: String) {
        if self.deepest.1.is_empty() || self.order.len() > self.deepest.0 {
            self.deepest = (self.order.len(), why);
        }
    }

    fn dfs(&mut self, state: &State) -> bool {
        if !self.visited.insert(self.pos.clone()) {
            return false;
        }
        let mut done = true;
        for s in 0..self.queues.len() {
            let Some(&u) = self.queues[s].get(self.pos[s]) else {
                continue;
            };
            done = false;
            let unit = &self.history.units[u];
            let mut next = state.clone();
            match replay(unit, &mut next) {
                Ok(()) => {
                    self.pos[s] += 1;
                    self.order.push(u);
                    if self.dfs(&next) {
                        return true;
                    }
                    self.order.pop();
                    self.pos[s] -= 1;
                }
                Err(why) => self.note(format!("{}: {why}", describe(unit, u))),
            }
        }
        if !done {
            return false;
        }
        let mut end = state.clone();
        for (i, unit) in self.history.trailing.iter().enumerate() {
            if let Err(why) = replay(unit, &mut end) {
                self.note(format!("final check #{i}: {why}"));
                return false;
            }
        }
        true
    }
}
