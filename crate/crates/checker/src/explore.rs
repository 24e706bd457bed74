//! Deterministic interleaving explorer.
//!
//! Each schedule is run from scratch on a fresh store. At every step the
//! explorer records which sessions could move; the next schedule changes
//! the deepest choice that still has an untried alternative. With a large
//! enough budget this enumerates every interleaving of store operations.

use serde::Serialize;

use crate::run::{RunOptions, RunReport, StatsReport, World};
use crate::script::Script;

/// Restart cap applied during exploration when the script sets none.
pub const EXPLORE_MAX_RETRIES: u32 = 3;

/// A failing schedule, ready to be replayed.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct ViolationRecord {
    pub program: String,
    pub schedule: Vec<(usize, usize)>,
    pub violation: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScheduleOutcome {
    pub schedule: Vec<(usize, usize)>,
    pub totals: StatsReport,
    pub violation: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct Exploration {
    pub schedules: usize,
    /// Every interleaving was covered within the budget.
    pub exhaustive: bool,
    pub budget: usize,
    pub violations: usize,
    pub first_violation: Option<ViolationRecord>,
    pub outcomes: Vec<ScheduleOutcome>,
}

impl Exploration {
    pub fn ok(&self) -> bool {
        self.violations == 0
    }
}

fn options() -> RunOptions {
    RunOptions { max_retries: Some(EXPLORE_MAX_RETRIES), backoff: false, hook: None }
}

/// Runs `script` under one schedule given as the sequence of sessions to
/// step. Sessions still unfinished afterwards run to completion.
pub fn replay(script: &Script, sessions: &[usize]) -> RunReport {
    let mut world = World::new(script, options());
    for &i in sessions {
        if !world.enabled().contains(&i) {
            break;
        }
        world.step(i);
    }
    world.run_remaining();
    world.finish()
}

/// Explores up to `budget` schedules of `script`.
pub fn explore(script: &Script, budget: usize) -> Exploration {
    let mut choices: Vec<(usize, usize)> = Vec::new();
    let mut out = Exploration {
        schedules: 0,
        exhaustive: false,
        budget,
        violations: 0,
        first_violation: None,
        outcomes: Vec::new(),
    };
    while out.schedules < budget {
        let mut world = World::new(script, options());
        let mut depth = 0;
        loop {
            let enabled = world.enabled();
            if enabled.is_empty() {
                break;
            }
            let pick = match choices.get(depth) {
                Some(&(c, n)) => {
                    assert_eq!(n, enabled.len(), "schedule {depth} is not reproducible");
                    c
                }
                None => {
                    choices.push((0, enabled.len()));
                    0
                }
            };
            world.step(enabled[pick]);
            depth += 1;
        }
        // Records the deadlock, if any.
        world.run_remaining();
        let report = world.finish();
        out.schedules += 1;
        let violation = report.violation();
        if let Some(v) = &violation {
            out.violations += 1;
            if out.first_violation.is_none() {
                out.first_violation = Some(ViolationRecord {
                    program: script.source.clone(),
                    schedule: report.schedule.clone(),
                    violation: v.clone(),
                });
            }
        }
        let totals = report.totals();
        out.outcomes.push(ScheduleOutcome { schedule: report.schedule, totals, violation });
        while choices.last().is_some_and(|&(c, n)| c + 1 >= n) {
            choices.pop();
        }
        match choices.last_mut() {
            Some(last) => last.0 += 1,
            None => {
                out.exhaustive = true;
                break;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::script::parse_script;

    #[test]
    fn three_plus_three_steps_give_twenty_schedules() {
        let s = parse_script(
            "session a { assertz(f(1)), assertz(f(2)), assertz(f(3)) }
             session b { count(f(_), _), count(f(_), _), count(f(_), _) }",
        )
        .unwrap();
        let e = explore(&s, 1000);
        assert!(e.exhaustive);
        assert_eq!(e.schedules, 20);
        assert!(e.ok());
    }

    #[test]
    fn budget_limits_coverage() {
        let s = parse_script("session a { assertz(f(1)), assertz(f(2)) } session b { assertz(g(1)), assertz(g(2)) }")
            .unwrap();
        let e = explore(&s, 4);
        assert!(!e.exhaustive);
        assert_eq!(e.schedules, 4);
    }

    #[test]
    fn deadlock_is_reported() {
        let s = parse_script(
            "session a { sync(x), sync(y) }
             session b { sync(y), sync(x) }",
        )
        .unwrap();
        let e = explore(&s, 10);
        assert_eq!(e.violations, 1);
        assert!(e.first_violation.unwrap().violation.starts_with("deadlock"));
    }

    #[test]
    fn replay_reproduces_a_schedule() {
        let s = parse_script(
            "session a { assertz(f(1)) }
             session b { count(f(_), N), expect(N =:= 0) }",
        )
        .unwrap();
        let e = explore(&s, 10);
        assert_eq!(e.schedules, 2);
        let bad = e.first_violation.expect("b sees f(1) when a goes first");
        let order: Vec<usize> = bad.schedule.iter().map(|&(s, _)| s).collect();
        let r = replay(&s, &order);
        assert_eq!(r.schedule, bad.schedule);
        assert!(!r.ok());
    }
}
