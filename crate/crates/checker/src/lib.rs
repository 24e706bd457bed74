//! Oracles for the fact store: a naive reference implementation, random
//! single-session programs, a serializability checker and a deterministic
//! interleaving explorer for multi-session scripts.

pub mod explore;
pub mod history;
pub mod laws;
pub mod machine;
pub mod program;
pub mod reference;
pub mod run;
pub mod script;

pub use explore::{explore, replay, Exploration, ScheduleOutcome, ViolationRecord};
pub use history::{check_serializable, History, Obs, Unit, UnitEnd, UnitKind, Verdict};
pub use machine::{Barriers, CommitHook, Machine, MachineConfig, MachineStats, Pending};
pub use program::{random_program, run_reference, run_store, Op, Outcome, Trace};
pub use reference::ReferenceStore;
pub use run::{dump_store, run_script, RunOptions, RunReport, SessionReport, StatsReport, World};
pub use script::{parse_script, Granularity, ScheduleSpec, Script};
