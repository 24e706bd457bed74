//! Nesting laws, checked on generated single-session programs.
//!
//! Wrapping a balanced stretch of a program in a nested begin/commit pair
//! changes no operation result and no final state. A nested rollback
//! restores exactly the state seen at its begin marker.

use genstore_core::{Pattern, Store, Term, TxnKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::program::{closing_ops, random_program, run_on_reference, run_on_session, Op, Outcome, PREDICATES};
use crate::reference::ReferenceStore;
use crate::run::dump_store;

/// Positions before which no cursor is open, with the nesting depth there.
fn boundaries(ops: &[Op]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let (mut depth, mut cursors) = (0usize, 0usize);
    for (i, op) in ops.iter().enumerate() {
        if cursors == 0 {
            out.push((i, depth));
        }
        match op {
            Op::Begin(_) => depth += 1,
            Op::Commit | Op::Rollback => depth -= 1,
            Op::Open(_) => cursors += 1,
            Op::CloseCursors => cursors = 0,
            _ => {}
        }
    }
    if cursors == 0 {
        out.push((ops.len(), depth));
    }
    out
}

/// A stretch `i..j` that starts and ends at the same depth, never leaves
/// it, and has no cursor open at either end.
fn pick_segment(ops: &[Op], rng: &mut impl Rng) -> (usize, usize) {
    let bounds = boundaries(ops);
    let (i, d) = bounds[rng.gen_range(0..bounds.len())];
    let mut ends = Vec::new();
    let mut depth = d;
    let mut k = i;
    for &(j, dj) in bounds.iter().filter(|(j, _)| *j >= i) {
        while k < j {
            match ops[k] {
                Op::Begin(_) => depth += 1,
                Op::Commit | Op::Rollback => depth -= 1,
                _ => {}
            }
            k += 1;
        }
        if depth < d {
            break;
        }
        if dj == d {
            ends.push(j);
        }
    }
    (i, ends[rng.gen_range(0..ends.len())])
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1a2b)
}

fn run_with_final(ops: &[Op]) -> (Vec<(Outcome, u64)>, Vec<Term>) {
    let store = Store::new();
    let mut s = store.session().expect("session");
    let trace = run_on_session(&mut s, ops);
    drop(s);
    (trace, dump_store(&store))
}

fn observable(ops: &[Op], trace: &[(Outcome, u64)]) -> Vec<Outcome> {
    ops.iter().zip(trace).filter(|(op, _)| !op.is_structural()).map(|(_, (o, _))| o.clone()).collect()
}

/// Wraps a random balanced stretch of program `seed` in begin/commit.
pub fn check_wrap(seed: u64) -> Result<(), String> {
    let ops = random_program(seed, 50);
    let (i, j) = pick_segment(&ops, &mut rng_for(seed));
    let mut wrapped = ops[..i].to_vec();
    wrapped.push(Op::Begin(TxnKind::Transaction));
    wrapped.extend_from_slice(&ops[i..j]);
    wrapped.push(Op::Commit);
    wrapped.extend_from_slice(&ops[j..]);
    let (plain_trace, plain_final) = run_with_final(&ops);
    let (wrapped_trace, wrapped_final) = run_with_final(&wrapped);
    if observable(&ops, &plain_trace) != observable(&wrapped, &wrapped_trace) {
        return Err(format!("seed {seed}: wrapping ops {i}..{j} changed an operation result"));
    }
    if plain_final != wrapped_final {
        return Err(format!("seed {seed}: wrapping ops {i}..{j} changed the final state"));
    }
    Ok(())
}

fn state_queries() -> Vec<Op> {
    PREDICATES.iter().map(|(name, arity)| Op::Query(Pattern::compound(name, vec![Pattern::Any; *arity]))).collect()
}

/// Opens a nested transaction at a random point of program `seed`, runs a
/// balanced stretch inside it and rolls it back.
pub fn check_rollback(seed: u64) -> Result<(), String> {
    rollback_case(seed, Op::Rollback)
}

fn rollback_case(seed: u64, end: Op) -> Result<(), String> {
    let ops = random_program(seed, 50);
    let mut rng = rng_for(seed);
    let (i, j) = pick_segment(&ops, &mut rng);
    let queries = state_queries();
    let mut prog = ops[..i].to_vec();
    prog.extend(queries.iter().cloned());
    let before = prog.len();
    prog.push(Op::Begin(TxnKind::Transaction));
    prog.extend_from_slice(&ops[i..j]);
    prog.push(end);
    let after = prog.len();
    prog.extend(queries.iter().cloned());
    let closing = closing_ops(&prog, &mut rng);
    prog.extend(closing);
    let (trace, _) = run_with_final(&prog);
    let at_marker = &trace[before - queries.len()..before];
    let after_rollback = &trace[after..after + queries.len()];
    let rows = |t: &[(Outcome, u64)]| t.iter().map(|(o, _)| o.clone()).collect::<Vec<_>>();
    if rows(at_marker) != rows(after_rollback) {
        return Err(format!("seed {seed}: rollback of ops {i}..{j} did not restore the marker state"));
    }
    let reference = run_on_reference(&mut ReferenceStore::new(), &prog);
    if reference != trace {
        return Err(format!("seed {seed}: nested rollback program diverges from the reference"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segments_are_balanced() {
        for seed in 0..300 {
            let ops = random_program(seed, 50);
            let (i, j) = pick_segment(&ops, &mut rng_for(seed));
            let mut depth = 0i32;
            for op in &ops[i..j] {
                match op {
                    Op::Begin(_) => depth += 1,
                    Op::Commit | Op::Rollback => depth -= 1,
                    _ => {}
                }
                assert!(depth >= 0, "seed {seed}");
            }
            assert_eq!(depth, 0, "seed {seed}");
        }
    }

    #[test]
    fn committing_instead_of_rolling_back_breaks_the_law() {
        let broken = (0..200).filter(|&s| rollback_case(s, Op::Commit).is_err()).count();
        assert!(broken > 50, "only {broken} seeds noticed");
    }
}
