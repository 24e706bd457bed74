//! Generation numbers and the partitioning of the generation space.
//!
//! ```text
//! 0 | 1 .. G_TBASE          | G_TBASE + sid*G_TMAX .. G_TBASE + (sid+1)*G_TMAX | ... | INFINITY
//!   | globally visible      | transaction-local range of session `sid`          |
//! ```
//!
//! Writes inside a transaction are stamped in the session's local range,
//! which lies "in the future" for every global view.

use std::fmt;

/// Start of the transaction-local area.
pub const G_TBASE: u64 = 1 << 62;
/// Size of one session's local range.
pub const G_TMAX: u64 = 1 << 31;
/// Died generation of a clause that has not been retracted.
pub const GEN_INFINITY: u64 = u64::MAX;
/// Number of session ranges that fit between `G_TBASE` and `GEN_INFINITY`.
pub const MAX_SESSIONS: u64 = (GEN_INFINITY - G_TBASE) / G_TMAX;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Default)]
pub struct Generation(pub u64);

impl Generation {
    pub const INFINITY: Generation = Generation(GEN_INFINITY);

    pub fn is_global(self) -> bool {
        self.0 < G_TBASE
    }

    pub fn next(self) -> Generation {
        Generation(self.0 + 1)
    }
}

impl fmt::Display for Generation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 == GEN_INFINITY {
            f.write_str("inf")
        } else if self.0 >= G_TBASE {
            let off = self.0 - G_TBASE;
            write!(f, "L{}+{}", off / G_TMAX, off % G_TMAX)
        } else {
            write!(f, "{}", self.0)
        }
    }
}

/// Identifies a session and thereby its local generation range.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct SessionId(pub u64);

impl SessionId {
    /// First generation of this session's local range; the n-th
    /// modification of a transaction is stamped `base + n`.
    pub fn base(self) -> u64 {
        G_TBASE + self.0 * G_TMAX
    }

    pub fn owns(self, gen: u64) -> bool {
        gen >= self.base() && gen - self.base() < G_TMAX
    }
}

impl fmt::Display for SessionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// The frozen view of a goal: the global generation at its start plus, inside
/// a transaction, the session's local range up to the modification count at
/// that moment.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ViewContext {
    pub view_gen: Generation,
    pub txn: Option<LocalView>,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct LocalView {
    pub session: SessionId,
    /// Absolute local generation of the last modification visible to the view.
    pub current: u64,
}

impl LocalView {
    fn covers(&self, gen: u64) -> bool {
        gen >= self.session.base() && gen <= self.current
    }
}

impl ViewContext {
    pub fn global(view_gen: Generation) -> Self {
        ViewContext { view_gen, txn: None }
    }

    /// Visibility of a clause with the given born/died stamps.
    ///
    /// Outside a transaction this is `born <= view < died`. Inside one, a
    /// globally born clause is hidden if it died in the global view or in
    /// this transaction, and a clause born in this transaction is shown until
    /// the transaction retracts it.
    pub fn sees(&self, born: u64, died: u64) -> bool {
        let view = self.view_gen.0;
        match &self.txn {
            None => born <= view && view < died,
            Some(local) => {
                if born <= view {
                    died > view && !local.covers(died)
                } else {
                    local.covers(born) && !local.covers(died)
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn documented_example_stamp() {
        // tenth modification of session 3
        assert_eq!(SessionId(3).base() + 10, G_TBASE + 3 * G_TMAX + 10);
        assert!(SessionId(3).owns(G_TBASE + 3 * G_TMAX + 10));
        assert!(!SessionId(2).owns(G_TBASE + 3 * G_TMAX + 10));
    }

    #[test]
    fn last_session_range_fits() {
        let last = SessionId(MAX_SESSIONS - 1);
        assert!(last.base().checked_add(G_TMAX - 1).unwrap() < GEN_INFINITY);
        assert!(MAX_SESSIONS > 6_000_000_000);
    }

    #[test]
    fn visibility_examples() {
        let outside = ViewContext::global(Generation(5));
        assert!(outside.sees(3, GEN_INFINITY));
        assert!(!outside.sees(3, 5));

        let born = G_TBASE + 2 * G_TMAX + 1;
        let in_txn = |sid: u64, current: u64| ViewContext {
            view_gen: Generation(5),
            txn: Some(LocalView { session: SessionId(sid), current: SessionId(sid).base() + current }),
        };
        assert!(!in_txn(3, 5).sees(born, GEN_INFINITY));
        assert!(in_txn(2, 1).sees(born, GEN_INFINITY));
        assert!(!in_txn(2, 0).sees(born, GEN_INFINITY));
    }

    /// Outside transactions visibility is exactly the half-open interval test,
    /// checked over every small (born, died, view) triple.
    #[test]
    fn boundary_semantics_exhaustive() {
        for born in 0..12u64 {
            for died in born..=12u64 {
                let died = if died == 12 { GEN_INFINITY } else { died };
                for view in 0..12u64 {
                    let expected = born <= view && view < died;
                    assert_eq!(ViewContext::global(Generation(view)).sees(born, died), expected);
                }
            }
        }
    }

    /// A transaction's view of global clauses differs from the plain view
    /// only for clauses it retracted itself.
    #[test]
    fn transaction_view_of_global_clauses() {
        let sid = SessionId(4);
        for born in 1..8u64 {
            for died in (born + 1)..=9u64 {
                let died = if died == 9 { GEN_INFINITY } else { died };
                for view in 1..8u64 {
                    for n in 0..3u64 {
                        let ctx = ViewContext {
                            view_gen: Generation(view),
                            txn: Some(LocalView { session: sid, current: sid.base() + n }),
                        };
                        let plain = ViewContext::global(Generation(view)).sees(born, died);
                        assert_eq!(ctx.sees(born, died), plain);
                        // retracted by this transaction at local step 1
                        let own = ctx.sees(born, sid.base() + 1);
                        assert_eq!(own, born <= view && n < 1);
                        // retracted by another session's pending transaction
                        assert_eq!(ctx.sees(born, SessionId(9).base() + 1), born <= view);
                    }
                }
            }
        }
    }
}
