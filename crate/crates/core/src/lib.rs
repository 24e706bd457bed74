//! An in-memory fact store with ACID-style transactions.
//!
//! Every clause carries the generation it was created in and the generation
//! it was retracted in. A query sees the clauses alive at the generation it
//! started in, no matter what happens to the store while it runs. Changes
//! inside a transaction are stamped with generations from a range private to
//! the session and become visible to others, all at once, when the commit
//! publishes a new global generation.
//!
//! ```
//! use genstore_core::{Store, Term, Pattern};
//!
//! let store = Store::new();
//! let mut s = store.session().unwrap();
//! s.transaction(|s| {
//!     s.assertz("account(alice, 100)".parse::<Term>().unwrap())?;
//!     Ok(Some(()))
//! })
//! .unwrap();
//! let p: Pattern = "account(alice, X)".parse().unwrap();
//! assert_eq!(s.query_all(&p).unwrap().len(), 1);
//! ```

mod chain;
pub mod error;
pub mod gc;
pub mod generation;
mod session;
mod store;
pub mod term;
mod txn;

pub use error::{Error, Result, TxnError};
pub use gc::{gc_background, gc_sweep, oldest_active_generation, GcHandle, GcStats};
pub use generation::{Generation, LocalView, SessionId, ViewContext, GEN_INFINITY, G_TBASE, G_TMAX};
pub use session::{Cursor, Row, Session, SessionStats};
pub use store::{ClauseRef, CommitOrder, Store, StoreConfig};
pub use term::{Bindings, Lexer, ParseError, Pattern, PredicateIndicator, Symbol, Term, Tok};
pub use txn::{backoff_delay, CommitProgress, Modification, TxnId, TxnKind, TxnOptions, TxnProperty};
