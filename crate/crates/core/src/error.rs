use std::fmt;

use crate::term::{PredicateIndicator, Term};

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// The two transaction error classes. Rendered exactly as
/// `transaction_error(conflict, name/arity)` and
/// `transaction_error(constraint, failed)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TxnError {
    /// A retract or erase found its clause already retracted by someone else.
    Conflict(PredicateIndicator),
    /// The commit constraint did not succeed.
    ConstraintFailed,
}

impl fmt::Display for TxnError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TxnError::Conflict(pi) => write!(f, "transaction_error(conflict, {pi})"),
            TxnError::ConstraintFailed => f.write_str("transaction_error(constraint, failed)"),
        }
    }
}

impl std::error::Error for TxnError {}

impl TxnError {
    pub fn to_term(&self) -> Term {
        match self {
            TxnError::Conflict(pi) => Term::compound(
                "transaction_error",
                vec![
                    Term::atom("conflict"),
                    Term::compound("/", vec![Term::Atom(pi.name.clone()), Term::Int(pi.arity as i64)]),
                ],
            ),
            TxnError::ConstraintFailed => {
                Term::compound("transaction_error", vec![Term::atom("constraint"), Term::atom("failed")])
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Transaction(#[from] TxnError),
    /// Bad argument: non-ground fact, non-callable term, unbound variable.
    #[error("domain_error: {0}")]
    Domain(String),
    /// A transaction ran out of local generations or the store out of
    /// session ranges.
    #[error("resource_error: {0}")]
    Resource(&'static str),
    /// API misuse: unbalanced nesting, mutation inside a constraint, ...
    #[error("usage_error: {0}")]
    Usage(String),
    /// An exception raised by user code, carried as a ground term.
    #[error("{0}")]
    Thrown(Term),
}

impl Error {
    pub fn is_transaction_error(&self) -> bool {
        matches!(self, Error::Transaction(_))
    }

    /// Term form of the error, as seen by scripts (`error(E)` payload).
    pub fn to_term(&self) -> Term {
        match self {
            Error::Transaction(e) => e.to_term(),
            Error::Domain(msg) => Term::compound("domain_error", vec![Term::string(msg)]),
            Error::Resource(what) => Term::compound("resource_error", vec![Term::atom(what)]),
            Error::Usage(msg) => Term::compound("usage_error", vec![Term::string(msg)]),
            Error::Thrown(t) => t.clone(),
        }
    }
}
