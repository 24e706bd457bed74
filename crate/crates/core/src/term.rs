//! Ground terms, query patterns and their text syntax.
//!
//! Stored facts are always ground. Patterns add variables and are used to
//! select facts; matching a pattern against a ground term either fails or
//! binds every variable in the pattern.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};

/// Interned text used for atoms, functors and variable names.
#[derive(Clone)]
pub struct Symbol(Arc<str>);

fn interner() -> &'static Mutex<HashSet<Arc<str>>> {
    static INTERNER: OnceLock<Mutex<HashSet<Arc<str>>>> = OnceLock::new();
    INTERNER.get_or_init(Default::default)
}

impl Symbol {
    pub fn new(text: &str) -> Symbol {
        let mut table = interner().lock().unwrap_or_else(|e| e.into_inner());
        if let Some(existing) = table.get(text) {
            return Symbol(existing.clone());
        }
        let arc: Arc<str> = Arc::from(text);
        table.insert(arc.clone());
        Symbol(arc)
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl PartialEq for Symbol {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0) || self.0 == other.0
    }
}

impl Eq for Symbol {}

impl std::hash::Hash for Symbol {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.0.hash(state)
    }
}

impl PartialOrd for Symbol {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Symbol {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.cmp(&other.0)
    }
}

impl fmt::Debug for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Symbol {
    fn from(s: &str) -> Self {
        Symbol::new(s)
    }
}

/// Name and arity of a stored predicate, e.g. `balance/2`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct PredicateIndicator {
    pub name: Symbol,
    pub arity: usize,
}

impl PredicateIndicator {
    pub fn new(name: impl Into<Symbol>, arity: usize) -> Self {
        PredicateIndicator { name: name.into(), arity }
    }

    /// The pattern `name(_, ..., _)` matching every clause of this predicate.
    pub fn most_general(&self) -> Pattern {
        if self.arity == 0 {
            Pattern::Atom(self.name.clone())
        } else {
            Pattern::Compound(self.name.clone(), vec![Pattern::Any; self.arity])
        }
    }
}

impl fmt::Display for PredicateIndicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write_atom(f, self.name.as_str())?;
        write!(f, "/{}", self.arity)
    }
}

/// A ground term.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Term {
    Atom(Symbol),
    Int(i64),
    Str(Arc<str>),
    /// Arity is always at least one; zero-arity terms are atoms.
    Compound(Symbol, Arc<[Term]>),
}

impl Term {
    pub fn atom(name: &str) -> Term {
        Term::Atom(Symbol::new(name))
    }

    pub fn string(text: &str) -> Term {
        Term::Str(Arc::from(text))
    }

    /// Builds a compound; an empty argument list yields the atom `name`.
    pub fn compound(name: &str, args: Vec<Term>) -> Term {
        if args.is_empty() {
            Term::atom(name)
        } else {
            Term::Compound(Symbol::new(name), args.into())
        }
    }

    pub fn as_int(&self) -> Option<i64> {
        match self {
            Term::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn args(&self) -> &[Term] {
        match self {
            Term::Compound(_, args) => args,
            _ => &[],
        }
    }

    /// Predicate indicator of a callable term. Integers and strings are not
    /// callable and cannot be stored as facts.
    pub fn indicator(&self) -> Option<PredicateIndicator> {
        match self {
            Term::Atom(name) => Some(PredicateIndicator::new(name.clone(), 0)),
            Term::Compound(name, args) => Some(PredicateIndicator::new(name.clone(), args.len())),
            Term::Int(_) | Term::Str(_) => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Atom(a) => write_atom(f, a.as_str()),
            Term::Int(v) => write!(f, "{v}"),
            Term::Str(s) => write_quoted(f, s, '"'),
            Term::Compound(name, args) => {
                if args.len() == 2 && is_infix(name.as_str()) {
                    let sep = if name.as_str().chars().all(|c| c.is_ascii_alphabetic()) { " " } else { "" };
                    return write!(f, "{}{sep}{}{sep}{}", InfixArg(&args[0]), name, InfixArg(&args[1]));
                }
                write_atom(f, name.as_str())?;
                f.write_str("(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

struct InfixArg<'a>(&'a Term);

impl fmt::Display for InfixArg<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Term::Compound(name, args) if args.len() == 2 && is_infix(name.as_str()) => {
                write!(f, "({})", self.0)
            }
            Term::Int(v) if *v < 0 => write!(f, "({v})"),
            t => write!(f, "{t}"),
        }
    }
}

fn is_infix(name: &str) -> bool {
    BINARY_OPS.iter().any(|(op, _)| *op == name)
}

fn needs_quotes(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => !chars.all(|c| c.is_ascii_alphanumeric() || c == '_'),
        _ => true,
    }
}

fn write_atom(f: &mut fmt::Formatter<'_>, name: &str) -> fmt::Result {
    if needs_quotes(name) {
        write_quoted(f, name, '\'')
    } else {
        f.write_str(name)
    }
}

fn write_quoted(f: &mut fmt::Formatter<'_>, text: &str, quote: char) -> fmt::Result {
    use fmt::Write;
    f.write_char(quote)?;
    for c in text.chars() {
        match c {
            '\\' => f.write_str("\\\\")?,
            '\n' => f.write_str("\\n")?,
            '\t' => f.write_str("\\t")?,
            c if c == quote => {
                f.write_char('\\')?;
                f.write_char(c)?;
            }
            c => f.write_char(c)?,
        }
    }
    f.write_char(quote)
}

/// Variable bindings produced by pattern matching.
pub type Bindings = BTreeMap<Symbol, Term>;

/// A term that may contain variables.
#[derive(Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    /// Named variable; repeated names must bind equal subterms.
    Var(Symbol),
    /// The anonymous variable `_`.
    Any,
    Atom(Symbol),
    Int(i64),
    Str(Arc<str>),
    Compound(Symbol, Vec<Pattern>),
}

impl Pattern {
    pub fn var(name: &str) -> Pattern {
        Pattern::Var(Symbol::new(name))
    }

    pub fn compound(name: &str, args: Vec<Pattern>) -> Pattern {
        if args.is_empty() {
            Pattern::Atom(Symbol::new(name))
        } else {
            Pattern::Compound(Symbol::new(name), args)
        }
    }

    /// Root predicate indicator, when the root is neither a variable nor a
    /// non-callable constant.
    pub fn indicator(&self) -> Option<PredicateIndicator> {
        match self {
            Pattern::Atom(name) => Some(PredicateIndicator::new(name.clone(), 0)),
            Pattern::Compound(name, args) => Some(PredicateIndicator::new(name.clone(), args.len())),
            _ => None,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Pattern::Var(_) | Pattern::Any => false,
            Pattern::Compound(_, args) => args.iter().all(Pattern::is_ground),
            _ => true,
        }
    }

    pub fn to_term(&self) -> Option<Term> {
        Some(match self {
            Pattern::Var(_) | Pattern::Any => return None,
            Pattern::Atom(a) => Term::Atom(a.clone()),
            Pattern::Int(v) => Term::Int(*v),
            Pattern::Str(s) => Term::Str(s.clone()),
            Pattern::Compound(name, args) => {
                Term::Compound(name.clone(), args.iter().map(Pattern::to_term).collect::<Option<Vec<_>>>()?.into())
            }
        })
    }

    /// Converts to a ground term or reports the pattern as insufficiently
    /// instantiated.
    pub fn ground(&self) -> Result<Term> {
        self.to_term().ok_or_else(|| Error::Domain(format!("instantiation: {self} is not ground")))
    }

    /// Replaces bound variables by their values.
    pub fn substitute(&self, bindings: &Bindings) -> Pattern {
        match self {
            Pattern::Var(v) => match bindings.get(v) {
                Some(t) => Pattern::from(t),
                None => self.clone(),
            },
            Pattern::Compound(name, args) => {
                Pattern::Compound(name.clone(), args.iter().map(|a| a.substitute(bindings)).collect())
            }
            _ => self.clone(),
        }
    }

    pub fn variables(&self) -> Vec<Symbol> {
        fn walk(p: &Pattern, out: &mut Vec<Symbol>) {
            match p {
                Pattern::Var(v) if !out.contains(v) => out.push(v.clone()),
                Pattern::Compound(_, args) => args.iter().for_each(|a| walk(a, out)),
                _ => {}
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }

    /// Matches against a ground term, extending `bindings`. On failure
    /// `bindings` may hold partial results and should be discarded.
    pub fn match_into(&self, term: &Term, bindings: &mut Bindings) -> bool {
        match (self, term) {
            (Pattern::Any, _) => true,
            (Pattern::Var(v), t) => match bindings.get(v) {
                Some(bound) => bound == t,
                None => {
                    bindings.insert(v.clone(), t.clone());
                    true
                }
            },
            (Pattern::Atom(a), Term::Atom(b)) => a == b,
            (Pattern::Int(a), Term::Int(b)) => a == b,
            (Pattern::Str(a), Term::Str(b)) => a == b,
            (Pattern::Compound(f, pargs), Term::Compound(g, targs)) => {
                f == g
                    && pargs.len() == targs.len()
                    && pargs.iter().zip(targs.iter()).all(|(p, t)| p.match_into(t, bindings))
            }
            _ => false,
        }
    }

    pub fn matches(&self, term: &Term) -> Option<Bindings> {
        let mut b = Bindings::new();
        self.match_into(term, &mut b).then_some(b)
    }
}

impl From<&Term> for Pattern {
    fn from(t: &Term) -> Self {
        match t {
            Term::Atom(a) => Pattern::Atom(a.clone()),
            Term::Int(v) => Pattern::Int(*v),
            Term::Str(s) => Pattern::Str(s.clone()),
            Term::Compound(name, args) => Pattern::Compound(name.clone(), args.iter().map(Pattern::from).collect()),
        }
    }
}

impl From<Term> for Pattern {
    fn from(t: Term) -> Self {
        Pattern::from(&t)
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Var(v) => f.write_str(v.as_str()),
            Pattern::Any => f.write_str("_"),
            Pattern::Atom(a) => write_atom(f, a.as_str()),
            Pattern::Int(v) => write!(f, "{v}"),
            Pattern::Str(s) => write_quoted(f, s, '"'),
            Pattern::Compound(name, args) => {
                if args.len() == 2 && is_infix(name.as_str()) {
                    let side = |f: &mut fmt::Formatter<'_>, p: &Pattern| match p {
                        Pattern::Compound(n, a) if a.len() == 2 && is_infix(n.as_str()) => {
                            write!(f, "({p})")
                        }
                        Pattern::Int(v) if *v < 0 => write!(f, "({v})"),
                        _ => write!(f, "{p}"),
                    };
                    side(f, &args[0])?;
                    if name.as_str().chars().all(|c| c.is_ascii_alphabetic()) {
                        write!(f, " {name} ")?;
                    } else {
                        write!(f, "{name}")?;
                    }
                    return side(f, &args[1]);
                }
                write_atom(f, name.as_str())?;
                f.write_str("(")?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

impl fmt::Debug for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

// ---------------------------------------------------------------------------
// Text syntax

/// Binary operators understood by the parser, with their priority. All are
/// left-associative except the comparison group at 700.
const BINARY_OPS: &[(&str, u32)] = &[
    ("is", 700),
    ("=", 700),
    ("\\=", 700),
    ("==", 700),
    ("=:=", 700),
    ("=\\=", 700),
    ("<", 700),
    (">", 700),
    ("=<", 700),
    (">=", 700),
    ("+", 500),
    ("-", 500),
    ("*", 400),
    ("/", 400),
    ("//", 400),
    ("mod", 400),
];

/// Syntax error with a 1-based line and column.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at {line}:{column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Atom(String),
    Var(String),
    Int(i64),
    Str(String),
    Punct(&'static str),
    Op(String),
}

/// Character-level tokenizer shared by the term and script parsers.
#[derive(Clone)]
pub struct Lexer<'a> {
    src: &'a str,
    pos: usize,
}

const SYMBOL_CHARS: &str = "+-*/\\=<>:";

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Lexer { src, pos: 0 }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn source(&self) -> &'a str {
        self.src
    }

    pub fn error_at(&self, pos: usize, message: impl Into<String>) -> ParseError {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.matches('\n').count() + 1;
        let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
        ParseError { line, column, message: message.into() }
    }

    fn skip_layout(&mut self) {
        let bytes = self.src.as_bytes();
        while self.pos < bytes.len() {
            match bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                b'%' => {
                    while self.pos < bytes.len() && bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    /// Start offset of the next token (after layout).
    pub fn token_start(&mut self) -> usize {
        self.skip_layout();
        self.pos
    }

    pub fn at_end(&mut self) -> bool {
        self.skip_layout();
        self.pos >= self.src.len()
    }

    pub fn peek(&mut self) -> std::result::Result<Option<Tok>, ParseError> {
        let save = self.pos;
        let t = self.next_token();
        self.pos = save;
        t
    }

    pub fn next_token(&mut self) -> std::result::Result<Option<Tok>, ParseError> {
        self.skip_layout();
        let rest = &self.src[self.pos..];
        let start = self.pos;
        let Some(c) = rest.chars().next() else {
            return Ok(None);
        };
        if c.is_ascii_digit() {
            let len = rest.find(|c: char| !c.is_ascii_digit()).unwrap_or(rest.len());
            let v = rest[..len].parse::<i64>().map_err(|_| self.error_at(start, "integer out of range"))?;
            self.pos += len;
            return Ok(Some(Tok::Int(v)));
        }
        if c.is_alphabetic() || c == '_' {
            let len = rest.find(|c: char| !(c.is_alphanumeric() || c == '_')).unwrap_or(rest.len());
            let word = rest[..len].to_string();
            self.pos += len;
            if c.is_uppercase() || c == '_' {
                return Ok(Some(Tok::Var(word)));
            }
            if word == "is" || word == "mod" {
                return Ok(Some(Tok::Op(word)));
            }
            return Ok(Some(Tok::Atom(word)));
        }
        if c == '\'' || c == '"' {
            let text = self.quoted(c)?;
            return Ok(Some(if c == '"' { Tok::Str(text) } else { Tok::Atom(text) }));
        }
        for p in ["(", ")", "[", "]", "{", "}", ",", "|", ";"] {
            if rest.starts_with(p) {
                self.pos += p.len();
                return Ok(Some(Tok::Punct(p)));
            }
        }
        if c == '.' {
            let after = rest[1..].chars().next();
            if after.is_none_or(|c| c.is_whitespace() || c == '%') {
                self.pos += 1;
                return Ok(Some(Tok::Punct(".")));
            }
        }
        if SYMBOL_CHARS.contains(c) {
            let len = rest.find(|c: char| !SYMBOL_CHARS.contains(c)).unwrap_or(rest.len());
            self.pos += len;
            return Ok(Some(Tok::Op(rest[..len].to_string())));
        }
        Err(self.error_at(start, format!("unexpected character {c:?}")))
    }

    fn quoted(&mut self, quote: char) -> std::result::Result<String, ParseError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = String::new();
        let mut chars = self.src[self.pos..].char_indices();
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    let Some((_, e)) = chars.next() else { break };
                    out.push(match e {
                        'n' => '\n',
                        't' => '\t',
                        other => other,
                    });
                }
                c if c == quote => {
                    self.pos += i + 1;
                    return Ok(out);
                }
                c => out.push(c),
            }
        }
        Err(self.error_at(start, "unterminated quoted text"))
    }

    pub fn expect_punct(&mut self, p: &'static str) -> std::result::Result<(), ParseError> {
        let at = self.token_start();
        match self.next_token()? {
            Some(Tok::Punct(q)) if q == p => Ok(()),
            other => Err(self.error_at(at, format!("expected `{p}`, found {}", describe(&other)))),
        }
    }

    /// Parses one pattern (operators included) at priority 1200.
    pub fn pattern(&mut self) -> std::result::Result<Pattern, ParseError> {
        self.expr(1200)
    }

    /// Parses a pattern at argument priority (no bare `,`).
    pub fn arg(&mut self) -> std::result::Result<Pattern, ParseError> {
        self.expr(999)
    }

    fn expr(&mut self, max: u32) -> std::result::Result<Pattern, ParseError> {
        let mut left = self.primary()?;
        let mut left_prio = 0;
        loop {
            let save = self.pos;
            let op = match self.next_token()? {
                Some(Tok::Op(op)) => op,
                _ => {
                    self.pos = save;
                    break;
                }
            };
            let Some(&(_, prio)) = BINARY_OPS.iter().find(|(o, _)| *o == op) else {
                self.pos = save;
                break;
            };
            // xfx at 700, yfx below
            let (left_max, right_max) = if prio == 700 { (prio - 1, prio - 1) } else { (prio, prio - 1) };
            if prio > max || left_prio > left_max {
                self.pos = save;
                break;
            }
            let right = self.expr(right_max)?;
            left = Pattern::Compound(Symbol::new(&op), vec![left, right]);
            left_prio = prio;
        }
        Ok(left)
    }

    fn primary(&mut self) -> std::result::Result<Pattern, ParseError> {
        let at = self.token_start();
        let tok = self.next_token()?;
        match tok {
            Some(Tok::Int(v)) => Ok(Pattern::Int(v)),
            Some(Tok::Str(s)) => Ok(Pattern::Str(Arc::from(s.as_str()))),
            Some(Tok::Var(v)) if v == "_" => Ok(Pattern::Any),
            Some(Tok::Var(v)) => Ok(Pattern::Var(Symbol::new(&v))),
            Some(Tok::Op(op)) if op == "-" => match self.peek()? {
                Some(Tok::Int(_)) if self.src[self.pos..].starts_with(|c: char| c.is_ascii_digit()) => {
                    match self.next_token()? {
                        Some(Tok::Int(v)) => Ok(Pattern::Int(-v)),
                        _ => unreachable!(),
                    }
                }
                _ => self.functor_tail(op),
            },
            Some(Tok::Atom(name)) | Some(Tok::Op(name)) => self.functor_tail(name),
            Some(Tok::Punct("(")) => {
                let inner = self.expr(1200)?;
                self.expect_punct(")")?;
                Ok(inner)
            }
            other => Err(self.error_at(at, format!("expected a term, found {}", describe(&other)))),
        }
    }

    fn functor_tail(&mut self, name: String) -> std::result::Result<Pattern, ParseError> {
        // functor( must be adjacent
        if self.src[self.pos..].starts_with('(') {
            self.pos += 1;
            let mut args = vec![self.arg()?];
            loop {
                let at = self.token_start();
                match self.next_token()? {
                    Some(Tok::Punct(",")) => args.push(self.arg()?),
                    Some(Tok::Punct(")")) => break,
                    other => return Err(self.error_at(at, format!("expected `,` or `)`, found {}", describe(&other)))),
                }
            }
            Ok(Pattern::Compound(Symbol::new(&name), args))
        } else {
            Ok(Pattern::Atom(Symbol::new(&name)))
        }
    }
}

pub fn describe(tok: &Option<Tok>) -> String {
    match tok {
        None => "end of input".into(),
        Some(Tok::Atom(a)) => format!("atom `{a}`"),
        Some(Tok::Var(v)) => format!("variable `{v}`"),
        Some(Tok::Int(i)) => format!("integer `{i}`"),
        Some(Tok::Str(s)) => format!("string {s:?}"),
        Some(Tok::Punct(p)) => format!("`{p}`"),
        Some(Tok::Op(o)) => format!("operator `{o}`"),
    }
}

impl FromStr for Pattern {
    type Err = ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let mut lx = Lexer::new(s);
        let p = lx.pattern()?;
        if !lx.at_end() {
            let at = lx.position();
            return Err(lx.error_at(at, "trailing input"));
        }
        Ok(p)
    }
}

impl FromStr for Term {
    type Err = ParseError;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        let p: Pattern = s.parse()?;
        p.to_term().ok_or_else(|| ParseError { line: 1, column: 1, message: format!("{s} is not ground") })
    }
}
