//! Workload scripts: named sessions of store operations with an optional
//! schedule.
//!
//! ```text
//! schedule [teller, auditor, teller*]   % or: parallel | sequential
//! init { assertz(account(a, 100)), assertz(account(b, 100)) }
//! session teller {
//!     txn [restart(true)] {
//!         retract(account(a, A)), A1 is A - 10, assertz(account(a, A1))
//!     } constraint { count(account(_, _), 2) }
//! }
//! session auditor { snapshot { sum(B, account(_, B), S) }, expect(S =:= 200) }
//! final { count(account(_, _), N), expect(N =:= 2) }
//! ```

use std::sync::Arc;

use genstore_core::{Lexer, ParseError, Pattern, Tok};

#[derive(Clone, Debug, PartialEq)]
pub enum ScheduleSpec {
    /// Sessions run one after the other in declaration order.
    Sequential,
    /// One thread per session.
    Parallel,
    /// Explicit interleaving. Each item runs one step of the named session,
    /// or all its remaining steps when `to_end` is set. Sessions left
    /// unfinished afterwards run to completion in declaration order.
    Explicit(Vec<ScheduleItem>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleItem {
    pub session: String,
    pub to_end: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Granularity {
    /// A commit is a single step.
    #[default]
    Op,
    /// Every renumbering action of a commit is its own step.
    Fine,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Gt,
    Le,
    Ge,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Test {
    Arith(CmpOp, Pattern, Pattern),
    Unify(Pattern, Pattern),
    NotUnify(Pattern, Pattern),
    /// Matches the outcome of the previous top-level statement:
    /// `true`, `false` or `error(E)`.
    Outcome(Pattern),
}

#[derive(Clone, Debug, PartialEq)]
pub enum TxnOpt {
    Restart(bool),
    Id(Pattern),
    MaxRetries(u32),
}

pub type Block = Arc<[Stmt]>;

#[derive(Clone, Debug, PartialEq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub line: usize,
    pub column: usize,
    /// Source text, whitespace collapsed; block bodies are elided.
    pub text: String,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StmtKind {
    Assertz(Pattern),
    Asserta(Pattern),
    Retract(Pattern),
    /// Binds the first match; fails if there is none.
    Query(Pattern),
    /// `count(P, N)`: number of matches.
    Count(Pattern, Pattern),
    /// `sum(V, P, S)`: sum of `V` over the matches of `P`.
    Sum(Pattern, Pattern, Pattern),
    Is(Pattern, Pattern),
    Test(Test),
    /// Like a test, but a false condition is also reported as a failed
    /// expectation.
    Expect(Test),
    True,
    Fail,
    Throw(Pattern),
    /// Waits until every session that mentions this barrier has reached it.
    Sync(String),
    Txn {
        options: Vec<TxnOpt>,
        body: Block,
        constraint: Option<Block>,
    },
    Snapshot(Block),
}

impl StmtKind {
    /// Statements that touch the store and so take a scheduling step.
    pub fn is_store_op(&self) -> bool {
        matches!(
            self,
            StmtKind::Assertz(_)
                | StmtKind::Asserta(_)
                | StmtKind::Retract(_)
                | StmtKind::Query(_)
                | StmtKind::Count(..)
                | StmtKind::Sum(..)
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionDecl {
    pub name: String,
    pub body: Block,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Script {
    pub schedule: ScheduleSpec,
    /// Run against the broken commit order.
    pub increment_first: bool,
    pub granularity: Granularity,
    /// Restart cap applied to `restart(true)` transactions without their
    /// own `max_retries`.
    pub max_retries: Option<u32>,
    pub init: Block,
    pub sessions: Vec<SessionDecl>,
    pub finally: Block,
    pub source: String,
}

impl Script {
    pub fn session_index(&self, name: &str) -> Option<usize> {
        self.sessions.iter().position(|s| s.name == name)
    }

    /// Barrier names each session mentions anywhere in its body.
    pub fn barriers(&self) -> Vec<Vec<String>> {
        fn walk(block: &[Stmt], out: &mut Vec<String>) {
            for s in block {
                match &s.kind {
                    StmtKind::Sync(n) if !out.contains(n) => out.push(n.clone()),
                    StmtKind::Txn { body, constraint, .. } => {
                        walk(body, out);
                        if let Some(c) = constraint {
                            walk(c, out);
                        }
                    }
                    StmtKind::Snapshot(b) => walk(b, out),
                    _ => {}
                }
            }
        }
        self.sessions
            .iter()
            .map(|s| {
                let mut out = Vec::new();
                walk(&s.body, &mut out);
                out
            })
            .collect()
    }
}

impl std::str::FromStr for Script {
    type Err = ParseError;

    fn from_str(src: &str) -> Result<Self, ParseError> {
        parse_script(src)
    }
}

pub fn parse_script(src: &str) -> Result<Script, ParseError> {
    let mut p = Parser { lx: Lexer::new(src) };
    let mut script = Script {
        schedule: ScheduleSpec::Sequential,
        increment_first: false,
        granularity: Granularity::Op,
        max_retries: None,
        init: Arc::from(Vec::new()),
        sessions: Vec::new(),
        finally: Arc::from(Vec::new()),
        source: src.to_string(),
    };
    let mut schedule_at = None;
    while !p.lx.at_end() {
        let at = p.lx.token_start();
        let word = p.word()?;
        match word.as_str() {
            "schedule" => {
                schedule_at = Some(at);
                script.schedule = p.schedule()?;
            }
            "mutant" => match p.word()?.as_str() {
                "increment_first" => script.increment_first = true,
                other => return Err(p.lx.error_at(at, format!("unknown mutant `{other}`"))),
            },
            "granularity" => {
                script.granularity = match p.word()?.as_str() {
                    "op" => Granularity::Op,
                    "fine" => Granularity::Fine,
                    other => return Err(p.lx.error_at(at, format!("unknown granularity `{other}`"))),
                }
            }
            "max_retries" => script.max_retries = Some(p.count()?),
            "init" => script.init = p.block()?,
            "final" => script.finally = p.block()?,
            "session" => {
                let name_at = p.lx.token_start();
                let name = p.word()?;
                if script.session_index(&name).is_some() {
                    return Err(p.lx.error_at(name_at, format!("duplicate session `{name}`")));
                }
                let body = p.block()?;
                script.sessions.push(SessionDecl { name, body });
            }
            other => return Err(p.lx.error_at(at, format!("unknown directive `{other}`"))),
        }
    }
    if let (ScheduleSpec::Explicit(items), Some(at)) = (&script.schedule, schedule_at) {
        for item in items {
            if script.session_index(&item.session).is_none() {
                return Err(p.lx.error_at(at, format!("schedule names unknown session `{}`", item.session)));
            }
        }
    }
    Ok(script)
}

struct Parser<'a> {
    lx: Lexer<'a>,
}

impl Parser<'_> {
    fn word(&mut self) -> Result<String, ParseError> {
        let at = self.lx.token_start();
        match self.lx.next_token()? {
            Some(Tok::Atom(w)) => Ok(w),
            other => {
                Err(self.lx.error_at(at, format!("expected a name, found {}", genstore_core::term::describe(&other))))
            }
        }
    }

    fn count(&mut self) -> Result<u32, ParseError> {
        let at = self.lx.token_start();
        match self.lx.next_token()? {
            Some(Tok::Int(n)) if n >= 0 && n <= u32::MAX as i64 => Ok(n as u32),
            other => {
                Err(self.lx.error_at(at, format!("expected a count, found {}", genstore_core::term::describe(&other))))
            }
        }
    }

    fn schedule(&mut self) -> Result<ScheduleSpec, ParseError> {
        let at = self.lx.token_start();
        match self.lx.next_token()? {
            Some(Tok::Atom(w)) if w == "parallel" => Ok(ScheduleSpec::Parallel),
            Some(Tok::Atom(w)) if w == "sequential" => Ok(ScheduleSpec::Sequential),
            Some(Tok::Punct("[")) => {
                let mut items = Vec::new();
                if self.lx.peek()? == Some(Tok::Punct("]")) {
                    self.lx.next_token()?;
                    return Ok(ScheduleSpec::Explicit(items));
                }
                loop {
                    let session = self.word()?;
                    let mut to_end = false;
                    if self.lx.peek()? == Some(Tok::Op("*".into())) {
                        self.lx.next_token()?;
                        to_end = true;
                    }
                    items.push(ScheduleItem { session, to_end });
                    let sep = self.lx.token_start();
                    match self.lx.next_token()? {
                        Some(Tok::Punct(",")) => {}
                        Some(Tok::Punct("]")) => return Ok(ScheduleSpec::Explicit(items)),
                        other => {
                            return Err(self.lx.error_at(
                                sep,
                                format!("expected `,` or `]`, found {}", genstore_core::term::describe(&other)),
                            ))
                        }
                    }
                }
            }
            other => Err(self.lx.error_at(
                at,
                format!("expected parallel, sequential or [...], found {}", genstore_core::term::describe(&other)),
            )),
        }
    }

    fn block(&mut self) -> Result<Block, ParseError> {
        self.lx.expect_punct("{")?;
        let mut stmts = Vec::new();
        loop {
            match self.lx.peek()? {
                Some(Tok::Punct("}")) => {
                    self.lx.next_token()?;
                    return Ok(Arc::from(stmts));
                }
                Some(Tok::Punct(",")) | Some(Tok::Punct(".")) => {
                    self.lx.next_token()?;
                }
                None => {
                    let at = self.lx.token_start();
                    return Err(self.lx.error_at(at, "unterminated block"));
                }
                _ => stmts.push(self.statement()?),
            }
        }
    }

    fn statement(&mut self) -> Result<Stmt, ParseError> {
        let at = self.lx.token_start();
        let pos = self.lx.error_at(at, "");
        let src = self.lx.source();
        let stmt = |kind, end: usize| {
            let raw = &src[at..end];
            let head = match raw.find('{') {
                Some(i) => format!("{} {{...}}", raw[..i].trim_end()),
                None => raw.to_string(),
            };
            let text = head.split_whitespace().collect::<Vec<_>>().join(" ");
            Stmt { kind, line: pos.line, column: pos.column, text }
        };
        let mut probe = self.lx.clone();
        if let Some(Tok::Atom(w)) = probe.next_token()? {
            let next = probe.peek()?;
            let opens_block = matches!(next, Some(Tok::Punct("{")) | Some(Tok::Punct("[")));
            if w == "txn" && opens_block {
                self.lx = probe;
                let mut options = Vec::new();
                if self.lx.peek()? == Some(Tok::Punct("[")) {
                    self.lx.next_token()?;
                    options = self.txn_options()?;
                }
                let body = self.block()?;
                let mut constraint = None;
                let mut look = self.lx.clone();
                if look.next_token()? == Some(Tok::Atom("constraint".into())) && look.peek()? == Some(Tok::Punct("{")) {
                    self.lx = look;
                    constraint = Some(self.block()?);
                }
                return Ok(stmt(StmtKind::Txn { options, body, constraint }, self.lx.position()));
            }
            if w == "snapshot" && next == Some(Tok::Punct("{")) {
                self.lx = probe;
                let body = self.block()?;
                return Ok(stmt(StmtKind::Snapshot(body), self.lx.position()));
            }
        }
        let goal = self.lx.arg()?;
        let end = self.lx.position();
        classify(goal).map(|k| stmt(k, end)).map_err(|msg| self.lx.error_at(at, msg))
    }

    fn txn_options(&mut self) -> Result<Vec<TxnOpt>, ParseError> {
        let mut out = Vec::new();
        if self.lx.peek()? == Some(Tok::Punct("]")) {
            self.lx.next_token()?;
            return Ok(out);
        }
        loop {
            let at = self.lx.token_start();
            let opt = self.lx.arg()?;
            out.push(match &opt {
                Pattern::Compound(n, a) if n.as_str() == "restart" && a.len() == 1 => match &a[0] {
                    Pattern::Atom(b) if b.as_str() == "true" => TxnOpt::Restart(true),
                    Pattern::Atom(b) if b.as_str() == "false" => TxnOpt::Restart(false),
                    _ => return Err(self.lx.error_at(at, "restart/1 takes true or false")),
                },
                Pattern::Compound(n, a) if n.as_str() == "id" && a.len() == 1 => TxnOpt::Id(a[0].clone()),
                Pattern::Compound(n, a) if n.as_str() == "max_retries" && a.len() == 1 => match a[0] {
                    Pattern::Int(k) if k >= 0 => TxnOpt::MaxRetries(k.min(u32::MAX as i64) as u32),
                    _ => return Err(self.lx.error_at(at, "max_retries/1 takes a non-negative integer")),
                },
                other => return Err(self.lx.error_at(at, format!("unknown transaction option {other}"))),
            });
            let sep = self.lx.token_start();
            match self.lx.next_token()? {
                Some(Tok::Punct(",")) => {}
                Some(Tok::Punct("]")) => return Ok(out),
                other => {
                    return Err(self.lx.error_at(
                        sep,
                        format!("expected `,` or `]`, found {}", genstore_core::term::describe(&other)),
                    ))
                }
            }
        }
    }
}

fn cmp_op(name: &str) -> Option<CmpOp> {
    Some(match name {
        "=:=" => CmpOp::Eq,
        "=\\=" => CmpOp::Ne,
        "<" => CmpOp::Lt,
        ">" => CmpOp::Gt,
        "=<" => CmpOp::Le,
        ">=" => CmpOp::Ge,
        _ => return None,
    })
}

fn test_of(goal: &Pattern) -> Option<Test> {
    let Pattern::Compound(name, args) = goal else {
        return None;
    };
    let name = name.as_str();
    match args.len() {
        2 => {
            let (a, b) = (args[0].clone(), args[1].clone());
            if let Some(op) = cmp_op(name) {
                return Some(Test::Arith(op, a, b));
            }
            match name {
                "=" | "==" => Some(Test::Unify(a, b)),
                "\\=" | "\\==" => Some(Test::NotUnify(a, b)),
                _ => None,
            }
        }
        1 if name == "outcome" => Some(Test::Outcome(args[0].clone())),
        _ => None,
    }
}

fn classify(goal: Pattern) -> Result<StmtKind, String> {
    if let Some(test) = test_of(&goal) {
        return Ok(StmtKind::Test(test));
    }
    let unknown = |g: &Pattern| format!("unknown statement {g}");
    match &goal {
        Pattern::Atom(a) if a.as_str() == "true" => Ok(StmtKind::True),
        Pattern::Atom(a) if a.as_str() == "fail" || a.as_str() == "false" => Ok(StmtKind::Fail),
        Pattern::Compound(name, args) => {
            let a = args.clone();
            let target = |p: &Pattern| -> Result<Pattern, String> {
                match p.indicator() {
                    Some(_) => Ok(p.clone()),
                    None => Err(format!("{p} does not name a predicate")),
                }
            };
            match (name.as_str(), a.len()) {
                ("assertz", 1) => Ok(StmtKind::Assertz(target(&a[0])?)),
                ("asserta", 1) => Ok(StmtKind::Asserta(target(&a[0])?)),
                ("retract", 1) => Ok(StmtKind::Retract(target(&a[0])?)),
                ("query", 1) => Ok(StmtKind::Query(target(&a[0])?)),
                ("count", 2) => Ok(StmtKind::Count(target(&a[0])?, a[1].clone())),
                ("sum", 3) => Ok(StmtKind::Sum(a[0].clone(), target(&a[1])?, a[2].clone())),
                ("is", 2) => Ok(StmtKind::Is(a[0].clone(), a[1].clone())),
                ("throw", 1) => Ok(StmtKind::Throw(a[0].clone())),
                ("sync", 1) => match &a[0] {
                    Pattern::Atom(n) => Ok(StmtKind::Sync(n.as_str().to_string())),
                    other => Err(format!("sync/1 takes an atom, not {other}")),
                },
                ("expect", 1) => test_of(&a[0]).map(StmtKind::Expect).ok_or_else(|| format!("cannot expect {}", a[0])),
                _ => Err(unknown(&goal)),
            }
        }
        _ => Err(unknown(&goal)),
    }
}
