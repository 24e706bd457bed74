//! Resumable interpreter for one script session.
//!
//! A machine runs its statements up to, but not including, the next store
//! operation and then waits to be stepped. Opening a transaction happens
//! together with its first store operation; a rollback happens in the step
//! that triggered it. A commit is one step, or with fine granularity one
//! step per renumbering action. Constraints run inside the commit step.

use std::collections::{HashMap, HashSet};
use std::sync::{Arc, Condvar, Mutex};

use genstore_core::{
    backoff_delay, Bindings, CommitProgress, Error, Pattern, Result as CoreResult, Session, Term, TxnError, TxnKind,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::history::{Obs, Unit, UnitEnd, UnitKind};
use crate::script::{Block, CmpOp, Granularity, Stmt, StmtKind, Test, TxnOpt};

/// Extra commit constraint run for every outermost commit.
pub type CommitHook = Arc<dyn Fn(&Session) -> CoreResult<bool> + Send + Sync>;

#[derive(Clone)]
pub struct MachineConfig {
    pub granularity: Granularity,
    /// Restart cap for `restart(true)` transactions without their own.
    pub max_retries: Option<u32>,
    /// Sleep between restarts.
    pub backoff: bool,
    pub hook: Option<CommitHook>,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig { granularity: Granularity::Op, max_retries: None, backoff: true, hook: None }
    }
}

/// Sync barriers shared by the sessions of one run.
///
/// A barrier opens once every session that mentions it has arrived at it or
/// finished. A barrier opens once.
pub struct Barriers {
    state: Mutex<BarrierState>,
    cv: Condvar,
}

struct BarrierState {
    participants: Vec<Vec<String>>,
    arrived: HashMap<String, HashSet<usize>>,
    finished: HashSet<usize>,
    open: HashSet<String>,
}

impl BarrierState {
    fn update(&mut self) {
        let names: HashSet<&String> = self.participants.iter().flatten().collect();
        for name in names {
            if self.open.contains(name) {
                continue;
            }
            let arrived = self.arrived.get(name);
            let ready = self.participants.iter().enumerate().all(|(i, p)| {
                !p.contains(name) || self.finished.contains(&i) || arrived.is_some_and(|a| a.contains(&i))
            });
            if ready {
                self.open.insert(name.clone());
            }
        }
    }
}

impl Barriers {
    /// `participants[i]` lists the barriers session `i` mentions.
    pub fn new(participants: Vec<Vec<String>>) -> Self {
        Barriers {
            state: Mutex::new(BarrierState {
                participants,
                arrived: HashMap::new(),
                finished: HashSet::new(),
                open: HashSet::new(),
            }),
            cv: Condvar::new(),
        }
    }

    pub fn arrive(&self, who: usize, name: &str) {
        let mut st = self.state.lock().unwrap();
        st.arrived.entry(name.to_string()).or_default().insert(who);
        st.update();
        self.cv.notify_all();
    }

    pub fn finish(&self, who: usize) {
        let mut st = self.state.lock().unwrap();
        st.finished.insert(who);
        st.update();
        self.cv.notify_all();
    }

    pub fn is_open(&self, name: &str) -> bool {
        let st = self.state.lock().unwrap();
        st.open.contains(name) || !st.participants.iter().any(|p| p.iter().any(|n| n == name))
    }

    pub fn wait(&self, name: &str) {
        let mut st = self.state.lock().unwrap();
        while !st.open.contains(name) && st.participants.iter().any(|p| p.iter().any(|n| n == name)) {
            st = self.cv.wait(st).unwrap();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Status {
    Running,
    AtSync(String),
    Done,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pending {
    Done,
    /// Waiting at a barrier that has not opened.
    Blocked,
    /// Ready to take a step. `needs_lock` is set when the step takes the
    /// commit lock.
    Ready {
        needs_lock: bool,
    },
}

enum Flow {
    Next,
    Fail,
    Raise(Error),
}

struct TxnFrame {
    restart: bool,
    id: Option<Term>,
    max_retries: Option<u32>,
    constraint: Option<Block>,
    saved_env: Bindings,
    attempts: u32,
    opened: bool,
    committing: bool,
}

enum Role {
    Top,
    Txn(TxnFrame),
    Snapshot { opened: bool },
    Constraint,
}

struct Frame {
    stmts: Block,
    pc: usize,
    role: Role,
}

/// Counters for one machine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct MachineStats {
    pub commits: u64,
    pub conflicts: u64,
    pub restarts: u64,
    pub aborts: u64,
}

pub struct Machine {
    index: usize,
    name: String,
    session: Session,
    config: MachineConfig,
    env: Bindings,
    stack: Vec<Frame>,
    status: Status,
    last_outcome: Term,
    rng: ChaCha8Rng,
    units: Vec<Unit>,
    current: Option<usize>,
    log: Vec<String>,
    failures: Vec<String>,
    stats: MachineStats,
}

impl Machine {
    pub fn new(index: usize, name: &str, session: Session, body: Block, config: MachineConfig) -> Self {
        Machine {
            index,
            name: name.to_string(),
            session,
            config,
            env: Bindings::new(),
            stack: vec![Frame { stmts: body, pc: 0, role: Role::Top }],
            status: Status::Running,
            last_outcome: Term::atom("true"),
            rng: ChaCha8Rng::seed_from_u64(index as u64),
            units: Vec::new(),
            current: None,
            log: Vec::new(),
            failures: Vec::new(),
            stats: MachineStats::default(),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn session(&self) -> &Session {
        &self.session
    }

    pub fn status(&self) -> &Status {
        &self.status
    }

    pub fn is_committing(&self) -> bool {
        self.session.is_committing()
    }

    pub fn units(&self) -> &[Unit] {
        &self.units
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Failed `expect` statements, with their position.
    pub fn failures(&self) -> &[String] {
        &self.failures
    }

    pub fn stats(&self) -> MachineStats {
        self.stats
    }

    pub fn bindings(&self) -> &Bindings {
        &self.env
    }

    pub fn into_session(self) -> Session {
        self.session
    }

    pub fn pending(&self, barriers: &Barriers) -> Pending {
        match &self.status {
            Status::Done => Pending::Done,
            Status::AtSync(name) if barriers.is_open(name) => Pending::Ready { needs_lock: false },
            Status::AtSync(_) => Pending::Blocked,
            Status::Running => Pending::Ready { needs_lock: self.needs_lock() },
        }
    }

    fn in_txn(&self) -> bool {
        self.stack.iter().any(|f| matches!(f.role, Role::Txn(_) | Role::Snapshot { .. }))
    }

    fn in_constraint(&self) -> bool {
        self.stack.iter().any(|f| matches!(f.role, Role::Constraint))
    }

    fn needs_lock(&self) -> bool {
        let Some(frame) = self.stack.last() else {
            return false;
        };
        if let Some(stmt) = frame.stmts.get(frame.pc) {
            let mutation = matches!(stmt.kind, StmtKind::Assertz(_) | StmtKind::Asserta(_) | StmtKind::Retract(_));
            return mutation && !self.in_txn();
        }
        match &frame.role {
            Role::Txn(tf) if !tf.committing => {
                let txn_frames = self.stack.iter().filter(|f| matches!(f.role, Role::Txn(_) | Role::Snapshot { .. }));
                txn_frames.count() == 1 || tf.constraint.is_some()
            }
            _ => false,
        }
    }

    /// Passes an opened barrier, if waiting at one, and runs on to the next
    /// store operation.
    pub fn poll(&mut self, barriers: &Barriers) {
        if let Status::AtSync(name) = &self.status {
            if barriers.is_open(name) {
                self.status = Status::Running;
                self.unwind(Flow::Next);
            }
        }
        self.advance(barriers);
    }

    /// Executes the pending store operation or commit, then runs on to the
    /// next one.
    pub fn step(&mut self, barriers: &Barriers) {
        if self.status != Status::Running {
            self.poll(barriers);
            return;
        }
        let frame = self.stack.last().expect("running machine has a frame");
        match frame.stmts.get(frame.pc).cloned() {
            Some(stmt) => {
                let flow = self.store_op(&stmt);
                self.unwind(flow);
            }
            None => self.commit_action(),
        }
        self.advance(barriers);
    }

    /// Runs until done or stuck at a closed barrier. Returns false when
    /// stuck.
    pub fn run_to_end(&mut self, barriers: &Barriers) -> bool {
        self.advance(barriers);
        loop {
            match self.pending(barriers) {
                Pending::Done => return true,
                Pending::Blocked => return false,
                Pending::Ready { .. } => self.step(barriers),
            }
        }
    }

    /// Runs non-store statements until the next store operation, commit,
    /// closed barrier or the end.
    pub fn advance(&mut self, barriers: &Barriers) {
        while self.status == Status::Running {
            let frame = self.stack.last().expect("running machine has a frame");
            if let Some(stmt) = frame.stmts.get(frame.pc).cloned() {
                if stmt.kind.is_store_op() {
                    if !self.in_constraint() {
                        return;
                    }
                    let flow = self.store_op(&stmt);
                    self.unwind(flow);
                    continue;
                }
                self.exec(&stmt, barriers);
                continue;
            }
            match &frame.role {
                Role::Top => {
                    self.status = Status::Done;
                    barriers.finish(self.index);
                }
                Role::Txn(tf) => {
                    if tf.committing || tf.opened || tf.constraint.is_some() {
                        return;
                    }
                    self.stack.pop();
                    self.unwind(Flow::Next);
                }
                Role::Snapshot { opened } => {
                    if *opened {
                        self.end_level(false);
                    }
                    self.stack.pop();
                    self.unwind(Flow::Next);
                }
                Role::Constraint => {
                    self.stack.pop();
                    self.after_constraint();
                }
            }
        }
    }

    fn exec(&mut self, stmt: &Stmt, barriers: &Barriers) {
        match &stmt.kind {
            StmtKind::Txn { options, body, constraint } => {
                let mut tf = TxnFrame {
                    restart: false,
                    id: None,
                    max_retries: None,
                    constraint: constraint.clone(),
                    saved_env: self.env.clone(),
                    attempts: 0,
                    opened: false,
                    committing: false,
                };
                for opt in options {
                    match opt {
                        TxnOpt::Restart(on) => tf.restart = *on,
                        TxnOpt::MaxRetries(n) => tf.max_retries = Some(*n),
                        TxnOpt::Id(p) => match p.substitute(&self.env).ground() {
                            Ok(t) => tf.id = Some(t),
                            Err(e) => return self.unwind(Flow::Raise(e)),
                        },
                    }
                }
                self.stack.push(Frame { stmts: body.clone(), pc: 0, role: Role::Txn(tf) });
            }
            StmtKind::Snapshot(body) => {
                self.stack.push(Frame { stmts: body.clone(), pc: 0, role: Role::Snapshot { opened: false } });
            }
            StmtKind::Sync(name) => {
                if self.in_constraint() {
                    return self.unwind(Flow::Raise(Error::Usage("sync inside a constraint".into())));
                }
                barriers.arrive(self.index, name);
                if barriers.is_open(name) {
                    self.unwind(Flow::Next);
                } else {
                    self.status = Status::AtSync(name.clone());
                }
            }
            _ => {
                let flow = self.eval(stmt);
                self.unwind(flow);
            }
        }
    }

    fn eval(&mut self, stmt: &Stmt) -> Flow {
        let flow = |r: CoreResult<bool>| match r {
            Ok(true) => Flow::Next,
            Ok(false) => Flow::Fail,
            Err(e) => Flow::Raise(e),
        };
        match &stmt.kind {
            StmtKind::True => Flow::Next,
            StmtKind::Fail => Flow::Fail,
            StmtKind::Throw(p) => match p.substitute(&self.env).ground() {
                Ok(t) => Flow::Raise(Error::Thrown(t)),
                Err(e) => Flow::Raise(e),
            },
            StmtKind::Is(lhs, expr) => flow(self.arith(expr).map(|v| self.bind(lhs, &Term::Int(v)))),
            StmtKind::Test(t) => flow(self.test(t)),
            StmtKind::Expect(t) => {
                let r = self.test(t);
                match &r {
                    Ok(true) => {}
                    Ok(false) => self.fail_expect(stmt, "false".into()),
                    Err(e) => self.fail_expect(stmt, e.to_term().to_string()),
                }
                flow(r)
            }
            other => unreachable!("not a plain statement: {other:?}"),
        }
    }

    fn fail_expect(&mut self, stmt: &Stmt, got: String) {
        let shown = show_bindings(&self.env, &stmt.kind);
        self.failures.push(format!("{} {}:{}: {} was {got}{shown}", self.name, stmt.line, stmt.column, stmt.text));
    }

    fn bind(&mut self, pattern: &Pattern, term: &Term) -> bool {
        let mut env = self.env.clone();
        if pattern.substitute(&self.env).match_into(term, &mut env) {
            self.env = env;
            true
        } else {
            false
        }
    }

    fn arith(&self, p: &Pattern) -> CoreResult<i64> {
        eval_arith(&p.substitute(&self.env))
    }

    fn test(&mut self, t: &Test) -> CoreResult<bool> {
        match t {
            Test::Arith(op, a, b) => {
                let (a, b) = (self.arith(a)?, self.arith(b)?);
                Ok(match op {
                    CmpOp::Eq => a == b,
                    CmpOp::Ne => a != b,
                    CmpOp::Lt => a < b,
                    CmpOp::Gt => a > b,
                    CmpOp::Le => a <= b,
                    CmpOp::Ge => a >= b,
                })
            }
            Test::Unify(a, b) => self.unify(a, b),
            Test::NotUnify(a, b) => {
                let env = self.env.clone();
                let r = self.unify(a, b);
                self.env = env;
                r.map(|u| !u)
            }
            Test::Outcome(p) => {
                let outcome = self.last_outcome.clone();
                Ok(self.bind(p, &outcome))
            }
        }
    }

    fn unify(&mut self, a: &Pattern, b: &Pattern) -> CoreResult<bool> {
        let (a, b) = (a.substitute(&self.env), b.substitute(&self.env));
        if let Some(tb) = b.to_term() {
            Ok(self.bind(&a, &tb))
        } else if let Some(ta) = a.to_term() {
            Ok(self.bind(&b, &ta))
        } else {
            Err(Error::Domain(format!("instantiation: cannot unify {a} with {b}")))
        }
    }

    /// Opens every transaction level entered but not yet started.
    fn open_levels(&mut self) -> CoreResult<()> {
        for i in 0..self.stack.len() {
            let (kind, id) = match &self.stack[i].role {
                Role::Txn(tf) if !tf.opened => (TxnKind::Transaction, tf.id.clone()),
                Role::Snapshot { opened: false } => (TxnKind::Snapshot, None),
                _ => continue,
            };
            let outermost = !self.session.in_transaction();
            self.session.begin(kind, id)?;
            match &mut self.stack[i].role {
                Role::Txn(tf) => tf.opened = true,
                Role::Snapshot { opened } => *opened = true,
                _ => unreachable!(),
            }
            if outermost {
                let kind = if kind == TxnKind::Snapshot { UnitKind::Snapshot } else { UnitKind::Transaction };
                self.units.push(Unit { session: self.index, kind, obs: Vec::new(), end: UnitEnd::Open });
                self.current = Some(self.units.len() - 1);
            } else {
                self.record(Obs::NestBegin);
            }
        }
        Ok(())
    }

    fn record(&mut self, obs: Obs) {
        match self.current {
            Some(u) => self.units[u].obs.push(obs),
            None => self.units.push(Unit {
                session: self.index,
                kind: UnitKind::Bare,
                obs: vec![obs],
                end: UnitEnd::Committed(None),
            }),
        }
    }

    /// Records the end of the innermost open level, which the session has
    /// already closed. `was_outermost` refers to that level.
    fn record_end(&mut self, was_outermost: bool, end: UnitEnd) {
        if was_outermost {
            if let Some(u) = self.current.take() {
                self.units[u].end = match (self.units[u].kind, end) {
                    (UnitKind::Snapshot, _) => UnitEnd::Committed(None),
                    (_, e) => e,
                };
            }
        } else {
            self.record(if end == UnitEnd::Aborted { Obs::NestRollback } else { Obs::NestCommit });
        }
    }

    /// Rolls back the innermost open level.
    fn end_level(&mut self, _commit: bool) {
        let outermost = self.session.level() == 1;
        self.session.rollback().expect("rollback of an open level");
        self.record_end(outermost, UnitEnd::Aborted);
    }

    fn store_op(&mut self, stmt: &Stmt) -> Flow {
        if let Err(e) = self.open_levels() {
            return Flow::Raise(e);
        }
        let bare = self.current.is_none();
        let r = self.store_op_inner(stmt);
        let text = match &r {
            Ok((true, _, shown)) => shown.clone(),
            Ok((false, _, _)) => "false".into(),
            Err(e) => format!("error({})", e.to_term()),
        };
        self.log.push(format!("{}   {}:{} {} -> {text}", self.name, stmt.line, stmt.column, stmt.text));
        match r {
            Ok((ok, obs, _)) => {
                self.record(obs);
                if ok {
                    Flow::Next
                } else {
                    Flow::Fail
                }
            }
            Err(e) => {
                if bare {
                    self.units.push(Unit {
                        session: self.index,
                        kind: UnitKind::Bare,
                        obs: vec![],
                        end: UnitEnd::Aborted,
                    });
                }
                Flow::Raise(e)
            }
        }
    }

    fn store_op_inner(&mut self, stmt: &Stmt) -> CoreResult<(bool, Obs, String)> {
        Ok(match &stmt.kind {
            StmtKind::Assertz(p) | StmtKind::Asserta(p) => {
                let t = p.substitute(&self.env).ground()?;
                if matches!(stmt.kind, StmtKind::Assertz(_)) {
                    self.session.assertz(t.clone())?;
                } else {
                    self.session.asserta(t.clone())?;
                }
                (true, Obs::Assert(t), "true".into())
            }
            StmtKind::Retract(p) => {
                let pat = p.substitute(&self.env);
                let got = self.session.retract(&pat)?;
                let ok = got.as_ref().is_some_and(|t| self.bind(&pat, t));
                let shown = got.as_ref().map(Term::to_string).unwrap_or_default();
                (ok, Obs::Retract(pat, got), shown)
            }
            StmtKind::Query(p) => {
                let pat = p.substitute(&self.env);
                let first = self.session.query(&pat)?.next().map(|r| r.term);
                let ok = first.as_ref().is_some_and(|t| self.bind(&pat, t));
                let shown = first.as_ref().map(Term::to_string).unwrap_or_default();
                (ok, Obs::First(pat, first), shown)
            }
            StmtKind::Count(p, n) => {
                let pat = p.substitute(&self.env);
                let rows = self.session.query_all(&pat)?;
                let count = Term::Int(rows.len() as i64);
                let shown = count.to_string();
                (self.bind(n, &count), Obs::All(pat, rows), shown)
            }
            StmtKind::Sum(v, p, s) => {
                let pat = p.substitute(&self.env);
                let value = v.substitute(&self.env);
                let rows: Vec<_> = self.session.query(&pat)?.collect();
                let mut total: i64 = 0;
                for row in &rows {
                    let x = value.substitute(&row.bindings).ground()?;
                    let x = x.as_int().ok_or_else(|| Error::Domain(format!("type: {x} is not an integer")))?;
                    total = total.checked_add(x).ok_or_else(|| Error::Domain("evaluation: int_overflow".into()))?;
                }
                let total = Term::Int(total);
                let shown = total.to_string();
                let terms = rows.into_iter().map(|r| r.term).collect();
                (self.bind(s, &total), Obs::All(pat, terms), shown)
            }
            other => unreachable!("not a store operation: {other:?}"),
        })
    }

    fn top_txn(&mut self) -> &mut TxnFrame {
        match self.stack.last_mut().map(|f| &mut f.role) {
            Some(Role::Txn(tf)) => tf,
            _ => unreachable!("no transaction frame on top"),
        }
    }

    fn commit_action(&mut self) {
        if self.top_txn().committing {
            return self.commit_steps();
        }
        if let Err(e) = self.open_levels() {
            return self.unwind(Flow::Raise(e));
        }
        let level = self.session.level();
        let hook = level == 1 && self.config.hook.is_some();
        let constraint = self.top_txn().constraint.clone();
        match self.session.begin_commit(constraint.is_some() || hook) {
            Err(e) => {
                if self.session.level() < level {
                    self.record_end(level == 1, UnitEnd::Aborted);
                    self.top_txn().opened = false;
                }
                self.unwind(Flow::Raise(e));
            }
            Ok(()) => {
                self.top_txn().committing = true;
                match constraint {
                    Some(c) => self.stack.push(Frame { stmts: c, pc: 0, role: Role::Constraint }),
                    None => self.after_constraint(),
                }
            }
        }
    }

    /// Runs the commit hook, if any, and the first commit step.
    fn after_constraint(&mut self) {
        if self.session.level() == 1 {
            if let Some(hook) = self.config.hook.clone() {
                match hook(&self.session) {
                    Ok(true) => {}
                    Ok(false) => return self.abort_commit(Flow::Fail),
                    Err(e) => return self.abort_commit(Flow::Raise(e)),
                }
            }
        }
        self.commit_steps();
    }

    /// Abandons the commit of the transaction on top after its constraint
    /// failed or raised.
    fn abort_commit(&mut self, flow: Flow) {
        let outermost = self.session.level() == 1;
        self.session.abort_commit().expect("abort before the first commit step");
        self.record_end(outermost, UnitEnd::Aborted);
        let tf = self.top_txn();
        tf.opened = false;
        tf.committing = false;
        let flow = match flow {
            Flow::Fail => Flow::Raise(TxnError::ConstraintFailed.into()),
            other => other,
        };
        self.unwind(flow);
    }

    fn commit_steps(&mut self) {
        loop {
            let level = self.session.level();
            match self.session.commit_step().expect("commit step") {
                CommitProgress::Pending if self.config.granularity == Granularity::Fine => return,
                CommitProgress::Pending => continue,
                CommitProgress::Done(gen) => {
                    self.record_end(level == 1, UnitEnd::Committed(gen.map(|g| g.0)));
                    if level == 1 {
                        self.stats.commits += 1;
                    }
                    self.stack.pop();
                    return self.unwind(Flow::Next);
                }
            }
        }
    }

    /// Propagates the result of the statement at the current position.
    fn unwind(&mut self, mut flow: Flow) {
        loop {
            let outer_levels = self
                .stack
                .iter()
                .rev()
                .skip(1)
                .filter(|f| matches!(f.role, Role::Txn(_) | Role::Snapshot { .. }))
                .count();
            let frame = self.stack.last_mut().expect("unwind with an empty stack");
            match (&flow, &mut frame.role) {
                (Flow::Next, Role::Top) => {
                    let stmt = &frame.stmts[frame.pc];
                    if !matches!(stmt.kind, StmtKind::Test(_) | StmtKind::Expect(_)) {
                        self.last_outcome = Term::atom("true");
                    }
                    let line = format!("{} {}:{} {} -> true", self.name, stmt.line, stmt.column, stmt.text);
                    let logged = stmt.kind.is_store_op();
                    frame.pc += 1;
                    if !logged {
                        self.log.push(line);
                    }
                    return;
                }
                (Flow::Next, _) => {
                    frame.pc += 1;
                    return;
                }
                (_, Role::Top) => {
                    let stmt = &frame.stmts[frame.pc];
                    let outcome = match &flow {
                        Flow::Raise(e) => Term::compound("error", vec![e.to_term()]),
                        _ => Term::atom("false"),
                    };
                    let line = format!("{} {}:{} {} -> {outcome}", self.name, stmt.line, stmt.column, stmt.text);
                    if !matches!(stmt.kind, StmtKind::Test(_) | StmtKind::Expect(_)) {
                        self.last_outcome = outcome;
                    }
                    let logged = stmt.kind.is_store_op() && matches!(flow, Flow::Fail);
                    frame.pc += 1;
                    if !logged {
                        self.log.push(line);
                    }
                    return;
                }
                (_, Role::Constraint) => {
                    self.stack.pop();
                    let outermost = self.session.level() == 1;
                    self.session.abort_commit().expect("abort before the first commit step");
                    self.record_end(outermost, UnitEnd::Aborted);
                    let tf = self.top_txn();
                    tf.opened = false;
                    tf.committing = false;
                    if let Flow::Fail = flow {
                        flow = Flow::Raise(TxnError::ConstraintFailed.into());
                    }
                }
                (_, Role::Snapshot { opened }) => {
                    if *opened {
                        self.end_level(false);
                    }
                    self.stack.pop();
                }
                (_, Role::Txn(tf)) => {
                    let opened = tf.opened;
                    if opened {
                        self.end_level(false);
                    }
                    let Role::Txn(tf) = &mut self.stack.last_mut().unwrap().role else { unreachable!() };
                    self.env = tf.saved_env.clone();
                    let conflict = matches!(&flow, Flow::Raise(Error::Transaction(TxnError::Conflict(_))));
                    let retry = matches!(&flow, Flow::Raise(e) if e.is_transaction_error())
                        && tf.restart
                        && outer_levels == 0
                        && tf.max_retries.or(self.config.max_retries).is_none_or(|cap| tf.attempts < cap);
                    if outer_levels == 0 {
                        if conflict {
                            self.stats.conflicts += 1;
                        }
                        if opened || !retry {
                            self.stats.aborts += 1;
                        }
                    }
                    if retry {
                        tf.attempts += 1;
                        tf.opened = false;
                        tf.committing = false;
                        let attempts = tf.attempts;
                        self.stack.last_mut().unwrap().pc = 0;
                        self.stats.restarts += 1;
                        if self.config.backoff {
                            std::thread::sleep(backoff_delay(attempts - 1, &mut self.rng));
                        }
                        return;
                    }
                    self.stack.pop();
                }
            }
        }
    }
}

fn show_bindings(env: &Bindings, kind: &StmtKind) -> String {
    let Some(test) = (match kind {
        StmtKind::Expect(t) => Some(t),
        _ => None,
    }) else {
        return String::new();
    };
    let vars: Vec<_> = match test {
        Test::Arith(_, a, b) | Test::Unify(a, b) | Test::NotUnify(a, b) => {
            a.variables().into_iter().chain(b.variables()).collect()
        }
        Test::Outcome(p) => p.variables(),
    };
    let shown: Vec<String> = vars.iter().filter_map(|v| env.get(v).map(|t| format!("{} = {t}", v.as_str()))).collect();
    if shown.is_empty() {
        String::new()
    } else {
        format!(" with {}", shown.join(", "))
    }
}

/// Integer arithmetic over `+ - * / // mod` and unary minus.
pub fn eval_arith(p: &Pattern) -> CoreResult<i64> {
    let overflow = || Error::Domain("evaluation: int_overflow".into());
    match p {
        Pattern::Int(v) => Ok(*v),
        Pattern::Var(_) | Pattern::Any => Err(Error::Domain(format!("instantiation: {p} is unbound"))),
        Pattern::Compound(op, args) if args.len() == 1 && op.as_str() == "-" => {
            eval_arith(&args[0])?.checked_neg().ok_or_else(overflow)
        }
        Pattern::Compound(op, args) if args.len() == 2 => {
            let (a, b) = (eval_arith(&args[0])?, eval_arith(&args[1])?);
            let zero = || Error::Domain("evaluation: zero_divisor".into());
            match op.as_str() {
                "+" => a.checked_add(b).ok_or_else(overflow),
                "-" => a.checked_sub(b).ok_or_else(overflow),
                "*" => a.checked_mul(b).ok_or_else(overflow),
                "/" | "//" if b == 0 => Err(zero()),
                "/" | "//" => a.checked_div(b).ok_or_else(overflow),
                "mod" if b == 0 => Err(zero()),
                "mod" => Ok(a.checked_rem(b).ok_or_else(overflow)?.wrapping_add(b) % b),
                _ => Err(Error::Domain(format!("type: {p} is not evaluable"))),
            }
        }
        _ => Err(Error::Domain(format!("type: {p} is not evaluable"))),
    }
}
