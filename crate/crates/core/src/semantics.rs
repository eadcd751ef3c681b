//! Operational semantics: TSO and SC transition steps, breadth-first SC
//! reachability with a visited set, bounded enumeration of TSO computations,
//! and computation replay (action-to-instruction attribution).
//!
//! Under TSO every thread owns a FIFO store buffer. A store instruction
//! issues into the buffer; an independent flush step publishes the oldest
//! entry to memory. Loads read the youngest buffered entry for their address
//! and fall back to memory. Fences and locked instructions are enabled only
//! on an empty buffer. Under SC a store instruction publishes immediately,
//! producing an issue action directly followed by the store action.

use std::collections::{HashMap, VecDeque};
use std::fmt;

use thiserror::Error;

use crate::exec::{eval, ExecInstKind, ExecProgram};

/// Transition label: thread id plus what happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Action {
    pub thread: u32,
    pub kind: ActionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ActionKind {
    /// A store was executed on the processor (entered the buffer).
    Issue,
    /// A thread-local step: fence, assignment or assertion.
    Local,
    Load { addr: u32, val: u32 },
    Store { addr: u32, val: u32 },
}

impl Action {
    pub fn new(thread: u32, kind: ActionKind) -> Self {
        Action { thread, kind }
    }

    pub fn is_store(&self) -> bool {
        matches!(self.kind, ActionKind::Store { .. })
    }

    pub fn is_issue(&self) -> bool {
        matches!(self.kind, ActionKind::Issue)
    }

    pub fn addr(&self) -> Option<u32> {
        match self.kind {
            ActionKind::Load { addr, .. } | ActionKind::Store { addr, .. } => Some(addr),
            _ => None,
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            ActionKind::Issue => write!(f, "(t{},isu)", self.thread),
            ActionKind::Local => write!(f, "(t{},loc)", self.thread),
            ActionKind::Load { addr, val } => write!(f, "(t{},ld,{addr},{val})", self.thread),
            ActionKind::Store { addr, val } => write!(f, "(t{},st,{addr},{val})", self.thread),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompKind {
    Sc,
    Tso,
}

/// A finite action sequence from the initial state. TSO computations end
/// with all buffers drained.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Computation {
    pub kind: CompKind,
    pub actions: Vec<Action>,
}

/// One buffered store: address, value and the instruction that issued it
/// (kept for witness reconstruction; not part of state identity).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BufEntry {
    pub addr: u32,
    pub val: u32,
    pub inst: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsoState {
    pub pcs: Vec<u32>,
    pub regs: Vec<u32>,
    pub mem: Vec<u32>,
    pub buffers: Vec<VecDeque<BufEntry>>,
}

impl TsoState {
    pub fn buffers_empty(&self) -> bool {
        self.buffers.iter().all(|b| b.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ScState {
    pub pcs: Vec<u32>,
    pub regs: Vec<u32>,
    pub mem: Vec<u32>,
}

pub fn initial_tso(p: &ExecProgram) -> TsoState {
    TsoState {
        pcs: p.threads.iter().map(|t| t.init).collect(),
        regs: vec![0; p.total_regs],
        mem: vec![0; p.domain as usize],
        buffers: vec![VecDeque::new(); p.threads.len()],
    }
}

pub fn initial_sc(p: &ExecProgram) -> ScState {
    ScState {
        pcs: p.threads.iter().map(|t| t.init).collect(),
        regs: vec![0; p.total_regs],
        mem: vec![0; p.domain as usize],
    }
}

fn thread_regs<'a>(p: &ExecProgram, regs: &'a [u32], t: usize) -> &'a [u32] {
    let base = p.reg_base[t];
    &regs[base..base + p.threads[t].reg_names.len()]
}

/// Buffer-forwarded read: the youngest buffered store to `addr`, else memory.
fn tso_read(s: &TsoState, t: usize, addr: u32) -> u32 {
    s.buffers[t]
        .iter()
        .rev()
        .find(|e| e.addr == addr)
        .map(|e| e.val)
        .unwrap_or_else(|| s.mem[addr as usize])
}

/// Executes instruction `inst` of `thread` under TSO, if enabled.
/// Returns the emitted actions (one, except for locked compare-and-set which
/// emits its read and, on success, an adjacent issue/store pair).
pub fn tso_exec_inst(
    p: &ExecProgram,
    s: &TsoState,
    thread: usize,
    inst: u32,
    max_buffer: usize,
) -> Option<(Vec<Action>, TsoState)> {
    let th = &p.threads[thread];
    let ins = &th.insts[inst as usize];
    debug_assert_eq!(s.pcs[thread], ins.src);
    let m = p.domain;
    let tid = thread as u32;
    let regs = thread_regs(p, &s.regs, thread);
    let mut read = |a: u32| tso_read(s, thread, a);
    match &ins.kind {
        ExecInstKind::Load { reg, addr } => {
            let a = eval(addr, regs, &mut read, m);
            let v = tso_read(s, thread, a);
            let mut next = s.clone();
            next.regs[p.reg_base[thread] + reg] = v;
            next.pcs[thread] = ins.dst;
            Some((
                vec![Action::new(tid, ActionKind::Load { addr: a, val: v })],
                next,
            ))
        }
        ExecInstKind::Store { addr, value } => {
            if s.buffers[thread].len() >= max_buffer {
                return None;
            }
            let a = eval(addr, regs, &mut read, m);
            let v = eval(value, regs, &mut read, m);
            let mut next = s.clone();
            next.buffers[thread].push_back(BufEntry {
                addr: a,
                val: v,
                inst,
            });
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Issue)], next))
        }
        ExecInstKind::Mfence => {
            if !s.buffers[thread].is_empty() {
                return None;
            }
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Assign { reg, expr } => {
            let v = eval(expr, regs, &mut read, m);
            let mut next = s.clone();
            next.regs[p.reg_base[thread] + reg] = v;
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Assert { cond } => {
            if eval(cond, regs, &mut read, m) == 0 {
                return None;
            }
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Cas {
            addr,
            expect,
            new,
            result,
        } => {
            // Locked instruction: requires a drained buffer and acts on
            // memory atomically.
            if !s.buffers[thread].is_empty() {
                return None;
            }
            let a = eval(addr, regs, &mut read, m);
            let exp = eval(expect, regs, &mut read, m);
            let nv = eval(new, regs, &mut read, m);
            let old = s.mem[a as usize];
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            if old == exp {
                next.mem[a as usize] = nv;
                next.regs[p.reg_base[thread] + result] = 1;
                Some((
                    vec![
                        Action::new(tid, ActionKind::Load { addr: a, val: old }),
                        Action::new(tid, ActionKind::Issue),
                        Action::new(tid, ActionKind::Store { addr: a, val: nv }),
                    ],
                    next,
                ))
            } else {
                next.regs[p.reg_base[thread] + result] = 0;
                Some((
                    vec![Action::new(tid, ActionKind::Load { addr: a, val: old })],
                    next,
                ))
            }
        }
    }
}

/// Publishes the oldest buffered store of `thread` to memory.
pub fn tso_flush_one(
    _p: &ExecProgram,
    s: &TsoState,
    thread: usize,
) -> Option<(Action, TsoState)> {
    let entry = *s.buffers[thread].front()?;
    let mut next = s.clone();
    next.buffers[thread].pop_front();
    next.mem[entry.addr as usize] = entry.val;
    Some((
        Action::new(
            thread as u32,
            ActionKind::Store {
                addr: entry.addr,
                val: entry.val,
            },
        ),
        next,
    ))
}

fn push_dedup(out: &mut Vec<(Vec<Action>, TsoState)>, item: (Vec<Action>, TsoState)) {
    if !out.iter().any(|x| *x == item) {
        out.push(item);
    }
}

fn tso_successors(
    p: &ExecProgram,
    s: &TsoState,
    max_buffer: usize,
) -> Vec<(Vec<Action>, TsoState)> {
    let mut out = Vec::new();
    for t in 0..p.threads.len() {
        if let Some((a, ns)) = tso_flush_one(p, s, t) {
            push_dedup(&mut out, (vec![a], ns));
        }
    }
    for t in 0..p.threads.len() {
        let th = &p.threads[t];
        for &i in &th.by_label[s.pcs[t] as usize] {
            if let Some(succ) = tso_exec_inst(p, s, t, i, max_buffer) {
                push_dedup(&mut out, succ);
            }
        }
    }
    out
}

/// All TSO successors of `s`: the enabled transitions of the buffered
/// semantics, including buffer flush steps. Stuck states yield an empty set.
pub fn tso_step(p: &ExecProgram, s: &TsoState) -> Vec<(Vec<Action>, TsoState)> {
    tso_successors(p, s, usize::MAX)
}

/// Executes instruction `inst` of `thread` under SC, if enabled.
pub fn sc_exec_inst(
    p: &ExecProgram,
    s: &ScState,
    thread: usize,
    inst: u32,
) -> Option<(Vec<Action>, ScState)> {
    let th = &p.threads[thread];
    let ins = &th.insts[inst as usize];
    debug_assert_eq!(s.pcs[thread], ins.src);
    let m = p.domain;
    let tid = thread as u32;
    let regs = thread_regs(p, &s.regs, thread);
    let mem = &s.mem;
    let mut read = |a: u32| mem[a as usize];
    match &ins.kind {
        ExecInstKind::Load { reg, addr } => {
            let a = eval(addr, regs, &mut read, m);
            let v = s.mem[a as usize];
            let mut next = s.clone();
            next.regs[p.reg_base[thread] + reg] = v;
            next.pcs[thread] = ins.dst;
            Some((
                vec![Action::new(tid, ActionKind::Load { addr: a, val: v })],
                next,
            ))
        }
        ExecInstKind::Store { addr, value } => {
            // A store yields an issue directly followed by the store.
            let a = eval(addr, regs, &mut read, m);
            let v = eval(value, regs, &mut read, m);
            let mut next = s.clone();
            next.mem[a as usize] = v;
            next.pcs[thread] = ins.dst;
            Some((
                vec![
                    Action::new(tid, ActionKind::Issue),
                    Action::new(tid, ActionKind::Store { addr: a, val: v }),
                ],
                next,
            ))
        }
        ExecInstKind::Mfence => {
            // Fences have no effect under SC.
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Assign { reg, expr } => {
            let v = eval(expr, regs, &mut read, m);
            let mut next = s.clone();
            next.regs[p.reg_base[thread] + reg] = v;
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Assert { cond } => {
            if eval(cond, regs, &mut read, m) == 0 {
                return None;
            }
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            Some((vec![Action::new(tid, ActionKind::Local)], next))
        }
        ExecInstKind::Cas {
            addr,
            expect,
            new,
            result,
        } => {
            let a = eval(addr, regs, &mut read, m);
            let exp = eval(expect, regs, &mut read, m);
            let nv = eval(new, regs, &mut read, m);
            let old = s.mem[a as usize];
            let mut next = s.clone();
            next.pcs[thread] = ins.dst;
            if old == exp {
                next.mem[a as usize] = nv;
                next.regs[p.reg_base[thread] + result] = 1;
                Some((
                    vec![
                        Action::new(tid, ActionKind::Load { addr: a, val: old }),
                        Action::new(tid, ActionKind::Issue),
                        Action::new(tid, ActionKind::Store { addr: a, val: nv }),
                    ],
                    next,
                ))
            } else {
                next.regs[p.reg_base[thread] + result] = 0;
                Some((
                    vec![Action::new(tid, ActionKind::Load { addr: a, val: old })],
                    next,
                ))
            }
        }
    }
}

/// One SC transition with its source instruction, for path reconstruction.
#[derive(Debug, Clone)]
pub struct ScTransition {
    pub thread: u32,
    pub inst: u32,
    pub actions: Vec<Action>,
    pub state: ScState,
}

pub fn sc_transitions(p: &ExecProgram, s: &ScState) -> Vec<ScTransition> {
    let mut out: Vec<ScTransition> = Vec::new();
    for t in 0..p.threads.len() {
        let th = &p.threads[t];
        for &i in &th.by_label[s.pcs[t] as usize] {
            if let Some((actions, state)) = sc_exec_inst(p, s, t, i) {
                if !out
                    .iter()
                    .any(|x| x.actions == actions && x.state == state)
                {
                    out.push(ScTransition {
                        thread: t as u32,
                        inst: i,
                        actions,
                        state,
                    });
                }
            }
        }
    }
    out
}

/// All SC successors of `s` as (action sequence, state) pairs.
pub fn sc_step(p: &ExecProgram, s: &ScState) -> Vec<(Vec<Action>, ScState)> {
    sc_transitions(p, s)
        .into_iter()
        .map(|t| (t.actions, t.state))
        .collect()
}

/// One step of a reconstructed SC reachability path.
#[derive(Debug, Clone)]
pub struct PathStep {
    pub thread: u32,
    pub inst: u32,
    pub actions: Vec<Action>,
}

#[derive(Debug, Clone)]
pub enum ScSearchOutcome {
    Reached { path: Vec<PathStep> },
    Exhausted,
    BudgetExceeded,
}

#[derive(Debug, Clone)]
pub struct ScSearchResult {
    pub outcome: ScSearchOutcome,
    /// Number of distinct states inserted into the visited set.
    pub states: u64,
}

fn pack(s: &ScState) -> Box<[u32]> {
    let mut v = Vec::with_capacity(s.pcs.len() + s.regs.len() + s.mem.len());
    v.extend_from_slice(&s.pcs);
    v.extend_from_slice(&s.regs);
    v.extend_from_slice(&s.mem);
    v.into_boxed_slice()
}

fn unpack(p: &ExecProgram, data: &[u32]) -> ScState {
    let nt = p.threads.len();
    let nr = p.total_regs;
    ScState {
        pcs: data[..nt].to_vec(),
        regs: data[nt..nt + nr].to_vec(),
        mem: data[nt + nr..].to_vec(),
    }
}

/// Complete breadth-first search of the SC state graph for a state
/// satisfying `goal`. Deterministic: states are expanded in insertion order
/// and successors in thread/instruction order, so the returned path is a
/// shortest one and stable across runs.
pub fn sc_search(
    p: &ExecProgram,
    goal: impl Fn(&ExecProgram, &ScState) -> bool,
    budget: u64,
) -> ScSearchResult {
    let init = initial_sc(p);
    let mut arena: Vec<Box<[u32]>> = Vec::new();
    let mut index: HashMap<Box<[u32]>, u32> = HashMap::new();
    let mut parent: Vec<Option<(u32, PathStep)>> = Vec::new();

    let packed = pack(&init);
    index.insert(packed.clone(), 0);
    arena.push(packed);
    parent.push(None);

    if goal(p, &init) {
        return ScSearchResult {
            outcome: ScSearchOutcome::Reached { path: Vec::new() },
            states: 1,
        };
    }

    let mut queue: VecDeque<u32> = VecDeque::new();
    queue.push_back(0);
    while let Some(at) = queue.pop_front() {
        let state = unpack(p, &arena[at as usize]);
        for tr in sc_transitions(p, &state) {
            let packed = pack(&tr.state);
            if index.contains_key(&packed) {
                continue;
            }
            let id = arena.len() as u32;
            if id as u64 >= budget {
                return ScSearchResult {
                    outcome: ScSearchOutcome::BudgetExceeded,
                    states: arena.len() as u64,
                };
            }
            index.insert(packed.clone(), id);
            arena.push(packed);
            parent.push(Some((
                at,
                PathStep {
                    thread: tr.thread,
                    inst: tr.inst,
                    actions: tr.actions.clone(),
                },
            )));
            if goal(p, &tr.state) {
                let mut path = Vec::new();
                let mut cur = id;
                while let Some((prev, step)) = parent[cur as usize].clone() {
                    path.push(step);
                    cur = prev;
                }
                path.reverse();
                return ScSearchResult {
                    outcome: ScSearchOutcome::Reached { path },
                    states: arena.len() as u64,
                };
            }
            queue.push_back(id);
        }
    }
    ScSearchResult {
        outcome: ScSearchOutcome::Exhausted,
        states: arena.len() as u64,
    }
}

/// Result of an SC reachability query.
#[derive(Debug, Clone)]
pub enum Reachability {
    Reachable { computation: Computation, states: u64 },
    NotReachable { states: u64 },
    Inconclusive { states: u64, budget: u64 },
}

/// Breadth-first SC reachability; `Reachable` carries a shortest action path.
pub fn sc_reachable(
    p: &ExecProgram,
    goal: impl Fn(&ExecProgram, &ScState) -> bool,
    budget: u64,
) -> Reachability {
    let r = sc_search(p, goal, budget);
    match r.outcome {
        ScSearchOutcome::Reached { path } => Reachability::Reachable {
            computation: Computation {
                kind: CompKind::Sc,
                actions: path.into_iter().flat_map(|s| s.actions).collect(),
            },
            states: r.states,
        },
        ScSearchOutcome::Exhausted => Reachability::NotReachable { states: r.states },
        ScSearchOutcome::BudgetExceeded => Reachability::Inconclusive {
            states: r.states,
            budget,
        },
    }
}

/// Enumeration bounds for TSO computations: a per-thread buffer capacity and
/// a total action count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TsoBounds {
    pub max_buffer: usize,
    pub max_length: usize,
}

/// Calls `f` on every TSO computation within the bounds, in a fixed
/// depth-first order (flushes before instruction steps, threads in order).
/// Every prefix whose buffers are all empty is a computation, including the
/// empty one. `f` returns `false` to stop early; the function reports
/// whether enumeration ran to completion.
pub fn for_each_tso_computation(
    p: &ExecProgram,
    bounds: TsoBounds,
    f: &mut impl FnMut(&[Action]) -> bool,
) -> bool {
    let mut actions: Vec<Action> = Vec::new();
    let init = initial_tso(p);
    dfs_tso(p, bounds, &init, &mut actions, f)
}

fn dfs_tso(
    p: &ExecProgram,
    bounds: TsoBounds,
    s: &TsoState,
    actions: &mut Vec<Action>,
    f: &mut impl FnMut(&[Action]) -> bool,
) -> bool {
    if s.buffers_empty() && !f(actions) {
        return false;
    }
    if actions.len() >= bounds.max_length {
        return true;
    }
    for (acts, next) in tso_successors(p, s, bounds.max_buffer) {
        if actions.len() + acts.len() > bounds.max_length {
            continue;
        }
        let mark = actions.len();
        actions.extend_from_slice(&acts);
        let keep_going = dfs_tso(p, bounds, &next, actions, f);
        actions.truncate(mark);
        if !keep_going {
            return false;
        }
    }
    true
}

/// Collects every TSO computation within the bounds.
pub fn enumerate_tso_computations(p: &ExecProgram, bounds: TsoBounds) -> Vec<Computation> {
    let mut out = Vec::new();
    for_each_tso_computation(p, bounds, &mut |actions| {
        out.push(Computation {
            kind: CompKind::Tso,
            actions: actions.to_vec(),
        });
        true
    });
    out
}

/// Calls `f` on every SC computation (every action sequence reachable from
/// the initial state) up to `max_length` actions, in a fixed depth-first
/// order. `f` returns `false` to stop early.
pub fn for_each_sc_computation(
    p: &ExecProgram,
    max_length: usize,
    f: &mut impl FnMut(&[Action]) -> bool,
) -> bool {
    fn dfs(
        p: &ExecProgram,
        max_length: usize,
        s: &ScState,
        actions: &mut Vec<Action>,
        f: &mut impl FnMut(&[Action]) -> bool,
    ) -> bool {
        if !f(actions) {
            return false;
        }
        if actions.len() >= max_length {
            return true;
        }
        for (acts, next) in sc_step(p, s) {
            if actions.len() + acts.len() > max_length {
                continue;
            }
            let mark = actions.len();
            actions.extend_from_slice(&acts);
            let keep_going = dfs(p, max_length, &next, actions, f);
            actions.truncate(mark);
            if !keep_going {
                return false;
            }
        }
        true
    }
    let init = initial_sc(p);
    let mut actions = Vec::new();
    dfs(p, max_length, &init, &mut actions, f)
}

/// Collects every SC computation up to `max_length` actions.
pub fn enumerate_sc_computations(p: &ExecProgram, max_length: usize) -> Vec<Computation> {
    let mut out = Vec::new();
    for_each_sc_computation(p, max_length, &mut |actions| {
        out.push(Computation {
            kind: CompKind::Sc,
            actions: actions.to_vec(),
        });
        true
    });
    out
}

/// Bounds that make TSO enumeration exhaustive, when they exist.
///
/// For programs whose every thread has an acyclic control-flow graph, a
/// buffer bound of the largest number of stores on a control path and a
/// length bound of three actions per executed instruction cover every
/// computation. Returns `None` when some thread can loop.
pub fn complete_bounds(p: &ExecProgram) -> Option<TsoBounds> {
    let mut max_buffer = 1usize;
    let mut total_len = 0usize;
    for t in &p.threads {
        let n = t.labels.len();
        // Edge lists per label.
        let mut succ: Vec<Vec<(u32, bool)>> = vec![Vec::new(); n];
        for inst in &t.insts {
            let is_store = matches!(inst.kind, ExecInstKind::Store { .. });
            succ[inst.src as usize].push((inst.dst, is_store));
        }
        // Cycle check + longest paths by DFS with memoization.
        let mut state = vec![0u8; n]; // 0 unvisited, 1 on stack, 2 done
        let mut longest = vec![(0usize, 0usize); n]; // (instructions, stores)
        fn visit(
            at: usize,
            succ: &[Vec<(u32, bool)>],
            state: &mut [u8],
            longest: &mut [(usize, usize)],
        ) -> bool {
            if state[at] == 1 {
                return false;
            }
            if state[at] == 2 {
                return true;
            }
            state[at] = 1;
            let mut best = (0usize, 0usize);
            for &(next, is_store) in &succ[at] {
                if !visit(next as usize, succ, state, longest) {
                    return false;
                }
                let (li, ls) = longest[next as usize];
                best.0 = best.0.max(li + 1);
                best.1 = best.1.max(ls + usize::from(is_store));
            }
            longest[at] = best;
            state[at] = 2;
            true
        }
        for l in 0..n {
            if !visit(l, &succ, &mut state, &mut longest) {
                return None;
            }
        }
        let (li, ls) = longest[t.init as usize];
        max_buffer = max_buffer.max(ls);
        total_len += 3 * li;
    }
    Some(TsoBounds {
        max_buffer,
        max_length: total_len,
    })
}

/// Delay statistics of a computation: the number of same-thread actions
/// strictly between each issue and its matching store, summed up.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DelayInfo {
    pub total: u64,
    pub per_thread: Vec<u64>,
}

/// Counts delays by matching each thread's i-th store action to its i-th
/// issue (buffers are FIFO).
pub fn count_delays(num_threads: usize, actions: &[Action]) -> DelayInfo {
    let mut per_thread = vec![0u64; num_threads];
    let mut ordinal = vec![0u64; num_threads];
    let mut pending: Vec<VecDeque<u64>> = vec![VecDeque::new(); num_threads];
    for a in actions {
        let t = a.thread as usize;
        match a.kind {
            ActionKind::Issue => pending[t].push_back(ordinal[t]),
            ActionKind::Store { .. } => {
                if let Some(issued_at) = pending[t].pop_front() {
                    per_thread[t] += ordinal[t] - issued_at - 1;
                }
            }
            _ => {}
        }
        ordinal[t] += 1;
    }
    DelayInfo {
        total: per_thread.iter().sum(),
        per_thread,
    }
}

/// How one slice of a computation's actions was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplayStepKind {
    /// An instruction executed; for stores this is the issue only.
    Instruction { inst: u32 },
    /// A buffered store hit memory; `issuing_inst` is the store instruction
    /// whose issue put it there.
    Flush { issuing_inst: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplayStep {
    pub thread: u32,
    pub kind: ReplayStepKind,
    /// Index of the first action this step produced.
    pub first_action: usize,
    pub action_count: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("action {index}: {msg}")]
pub struct ReplayError {
    pub index: usize,
    pub msg: String,
}

/// Re-executes a computation, attributing every action to the instruction
/// that produced it. Store actions are matched against the oldest buffered
/// entry of their thread (TSO flushes in FIFO order). Distinct instructions
/// can emit identical actions but lead to different futures, so the search
/// backtracks; among complete replays the first in declaration order wins.
pub fn replay_computation(
    p: &ExecProgram,
    actions: &[Action],
) -> Result<(Vec<ReplayStep>, TsoState), ReplayError> {
    fn dfs(
        p: &ExecProgram,
        actions: &[Action],
        i: usize,
        state: TsoState,
        steps: &mut Vec<ReplayStep>,
        deepest: &mut (usize, String),
    ) -> Option<TsoState> {
        let Some(&a) = actions.get(i) else {
            return Some(state);
        };
        let t = a.thread as usize;
        let fail = |at: usize, msg: String, deepest: &mut (usize, String)| {
            if at >= deepest.0 {
                *deepest = (at, msg);
            }
        };
        if t >= p.threads.len() {
            fail(i, format!("unknown thread index {}", a.thread), deepest);
            return None;
        }
        if let ActionKind::Store { addr, val } = a.kind {
            // A lone store action is a buffer flush; store actions produced
            // by instructions (SC-style pairs, locked operations) are
            // consumed as part of their instruction's sequence below.
            match state.buffers[t].front().copied() {
                Some(front) if front.addr == addr && front.val == val => {
                    let (act, next) = tso_flush_one(p, &state, t).expect("nonempty buffer");
                    debug_assert_eq!(act, a);
                    steps.push(ReplayStep {
                        thread: a.thread,
                        kind: ReplayStepKind::Flush {
                            issuing_inst: front.inst,
                        },
                        first_action: i,
                        action_count: 1,
                    });
                    if let Some(end) = dfs(p, actions, i + 1, next, steps, deepest) {
                        return Some(end);
                    }
                    steps.pop();
                    return None;
                }
                _ => {
                    fail(
                        i,
                        format!("store action {a} does not match the oldest buffered entry"),
                        deepest,
                    );
                    return None;
                }
            }
        }
        let pc = state.pcs[t];
        let mut any = false;
        for &inst in &p.threads[t].by_label[pc as usize] {
            if let Some((acts, next)) = tso_exec_inst(p, &state, t, inst, usize::MAX) {
                if actions[i..].starts_with(&acts) {
                    any = true;
                    steps.push(ReplayStep {
                        thread: a.thread,
                        kind: ReplayStepKind::Instruction { inst },
                        first_action: i,
                        action_count: acts.len(),
                    });
                    if let Some(end) = dfs(p, actions, i + acts.len(), next, steps, deepest) {
                        return Some(end);
                    }
                    steps.pop();
                }
            }
        }
        if !any {
            fail(i, format!("no enabled instruction produces {a}"), deepest);
        }
        None
    }

    let mut steps = Vec::new();
    let mut deepest = (0usize, String::new());
    match dfs(p, actions, 0, initial_tso(p), &mut steps, &mut deepest) {
        Some(end) => Ok((steps, end)),
        None => Err(ReplayError {
            index: deepest.0,
            msg: if deepest.1.is_empty() {
                "empty computation space".to_string()
            } else {
                deepest.1
            },
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::ExecProgram;
    use crate::parser::parse_program;

    fn dekker() -> ExecProgram {
        ExecProgram::compile(&parse_program(crate::corpus::DEKKER).unwrap())
    }

    #[test]
    fn store_issues_into_buffer_without_memory_effect() {
        let p = dekker();
        let s0 = initial_tso(&p);
        let succs = tso_step(&p, &s0);
        let (acts, next) = succs
            .iter()
            .find(|(a, _)| a[0].thread == 0)
            .expect("t1 store enabled");
        assert_eq!(acts, &vec![Action::new(0, ActionKind::Issue)]);
        assert_eq!(
            next.buffers[0].iter().map(|e| (e.addr, e.val)).collect::<Vec<_>>(),
            vec![(0, 1)]
        );
        assert_eq!(next.mem, vec![0, 0]);
    }

    #[test]
    fn load_reads_youngest_matching_buffer_entry() {
        let p = dekker();
        let mut s = initial_tso(&p);
        // Force t1's pc to the load and give it two buffered stores to the
        // load's address.
        s.pcs[0] = p.threads[0].insts[1].src;
        s.buffers[0].push_back(BufEntry { addr: 1, val: 1, inst: 0 });
        s.buffers[0].push_back(BufEntry { addr: 1, val: 0, inst: 0 });
        let (acts, _) = tso_exec_inst(&p, &s, 0, 1, usize::MAX).unwrap();
        assert_eq!(
            acts,
            vec![Action::new(0, ActionKind::Load { addr: 1, val: 0 })]
        );
    }

    #[test]
    fn mfence_requires_empty_buffer() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: mfence; goto l2;\nend";
        let p = ExecProgram::compile(&parse_program(text).unwrap());
        let s0 = initial_tso(&p);
        let (_, buffered) = tso_exec_inst(&p, &s0, 0, 0, usize::MAX).unwrap();
        // Fence blocked while the store sits in the buffer.
        assert!(tso_exec_inst(&p, &buffered, 0, 1, usize::MAX).is_none());
        let (_, drained) = tso_flush_one(&p, &buffered, 0).unwrap();
        assert!(tso_exec_inst(&p, &drained, 0, 1, usize::MAX).is_some());
    }

    #[test]
    fn sc_store_is_issue_then_store() {
        let p = dekker();
        let s0 = initial_sc(&p);
        let succs = sc_step(&p, &s0);
        let (acts, next) = succs.iter().find(|(a, _)| a[0].thread == 0).unwrap();
        assert_eq!(
            acts,
            &vec![
                Action::new(0, ActionKind::Issue),
                Action::new(0, ActionKind::Store { addr: 0, val: 1 })
            ]
        );
        assert_eq!(next.mem, vec![1, 0]);
    }

    #[test]
    fn sc_fence_is_local_noop_and_false_assert_blocks() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mfence; goto l1;\n l1: assert 0; goto l2;\nend";
        let p = ExecProgram::compile(&parse_program(text).unwrap());
        let s0 = initial_sc(&p);
        let succs = sc_step(&p, &s0);
        assert_eq!(succs.len(), 1);
        assert_eq!(succs[0].0, vec![Action::new(0, ActionKind::Local)]);
        let after = &succs[0].1;
        assert!(sc_step(&p, after).is_empty());
    }

    #[test]
    fn dekker_mutual_exclusion_holds_under_sc() {
        let p = dekker();
        let l2 = p.threads[0].label_id(&"l2".into()).unwrap();
        let l2p = p.threads[1].label_id(&"l2'".into()).unwrap();
        let r1 = p.reg_index(0, "r1").unwrap();
        let r2 = p.reg_index(1, "r2").unwrap();
        let result = sc_reachable(
            &p,
            |_, s| s.pcs[0] == l2 && s.pcs[1] == l2p && s.regs[r1] == 0 && s.regs[r2] == 0,
            1_000_000,
        );
        assert!(matches!(result, Reachability::NotReachable { .. }));
    }

    #[test]
    fn goal_in_initial_state_returns_empty_path() {
        let p = dekker();
        let result = sc_reachable(&p, |_, _| true, 10);
        match result {
            Reachability::Reachable { computation, .. } => assert!(computation.actions.is_empty()),
            other => panic!("unexpected {other:?}"),
        }
    }

    /// Independent oracle: brute-force enumeration of all SC interleavings.
    fn brute_force_sc(p: &ExecProgram, limit: usize) -> Vec<Vec<Action>> {
        let mut out = Vec::new();
        let mut stack = vec![(initial_sc(p), Vec::<Action>::new())];
        while let Some((s, acts)) = stack.pop() {
            out.push(acts.clone());
            if acts.len() >= limit {
                continue;
            }
            for (a, next) in sc_step(p, &s) {
                let mut acts = acts.clone();
                acts.extend_from_slice(&a);
                stack.push((next, acts));
            }
        }
        out
    }

    #[test]
    fn flag_race_reachable_with_two_action_path() {
        let text = "program P domain 2\n\
                    thread a regs x init a0 begin\n a0: mem[0] <- 1; goto a1;\nend\n\
                    thread b regs y init b0 begin\n b0: y <- mem[0]; goto b1;\nend";
        let p = ExecProgram::compile(&parse_program(text).unwrap());
        let result = sc_reachable(&p, |_, s| s.mem[0] == 1, 1000);
        let path = match result {
            Reachability::Reachable { computation, .. } => computation.actions,
            other => panic!("unexpected {other:?}"),
        };
        // Cross-check against the brute-force enumeration: the shortest
        // action sequence establishing mem[0] == 1 has two actions.
        let shortest = brute_force_sc(&p, 6)
            .into_iter()
            .filter(|acts| {
                let mut mem0 = 0;
                for a in acts {
                    if let ActionKind::Store { addr: 0, val } = a.kind {
                        mem0 = val;
                    }
                }
                mem0 == 1
            })
            .map(|a| a.len())
            .min()
            .unwrap();
        assert_eq!(shortest, 2);
        assert_eq!(path.len(), 2);
    }

    #[test]
    fn enumeration_yields_empty_computation_and_delayed_store_run() {
        let p = dekker();
        let bounds = TsoBounds { max_buffer: 1, max_length: 12 };
        let comps = enumerate_tso_computations(&p, bounds);
        assert!(comps.iter().any(|c| c.actions.is_empty()));
        // The run where t1's store overtakes its load (both threads read 0).
        let delayed = vec![
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
            Action::new(1, ActionKind::Issue),
            Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
            Action::new(1, ActionKind::Load { addr: 0, val: 0 }),
            Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
        ];
        assert!(comps.iter().any(|c| c.actions == delayed));
    }

    #[test]
    fn single_thread_sc_order_is_enumerated() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: mem[1] <- 1; goto l2;\n l2: mem[0] <- 0; goto l3;\nend";
        let p = ExecProgram::compile(&parse_program(text).unwrap());
        let bounds = complete_bounds(&p).unwrap();
        assert_eq!(bounds.max_buffer, 3);
        let comps = enumerate_tso_computations(&p, bounds);
        let sc_order = vec![
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Store { addr: 1, val: 1 }),
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Store { addr: 0, val: 0 }),
        ];
        assert!(comps.iter().any(|c| c.actions == sc_order));
    }

    #[test]
    fn sc_computations_embed_into_tso_enumeration() {
        let p = dekker();
        // All complete SC action sequences (both threads run to the end).
        let mut sc_runs = Vec::new();
        let mut stack = vec![(initial_sc(&p), Vec::<Action>::new())];
        while let Some((s, acts)) = stack.pop() {
            let succs = sc_step(&p, &s);
            if succs.is_empty() {
                sc_runs.push(acts);
                continue;
            }
            for (a, next) in succs {
                let mut acts = acts.clone();
                acts.extend_from_slice(&a);
                stack.push((next, acts));
            }
        }
        let tso = enumerate_tso_computations(
            &p,
            TsoBounds { max_buffer: 1, max_length: 16 },
        );
        for run in sc_runs {
            assert!(
                tso.iter().any(|c| c.actions == run),
                "SC run missing from TSO enumeration: {run:?}"
            );
        }
    }

    #[test]
    fn per_thread_store_actions_flush_in_issue_order() {
        let text = "program P domain 4\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: mem[1] <- 2; goto l2;\n l2: mem[2] <- 3; goto l3;\nend\n\
                    thread u regs s init m0 begin\n m0: s <- mem[0]; goto m1;\nend";
        let p = ExecProgram::compile(&parse_program(text).unwrap());
        let bounds = complete_bounds(&p).unwrap();
        for_each_tso_computation(&p, bounds, &mut |actions| {
            // Thread 0 issues (0,1), (1,2), (2,3) in program order, so its
            // store actions must dequeue in exactly that order, and the i-th
            // store must come after the i-th issue.
            let issues: Vec<usize> = actions
                .iter()
                .enumerate()
                .filter(|(_, a)| a.thread == 0 && a.is_issue())
                .map(|(i, _)| i)
                .collect();
            let stores: Vec<(usize, u32, u32)> = actions
                .iter()
                .enumerate()
                .filter_map(|(i, a)| match a.kind {
                    ActionKind::Store { addr, val } if a.thread == 0 => Some((i, addr, val)),
                    _ => None,
                })
                .collect();
            let expected = [(0u32, 1u32), (1, 2), (2, 3)];
            for (i, &(pos, addr, val)) in stores.iter().enumerate() {
                assert_eq!((addr, val), expected[i]);
                assert!(pos > issues[i]);
            }
            true
        });
    }

    #[test]
    fn replay_attributes_flushes_to_issuing_instruction() {
        let p = dekker();
        let comp = vec![
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
            Action::new(1, ActionKind::Issue),
            Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
            Action::new(1, ActionKind::Load { addr: 0, val: 0 }),
            Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
        ];
        let (steps, end) = replay_computation(&p, &comp).unwrap();
        assert!(end.buffers_empty());
        assert_eq!(steps.len(), 6);
        assert_eq!(
            steps[5].kind,
            ReplayStepKind::Flush { issuing_inst: 0 }
        );
        assert_eq!(steps[1].kind, ReplayStepKind::Instruction { inst: 1 });
    }

    #[test]
    fn replay_rejects_illegal_computation() {
        let p = dekker();
        let bogus = vec![Action::new(0, ActionKind::Load { addr: 1, val: 1 })];
        assert!(replay_computation(&p, &bogus).is_err());
    }

    #[test]
    fn sc_search_agrees_with_full_enumeration() {
        // Reachable-state sets from BFS and from a plain DFS must agree.
        let p = ExecProgram::compile(&parse_program(crate::corpus::PETERSON).unwrap());
        let mut dfs_states = std::collections::HashSet::new();
        let mut stack = vec![initial_sc(&p)];
        dfs_states.insert(pack(&initial_sc(&p)));
        while let Some(s) = stack.pop() {
            for (_, next) in sc_step(&p, &s) {
                if dfs_states.insert(pack(&next)) {
                    stack.push(next);
                }
            }
        }
        let bfs = sc_search(&p, |_, _| false, u64::MAX);
        assert_eq!(bfs.states, dfs_states.len() as u64);
    }
}
