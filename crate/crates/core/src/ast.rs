//! Program syntax: AST, validation, control-flow utilities and fence insertion.
//!
//! Programs are finite sets of threads over a finite data domain `{0..N-1}`.
//! Every domain value doubles as a memory address. Control flow is explicit:
//! each instruction carries a source and a destination label, and several
//! instructions may share the same source label (that is how branching and
//! loops are expressed).

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A control-flow label, scoped to its owning thread.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Label(pub String);

impl Label {
    pub fn new(s: impl Into<String>) -> Self {
        Label(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for Label {
    fn from(s: &str) -> Self {
        Label(s.to_string())
    }
}

/// Binary operators of the expression language.
///
/// Arithmetic wraps modulo the domain size of the enclosing program;
/// comparisons and logic yield `1` or `0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    /// Remainder. `x % 0` is defined as `x` so that evaluation stays total.
    Mod,
    Eq,
    Ne,
    Lt,
    Le,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Mod => "%",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

/// Expressions over constants and registers.
///
/// `Mem` reads a memory cell inside an expression. Source programs normally
/// do not need it; the instrumentation emits it for guard conditions and it
/// is accepted by the parser so that instrumented programs round-trip.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Expr {
    Const(u64),
    Reg(String),
    Not(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Mem(Box<Expr>),
}

impl Expr {
    pub fn constant(c: u64) -> Self {
        Expr::Const(c)
    }

    pub fn reg(name: impl Into<String>) -> Self {
        Expr::Reg(name.into())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn mem(addr: Expr) -> Self {
        Expr::Mem(Box::new(addr))
    }

    /// All register names mentioned in the expression.
    pub fn registers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Reg(r) => out.push(r),
            Expr::Not(e) | Expr::Mem(e) => e.registers(out),
            Expr::Bin(_, a, b) => {
                a.registers(out);
                b.registers(out);
            }
        }
    }

    /// Largest constant appearing in the expression, if any.
    pub fn max_constant(&self) -> Option<u64> {
        match self {
            Expr::Const(c) => Some(*c),
            Expr::Reg(_) => None,
            Expr::Not(e) | Expr::Mem(e) => e.max_constant(),
            Expr::Bin(_, a, b) => match (a.max_constant(), b.max_constant()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, None) => x,
                (None, y) => y,
            },
        }
    }

    pub fn reads_memory(&self) -> bool {
        match self {
            Expr::Const(_) | Expr::Reg(_) => false,
            Expr::Mem(_) => true,
            Expr::Not(e) => e.reads_memory(),
            Expr::Bin(_, a, b) => a.reads_memory() || b.reads_memory(),
        }
    }
}

/// A single instruction body.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    /// `r <- mem[addr]`
    Load { reg: String, addr: Expr },
    /// `mem[addr] <- value`
    Store { addr: Expr, value: Expr },
    /// Flushes are forced before execution; only enabled on an empty buffer.
    Mfence,
    /// `r <- expr`
    Assign { reg: String, expr: Expr },
    /// Blocks unless the condition evaluates to a non-zero value.
    Assert { cond: Expr },
    /// `cas mem[addr], expect, new -> result`: locked compare-and-set.
    /// Only enabled on an empty buffer; writes `new` and sets `result` to 1
    /// when the cell holds `expect`, otherwise just sets `result` to 0.
    Cas {
        addr: Expr,
        expect: Expr,
        new: Expr,
        result: String,
    },
}

impl Instruction {
    pub fn is_store(&self) -> bool {
        matches!(self, Instruction::Store { .. })
    }

    pub fn is_load(&self) -> bool {
        matches!(self, Instruction::Load { .. })
    }

    /// True for instructions that forbid a store to stay buffered across them.
    pub fn blocks_delay(&self) -> bool {
        matches!(self, Instruction::Mfence | Instruction::Cas { .. })
    }

    pub fn registers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Instruction::Load { reg, addr } => {
                out.push(reg);
                addr.registers(out);
            }
            Instruction::Store { addr, value } => {
                addr.registers(out);
                value.registers(out);
            }
            Instruction::Mfence => {}
            Instruction::Assign { reg, expr } => {
                out.push(reg);
                expr.registers(out);
            }
            Instruction::Assert { cond } => cond.registers(out),
            Instruction::Cas {
                addr,
                expect,
                new,
                result,
            } => {
                addr.registers(out);
                expect.registers(out);
                new.registers(out);
                out.push(result);
            }
        }
    }

    pub fn max_constant(&self) -> Option<u64> {
        let exprs: Vec<&Expr> = match self {
            Instruction::Load { addr, .. } => vec![addr],
            Instruction::Store { addr, value } => vec![addr, value],
            Instruction::Mfence => vec![],
            Instruction::Assign { expr, .. } => vec![expr],
            Instruction::Assert { cond } => vec![cond],
            Instruction::Cas {
                addr, expect, new, ..
            } => vec![addr, expect, new],
        };
        exprs.iter().filter_map(|e| e.max_constant()).max()
    }
}

/// An instruction together with its source and destination labels:
/// `src: inst; goto dst;`
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledInstruction {
    pub src: Label,
    pub inst: Instruction,
    pub dst: Label,
}

impl LabeledInstruction {
    pub fn new(src: impl Into<Label>, inst: Instruction, dst: impl Into<Label>) -> Self {
        LabeledInstruction {
            src: src.into(),
            inst,
            dst: dst.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Thread {
    pub id: String,
    pub registers: Vec<String>,
    pub init: Label,
    pub instructions: Vec<LabeledInstruction>,
}

impl Thread {
    /// All labels occurring in the thread (init, sources and goto targets).
    /// Goto targets without instructions are terminal labels: reaching one
    /// halts the thread.
    pub fn labels(&self) -> BTreeSet<Label> {
        let mut set = BTreeSet::new();
        set.insert(self.init.clone());
        for li in &self.instructions {
            set.insert(li.src.clone());
            set.insert(li.dst.clone());
        }
        set
    }

    pub fn has_label(&self, l: &Label) -> bool {
        self.init == *l || self.instructions.iter().any(|li| li.src == *l || li.dst == *l)
    }

    pub fn instructions_at<'a>(
        &'a self,
        l: &'a Label,
    ) -> impl Iterator<Item = (usize, &'a LabeledInstruction)> + 'a {
        self.instructions
            .iter()
            .enumerate()
            .filter(move |(_, li)| li.src == *l)
    }
}

/// A parallel program over the data domain `{0..domain_size-1}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Program {
    pub name: String,
    /// Size of the data domain; every value is also a valid address.
    pub domain_size: u64,
    /// Set on instrumented programs: the domain size of the program the
    /// instrumentation was derived from. Enables the `d(..)`/`hb(..)` address
    /// sugar in the text format.
    pub base_domain: Option<u64>,
    pub threads: Vec<Thread>,
}

impl Program {
    pub fn new(name: impl Into<String>, domain_size: u64) -> Self {
        Program {
            name: name.into(),
            domain_size,
            base_domain: None,
            threads: Vec::new(),
        }
    }

    pub fn thread(&self, id: &str) -> Option<&Thread> {
        self.threads.iter().find(|t| t.id == id)
    }

    pub fn thread_index(&self, id: &str) -> Option<usize> {
        self.threads.iter().position(|t| t.id == id)
    }

    pub fn instruction_count(&self) -> usize {
        self.threads.iter().map(|t| t.instructions.len()).sum()
    }

    pub fn label_count(&self) -> usize {
        self.threads.iter().map(|t| t.labels().len()).sum()
    }

    /// Structural well-formedness; see `ValidationError` for the rules.
    pub fn validate(&self) -> Result<(), ValidationError> {
        if self.domain_size == 0 {
            return Err(ValidationError::EmptyDomain);
        }
        if self.domain_size > u32::MAX as u64 {
            return Err(ValidationError::DomainTooLarge(self.domain_size));
        }
        let mut ids = HashSet::new();
        for t in &self.threads {
            if !ids.insert(t.id.as_str()) {
                return Err(ValidationError::DuplicateThread(t.id.clone()));
            }
            let mut regs = HashSet::new();
            for r in &t.registers {
                if !regs.insert(r.as_str()) {
                    return Err(ValidationError::DuplicateRegister {
                        thread: t.id.clone(),
                        reg: r.clone(),
                    });
                }
            }
            for li in &t.instructions {
                let mut used = Vec::new();
                li.inst.registers(&mut used);
                for r in used {
                    if !regs.contains(r) {
                        return Err(ValidationError::UndeclaredRegister {
                            thread: t.id.clone(),
                            reg: r.to_string(),
                         });
                    }
                }
                if let Some(c) = li.inst.max_constant() {
                    if c >= self.domain_size {
                        return Err(ValidationError::ConstantOutsideDomain {
                            thread: t.id.clone(),
                            value: c,
                            domain: self.domain_size,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ValidationError {
    #[error("domain size must be positive")]
    EmptyDomain,
    #[error("domain size {0} too large")]
    DomainTooLarge(u64),
    #[error("duplicate thread id `{0}`")]
    DuplicateThread(String),
    #[error("thread `{thread}`: duplicate register `{reg}`")]
    DuplicateRegister { thread: String, reg: String },
    #[error("thread `{thread}`: register `{reg}` is not declared")]
    UndeclaredRegister { thread: String, reg: String },
    #[error("thread `{thread}`: constant {value} outside the data domain of size {domain}")]
    ConstantOutsideDomain { thread: String, value: u64, domain: u64 },
}

/// A label of a specific thread, as used in fence sets and cost files.
/// Displayed as `thread.label`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ThreadLabel {
    pub thread: String,
    pub label: Label,
}

impl ThreadLabel {
    pub fn new(thread: impl Into<String>, label: impl Into<Label>) -> Self {
        ThreadLabel {
            thread: thread.into(),
            label: label.into(),
        }
    }
}

impl fmt::Display for ThreadLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.thread, self.label)
    }
}

/// A set of fence positions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FenceSet {
    pub labels: BTreeSet<ThreadLabel>,
}

impl FenceSet {
    pub fn new() -> Self {
        FenceSet::default()
    }

    pub fn from_iter(iter: impl IntoIterator<Item = ThreadLabel>) -> Self {
        FenceSet {
            labels: iter.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }
}

impl fmt::Display for FenceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, tl) in self.labels.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{tl}")?;
        }
        write!(f, "}}")
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FenceError {
    #[error("thread `{0}` not present in program")]
    UnknownThread(String),
    #[error("label `{label}` not present in thread `{thread}`")]
    UnknownLabel { thread: String, label: Label },
}

/// Picks a label of the form `<base>_f`, `<base>_f2`, ... not yet in `taken`.
fn fresh_fence_label(taken: &BTreeSet<Label>, base: &Label) -> Label {
    let candidate = Label(format!("{}_f", base.0));
    if !taken.contains(&candidate) {
        return candidate;
    }
    for k in 2.. {
        let candidate = Label(format!("{}_f{}", base.0, k));
        if !taken.contains(&candidate) {
            return candidate;
        }
    }
    unreachable!()
}

/// Inserts a memory fence at every position in `fences`.
///
/// Inserting a fence at label `l` relabels every instruction `l: inst; goto l'`
/// to `l_f: inst; goto l'` and adds `l: mfence; goto l_f`, so the fence
/// executes before any of the instructions previously at `l`.
pub fn insert_fences(program: &Program, fences: &FenceSet) -> Result<Program, FenceError> {
    insert_fences_mapped(program, fences).map(|(p, _)| p)
}

/// Like `insert_fences`, and also returns, per thread, where each original
/// instruction ended up (`mapping[thread][old_index] == new_index`).
pub fn insert_fences_mapped(
    program: &Program,
    fences: &FenceSet,
) -> Result<(Program, Vec<Vec<usize>>), FenceError> {
    let mut out = program.clone();
    let mut mapping: Vec<Vec<usize>> = program
        .threads
        .iter()
        .map(|t| (0..t.instructions.len()).collect())
        .collect();
    for tl in &fences.labels {
        let ti = out
            .threads
            .iter()
            .position(|t| t.id == tl.thread)
            .ok_or_else(|| FenceError::UnknownThread(tl.thread.clone()))?;
        let thread = &mut out.threads[ti];
        if !thread.has_label(&tl.label) {
            return Err(FenceError::UnknownLabel {
                thread: tl.thread.clone(),
                label: tl.label.clone(),
            });
        }
        let taken = thread.labels();
        let fresh = fresh_fence_label(&taken, &tl.label);
        let mut insert_at = thread.instructions.len();
        for (i, li) in thread.instructions.iter_mut().enumerate() {
            if li.src == tl.label {
                li.src = fresh.clone();
                if i < insert_at {
                    insert_at = i;
                }
            }
        }
        thread.instructions.insert(
            insert_at,
            LabeledInstruction {
                src: tl.label.clone(),
                inst: Instruction::Mfence,
                dst: fresh,
            },
        );
        for new_index in &mut mapping[ti] {
            if *new_index >= insert_at {
                *new_index += 1;
            }
        }
    }
    Ok((out, mapping))
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("label `{label}` not present in thread `{thread}`")]
pub struct UnknownLabel {
    pub thread: String,
    pub label: Label,
}

/// Result of a control-flow query between two labels of one thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControlPaths {
    /// All simple (acyclic) label paths from `from` to `to`, as label
    /// sequences including both endpoints.
    pub simple_paths: Vec<Vec<Label>>,
    /// Labels lying on some (possibly cyclic) path from `from` to `to`.
    pub involved: BTreeSet<Label>,
}

/// Forward-reachable labels from `from` along instruction edges that pass
/// `edge_ok`.
pub fn reachable_labels(
    thread: &Thread,
    from: &Label,
    edge_ok: impl Fn(&Instruction) -> bool,
) -> BTreeSet<Label> {
    let mut seen = BTreeSet::new();
    let mut stack = vec![from.clone()];
    seen.insert(from.clone());
    while let Some(l) = stack.pop() {
        for (_, li) in thread.instructions_at(&l) {
            if edge_ok(&li.inst) && seen.insert(li.dst.clone()) {
                stack.push(li.dst.clone());
            }
        }
    }
    seen
}

fn backward_reachable_labels(thread: &Thread, to: &Label) -> BTreeSet<Label> {
    let mut preds: HashMap<&Label, Vec<&Label>> = HashMap::new();
    for li in &thread.instructions {
        preds.entry(&li.dst).or_default().push(&li.src);
    }
    let mut seen = BTreeSet::new();
    let mut stack = vec![to];
    seen.insert(to.clone());
    while let Some(l) = stack.pop() {
        if let Some(ps) = preds.get(l) {
            for p in ps {
                if seen.insert((*p).clone()) {
                    stack.push(p);
                }
            }
        }
    }
    seen
}

/// Computes all simple control-flow paths from `from` to `to` in `thread`,
/// together with the set of labels on any (possibly cyclic) path between
/// them. `from == to` is connected by the empty path.
pub fn control_paths(
    thread: &Thread,
    from: &Label,
    to: &Label,
) -> Result<ControlPaths, UnknownLabel> {
    for l in [from, to] {
        if !thread.has_label(l) {
            return Err(UnknownLabel {
                thread: thread.id.clone(),
                label: l.clone(),
            });
        }
    }

    let forward = reachable_labels(thread, from, |_| true);
    let backward = backward_reachable_labels(thread, to);
    let involved: BTreeSet<Label> = forward.intersection(&backward).cloned().collect();

    let mut paths = Vec::new();
    let mut current = vec![from.clone()];
    let mut on_path: HashSet<Label> = HashSet::new();
    on_path.insert(from.clone());
    simple_path_dfs(thread, from, to, &mut current, &mut on_path, &mut paths);
    Ok(ControlPaths {
        simple_paths: paths,
        involved,
    })
}

fn simple_path_dfs(
    thread: &Thread,
    at: &Label,
    to: &Label,
    current: &mut Vec<Label>,
    on_path: &mut HashSet<Label>,
    out: &mut Vec<Vec<Label>>,
) {
    if at == to {
        out.push(current.clone());
        // The empty path ends here, but longer paths may loop back to `to`
        // only through a repeated label, which simple paths exclude.
    }
    let nexts: Vec<Label> = thread
        .instructions_at(at)
        .map(|(_, li)| li.dst.clone())
        .collect();
    for next in nexts {
        if on_path.contains(&next) {
            continue;
        }
        on_path.insert(next.clone());
        current.push(next.clone());
        simple_path_dfs(thread, &next, to, current, on_path, out);
        current.pop();
        on_path.remove(&next);
    }
}

/// Canonicalizes a program up to label names: labels are renamed, per thread,
/// to `L0, L1, ...` in order of first occurrence (init, then source/target in
/// instruction order). Used to compare programs modulo fresh-label naming.
pub fn canonicalize_labels(program: &Program) -> Program {
    let mut out = program.clone();
    for t in &mut out.threads {
        let mut map: HashMap<Label, Label> = HashMap::new();
        let mut next = 0usize;
        let rename = |l: &Label, map: &mut HashMap<Label, Label>, next: &mut usize| -> Label {
            map.entry(l.clone())
                .or_insert_with(|| {
                    let fresh = Label(format!("L{}", *next));
                    *next += 1;
                    fresh
                })
                .clone()
        };
        let init = rename(&t.init, &mut map, &mut next);
        t.init = init;
        for li in &mut t.instructions {
            li.src = rename(&li.src, &mut map, &mut next);
            li.dst = rename(&li.dst, &mut map, &mut next);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    pub(crate) fn dekker() -> Program {
        parse_program(crate::corpus::DEKKER).unwrap()
    }

    #[test]
    fn fence_insertion_relabels_and_adds_fence() {
        let p = dekker();
        let f = FenceSet::from_iter([ThreadLabel::new("t1", "l1")]);
        let q = insert_fences(&p, &f).unwrap();
        let t1 = q.thread("t1").unwrap();
        assert_eq!(t1.instructions.len(), 3);
        // The store is untouched, the fence sits at l1, the load moved to l1_f.
        assert_eq!(t1.instructions[0].src, Label::new("l0"));
        let fence = &t1.instructions[1];
        assert_eq!(fence.src, Label::new("l1"));
        assert_eq!(fence.inst, Instruction::Mfence);
        assert_eq!(fence.dst, Label::new("l1_f"));
        let load = &t1.instructions[2];
        assert_eq!(load.src, Label::new("l1_f"));
        assert!(load.inst.is_load());
        assert_eq!(load.dst, Label::new("l2"));
        // Other thread unchanged.
        assert_eq!(q.thread("t2").unwrap(), p.thread("t2").unwrap());
    }

    #[test]
    fn fence_insertion_empty_set_is_identity() {
        let p = dekker();
        let q = insert_fences(&p, &FenceSet::new()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn fence_insertion_instruction_count_grows_by_set_size() {
        let p = dekker();
        let f = FenceSet::from_iter([
            ThreadLabel::new("t1", "l0"),
            ThreadLabel::new("t1", "l1"),
            ThreadLabel::new("t2", "l1'"),
        ]);
        let q = insert_fences(&p, &f).unwrap();
        assert_eq!(q.instruction_count(), p.instruction_count() + f.len());
    }

    #[test]
    fn fence_insertion_shared_source_label() {
        // Two instructions share src `l1`; both must be relabeled and exactly
        // one fence added.
        let text = "program P domain 2\n\
                    thread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n\
                    l1: r <- mem[0]; goto l2;\n\
                    l1: r <- mem[1]; goto l2;\n\
                    end\n";
        let p = parse_program(text).unwrap();
        let f = FenceSet::from_iter([ThreadLabel::new("t", "l1")]);
        let q = insert_fences(&p, &f).unwrap();
        let t = q.thread("t").unwrap();
        let expected = parse_program(
            "program P domain 2\n\
             thread t regs r init l0 begin\n\
             l0: mem[0] <- 1; goto l1;\n\
             l1: mfence; goto l1_f;\n\
             l1_f: r <- mem[0]; goto l2;\n\
             l1_f: r <- mem[1]; goto l2;\n\
             end\n",
        )
        .unwrap();
        assert_eq!(t, expected.thread("t").unwrap());
        let fences: Vec<_> = t
            .instructions
            .iter()
            .filter(|li| li.inst == Instruction::Mfence)
            .collect();
        assert_eq!(fences.len(), 1);
    }

    #[test]
    fn fence_insertion_unknown_label_errors() {
        let p = dekker();
        let f = FenceSet::from_iter([ThreadLabel::new("t1", "nope")]);
        assert!(matches!(
            insert_fences(&p, &f),
            Err(FenceError::UnknownLabel { .. })
        ));
    }

    #[test]
    fn fence_insertion_commutes_on_disjoint_sets() {
        let p = dekker();
        let a = FenceSet::from_iter([ThreadLabel::new("t1", "l1")]);
        let b = FenceSet::from_iter([ThreadLabel::new("t2", "l1'")]);
        let pq = insert_fences(&insert_fences(&p, &a).unwrap(), &b).unwrap();
        let qp = insert_fences(&insert_fences(&p, &b).unwrap(), &a).unwrap();
        assert_eq!(canonicalize_labels(&pq), canonicalize_labels(&qp));
    }

    #[test]
    fn control_paths_dekker_attack_window() {
        let p = dekker();
        let t1 = p.thread("t1").unwrap();
        // Destination of the store is l1, source of the load is l1.
        let cp = control_paths(t1, &Label::new("l1"), &Label::new("l1")).unwrap();
        let involved: Vec<_> = cp.involved.iter().map(|l| l.as_str()).collect();
        assert_eq!(involved, ["l1"]);
        assert_eq!(cp.simple_paths, vec![vec![Label::new("l1")]]);
    }

    #[test]
    fn control_paths_unreachable_target() {
        let p = dekker();
        let t1 = p.thread("t1").unwrap();
        let cp = control_paths(t1, &Label::new("l2"), &Label::new("l0")).unwrap();
        assert!(cp.simple_paths.is_empty());
        assert!(cp.involved.is_empty());
    }

    #[test]
    fn control_paths_unknown_label() {
        let p = dekker();
        let t1 = p.thread("t1").unwrap();
        assert!(control_paths(t1, &Label::new("zz"), &Label::new("l0")).is_err());
    }

    #[test]
    fn validation_catches_undeclared_register() {
        let mut p = dekker();
        p.threads[0].instructions[1].inst = Instruction::Load {
            reg: "r9".into(),
            addr: Expr::Const(0),
        };
        assert!(matches!(
            p.validate(),
            Err(ValidationError::UndeclaredRegister { .. })
        ));
    }

    #[test]
    fn validation_catches_constant_outside_domain() {
        let mut p = dekker();
        p.threads[0].instructions[0].inst = Instruction::Store {
            addr: Expr::Const(0),
            value: Expr::Const(7),
        };
        assert!(matches!(
            p.validate(),
            Err(ValidationError::ConstantOutsideDomain { value: 7, .. })
        ));
    }
}
