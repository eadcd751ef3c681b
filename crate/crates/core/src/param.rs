//! Robustness for thread-replicated programs.
//!
//! A program is read as a family of templates, each instantiable any number
//! of times. Robustness of the whole family reduces, per attack, to
//! coverability in a Petri net: threads never use their identity, so the
//! abstraction only counts how many replicas of a template sit at each
//! (label, register valuation), while one token per address tracks memory.

use std::collections::{BTreeMap, HashMap};

use thiserror::Error;

use crate::ast::Program;
use crate::attack::{enumerate_attacks, syntactic_filter, Attack, DropReason, FilterDecision};
use crate::checker::Verdict;
use crate::exec::{eval, CExpr, ExecInstKind, ExecProgram};
use crate::instrument::{instrument_parameterized, InstrumentedProgram};
use crate::pool::map_parallel;

/// A place/transition net with weighted arcs.
#[derive(Debug, Clone)]
pub struct PetriNet {
    pub place_names: Vec<String>,
    pub transitions: Vec<Transition>,
    /// Families of places whose total token count is invariantly at most
    /// one (every transition preserves the family sum and the initial
    /// marking puts at most one token in it). The backward search discards
    /// requirement markings that ask for more, since nothing reachable
    /// dominates them.
    pub one_token_families: Vec<Vec<u32>>,
}

/// Arcs of one transition: `consume` tokens required and removed,
/// `produce` tokens added. A place in both lists is a read arc.
#[derive(Debug, Clone)]
pub struct Transition {
    pub name: String,
    pub consume: Vec<(u32, u32)>,
    pub produce: Vec<(u32, u32)>,
}

/// Sparse marking: places absent from the map hold zero tokens.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Marking(pub BTreeMap<u32, u32>);

impl Marking {
    pub fn get(&self, p: u32) -> u32 {
        self.0.get(&p).copied().unwrap_or(0)
    }

    pub fn set(&mut self, p: u32, n: u32) {
        if n == 0 {
            self.0.remove(&p);
        } else {
            self.0.insert(p, n);
        }
    }

    /// Pointwise order: `self <= other` everywhere.
    pub fn dominated_by(&self, other: &Marking) -> bool {
        self.0.iter().all(|(&p, &n)| other.get(p) >= n)
    }

    pub fn token_count(&self) -> u64 {
        self.0.values().map(|&n| n as u64).sum()
    }
}

impl PetriNet {
    pub fn place_count(&self) -> usize {
        self.place_names.len()
    }

    /// Checks that a family's token sum is preserved by every transition.
    fn family_is_invariant(&self, family: &[u32]) -> bool {
        let sum = |arcs: &[(u32, u32)]| -> i64 {
            arcs.iter()
                .filter(|(p, _)| family.contains(p))
                .map(|&(_, w)| w as i64)
                .sum()
        };
        self.transitions
            .iter()
            .all(|t| sum(&t.consume) == sum(&t.produce))
    }

    /// Plain text dump: places with nonzero initial marking, then one line
    /// per transition.
    pub fn to_text(&self, initial: &Marking) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        for (&p, &n) in &initial.0 {
            let _ = writeln!(out, "place {} tokens {}", self.place_names[p as usize], n);
        }
        for t in &self.transitions {
            let side = |arcs: &[(u32, u32)]| {
                arcs.iter()
                    .map(|&(p, w)| {
                        if w == 1 {
                            self.place_names[p as usize].clone()
                        } else {
                            format!("{}x{}", w, self.place_names[p as usize])
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            };
            let _ = writeln!(
                out,
                "transition {}: {} -> {}",
                t.name,
                side(&t.consume),
                side(&t.produce)
            );
        }
        out
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AbstractionError {
    #[error("thread {thread} instruction {inst}: nested memory reads are not supported")]
    NestedMemRead { thread: usize, inst: usize },
}

/// The counter abstraction of a program: a Petri net whose markings count
/// template replicas per control state and hold one token per memory cell.
#[derive(Debug, Clone)]
pub struct CounterAbstraction {
    pub net: PetriNet,
    pub initial: Marking,
    domain: u32,
    /// Place-id base of each template's control places.
    template_base: Vec<u32>,
    /// Register count per template.
    reg_counts: Vec<usize>,
}

impl CounterAbstraction {
    /// `p_{a,v}`: the place holding a token while address `a` stores `v`.
    pub fn memory_place(&self, addr: u32, val: u32) -> u32 {
        addr * self.domain + val
    }

    /// Control place of a template replica at `label` with registers `rho`.
    pub fn control_place(&self, template: usize, label: u32, rho: &[u32]) -> u32 {
        let m = self.domain as u64;
        let mut idx = 0u64;
        for &v in rho.iter().rev() {
            idx = idx * m + v as u64;
        }
        let vals = m.pow(self.reg_counts[template] as u32);
        self.template_base[template] + (label as u64 * vals + idx) as u32
    }

    /// Marking requiring `val` at memory address `addr`.
    pub fn cell_marking(&self, addr: u32, val: u32) -> Marking {
        let mut m = Marking::default();
        m.set(self.memory_place(addr, val), 1);
        m
    }
}

/// Possible-value sets for every address and register: a cheap fixpoint
/// over-approximating which values can ever occur. The abstraction only
/// materializes transitions over these sets; a transition needing an
/// impossible token can never fire and cannot affect coverability.
#[derive(Debug, Clone)]
pub struct ValueSets {
    /// Per address: values the cell can hold (always contains 0).
    pub mem: Vec<Vec<u32>>,
    /// Per thread, per register: values it can hold (always contains 0).
    pub regs: Vec<Vec<Vec<u32>>>,
}

impl ValueSets {
    fn insert(set: &mut Vec<u32>, v: u32) -> bool {
        if set.contains(&v) {
            false
        } else {
            set.push(v);
            true
        }
    }
}

/// Fixpoint of the possible-value sets over all instructions. Every update
/// evaluates under a concrete register valuation and a consistent
/// per-address value assignment, so repeated reads of one cell agree.
pub fn value_analysis(xp: &ExecProgram) -> ValueSets {
    let m = xp.domain;
    let mut sets = ValueSets {
        mem: vec![vec![0]; m as usize],
        regs: xp
            .threads
            .iter()
            .map(|t| vec![vec![0]; t.reg_names.len()])
            .collect(),
    };
    let full: Vec<u32> = (0..m as u32).collect();
    loop {
        let mut changed = false;
        for (ti, t) in xp.threads.iter().enumerate() {
            for rho in valuations(&sets.regs[ti].clone()) {
                for inst in &t.insts {
                    let mut step = |sets: &mut ValueSets| -> Result<bool, ()> {
                        let mut grew = false;
                        match &inst.kind {
                            ExecInstKind::Load { reg, addr } => {
                                let mut reads = Vec::new();
                                mem_read_addrs(addr, &rho, m, &mut reads)?;
                                for asg in assignments(&reads, &sets.mem.clone()) {
                                    let a = eval_with(addr, &rho, &asg, m);
                                    for v in sets.mem[a as usize].clone() {
                                        grew |=
                                            ValueSets::insert(&mut sets.regs[ti][*reg], v);
                                    }
                                }
                            }
                            ExecInstKind::Store { addr, value } => {
                                let mut reads = Vec::new();
                                mem_read_addrs(addr, &rho, m, &mut reads)?;
                                mem_read_addrs(value, &rho, m, &mut reads)?;
                                for asg in assignments(&reads, &sets.mem.clone()) {
                                    let a = eval_with(addr, &rho, &asg, m);
                                    let v = eval_with(value, &rho, &asg, m);
                                    grew |= ValueSets::insert(&mut sets.mem[a as usize], v);
                                }
                            }
                            ExecInstKind::Assign { reg, expr } => {
                                let mut reads = Vec::new();
                                mem_read_addrs(expr, &rho, m, &mut reads)?;
                                for asg in assignments(&reads, &sets.mem.clone()) {
                                    let v = eval_with(expr, &rho, &asg, m);
                                    grew |= ValueSets::insert(&mut sets.regs[ti][*reg], v);
                                }
                            }
                            ExecInstKind::Cas {
                                addr,
                                expect,
                                new,
                                result,
                            } => {
                                grew |= ValueSets::insert(&mut sets.regs[ti][*result], 0);
                                grew |= ValueSets::insert(&mut sets.regs[ti][*result], 1);
                                let mut reads = Vec::new();
                                mem_read_addrs(addr, &rho, m, &mut reads)?;
                                mem_read_addrs(expect, &rho, m, &mut reads)?;
                                mem_read_addrs(new, &rho, m, &mut reads)?;
                                for asg in assignments(&reads, &sets.mem.clone()) {
                                    let a = eval_with(addr, &rho, &asg, m);
                                    let exp = eval_with(expect, &rho, &asg, m);
                                    let nv = eval_with(new, &rho, &asg, m);
                                    if sets.mem[a as usize].contains(&exp) {
                                        grew |=
                                            ValueSets::insert(&mut sets.mem[a as usize], nv);
                                    }
                                }
                            }
                            ExecInstKind::Mfence | ExecInstKind::Assert { .. } => {}
                        }
                        Ok(grew)
                    };
                    match step(&mut sets) {
                        Ok(grew) => changed |= grew,
                        Err(()) => {
                            // Nested memory reads: give up on precision for
                            // everything this instruction might touch.
                            for s in &mut sets.mem {
                                *s = full.clone();
                            }
                            changed = true;
                        }
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    for s in &mut sets.mem {
        s.sort_unstable();
    }
    for t in &mut sets.regs {
        for s in t {
            s.sort_unstable();
        }
    }
    sets
}

/// Memory addresses read by an expression (its `mem[..]` nodes). Address
/// subexpressions must themselves be memory-free.
fn mem_read_addrs(
    e: &CExpr,
    rho: &[u32],
    m: u64,
    out: &mut Vec<u32>,
) -> Result<(), ()> {
    match e {
        CExpr::Const(_) | CExpr::Reg(_) => Ok(()),
        CExpr::Not(x) => mem_read_addrs(x, rho, m, out),
        CExpr::Bin(_, a, b) => {
            mem_read_addrs(a, rho, m, out)?;
            mem_read_addrs(b, rho, m, out)
        }
        CExpr::Mem(a) => {
            if expr_reads_memory(a) {
                return Err(());
            }
            let addr = eval(a, rho, &mut |_| unreachable!("memory-free"), m);
            if !out.contains(&addr) {
                out.push(addr);
            }
            Ok(())
        }
    }
}

fn expr_reads_memory(e: &CExpr) -> bool {
    match e {
        CExpr::Const(_) | CExpr::Reg(_) => false,
        CExpr::Not(x) => expr_reads_memory(x),
        CExpr::Bin(_, a, b) => expr_reads_memory(a) || expr_reads_memory(b),
        CExpr::Mem(_) => true,
    }
}

fn eval_with(e: &CExpr, rho: &[u32], memvals: &BTreeMap<u32, u32>, m: u64) -> u32 {
    eval(
        e,
        rho,
        &mut |a| *memvals.get(&a).expect("read address enumerated"),
        m,
    )
}

/// Enumerates register valuations over the possible-value sets.
fn valuations(reg_sets: &[Vec<u32>]) -> Vec<Vec<u32>> {
    let mut out = vec![vec![]];
    for set in reg_sets {
        let mut next = Vec::with_capacity(out.len() * set.len());
        for v in &out {
            for &x in set {
                let mut v = v.clone();
                v.push(x);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

/// Enumerates value assignments for a set of read addresses over the
/// possible-value sets.
fn assignments(addrs: &[u32], mem_sets: &[Vec<u32>]) -> Vec<BTreeMap<u32, u32>> {
    let mut out = vec![BTreeMap::new()];
    for &a in addrs {
        let set = &mem_sets[a as usize];
        let mut next = Vec::with_capacity(out.len() * set.len());
        for asg in &out {
            for &v in set {
                let mut asg = asg.clone();
                asg.insert(a, v);
                next.push(asg);
            }
        }
        out = next;
    }
    out
}

/// Builds the counter abstraction. Every template gets a spawn transition
/// feeding replicas into its initial state; every instruction becomes one
/// transition per (register valuation, read-value combination). The initial
/// marking puts value zero at every address and no replicas anywhere.
pub fn counter_abstraction(p: &Program) -> Result<CounterAbstraction, AbstractionError> {
    let xp = ExecProgram::compile(p);
    let domain = p.domain_size as u32;
    let m = p.domain_size;
    let values = value_analysis(&xp);

    let mut place_names: Vec<String> = Vec::new();
    for a in 0..domain {
        for v in 0..domain {
            place_names.push(format!("mem_{a}_{v}"));
        }
    }
    let mut template_base = Vec::with_capacity(xp.threads.len());
    let mut reg_counts = Vec::with_capacity(xp.threads.len());
    for t in &xp.threads {
        template_base.push(place_names.len() as u32);
        reg_counts.push(t.reg_names.len());
        let vals = valuations(&vec![(0..domain).collect::<Vec<u32>>(); t.reg_names.len()]);
        for l in 0..t.labels.len() {
            for rho in &vals {
                let rho_s = rho
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("_");
                place_names.push(format!("{}_{}_{}", t.id, t.labels[l], rho_s));
            }
        }
    }

    let abs_shell = CounterAbstraction {
        net: PetriNet {
            place_names: Vec::new(),
            transitions: Vec::new(),
            one_token_families: Vec::new(),
        },
        initial: Marking::default(),
        domain,
        template_base,
        reg_counts,
    };

    let mut transitions: Vec<Transition> = Vec::new();
    for (ti, t) in xp.threads.iter().enumerate() {
        // Spawning puts a fresh replica at the initial label with zeroed
        // registers.
        let init_place = abs_shell.control_place(ti, t.init, &vec![0; t.reg_names.len()]);
        transitions.push(Transition {
            name: format!("{}:spawn", t.id),
            consume: vec![],
            produce: vec![(init_place, 1)],
        });

        let vals = valuations(&values.regs[ti]);
        for (ii, inst) in t.insts.iter().enumerate() {
            for rho in &vals {
                build_transitions(
                    &abs_shell,
                    ti,
                    &t.id,
                    ii,
                    inst,
                    rho,
                    m,
                    &values,
                    &mut transitions,
                )
                .map_err(|()| AbstractionError::NestedMemRead {
                    thread: ti,
                    inst: ii,
                })?;
            }
        }
    }

    let mut initial = Marking::default();
    for a in 0..domain {
        initial.set(abs_shell.memory_place(a, 0), 1);
    }

    // Each address holds exactly one token across its value places.
    let one_token_families: Vec<Vec<u32>> = (0..domain)
        .map(|a| (0..domain).map(|v| abs_shell.memory_place(a, v)).collect())
        .collect();
    let net = PetriNet {
        place_names,
        transitions,
        one_token_families,
    };
    debug_assert!(net
        .one_token_families
        .iter()
        .all(|f| net.family_is_invariant(f)));

    Ok(CounterAbstraction {
        net,
        initial,
        ..abs_shell
    })
}

#[allow(clippy::too_many_arguments)]
fn build_transitions(
    abs: &CounterAbstraction,
    ti: usize,
    tid: &str,
    ii: usize,
    inst: &crate::exec::ExecInst,
    rho: &[u32],
    m: u64,
    values: &ValueSets,
    out: &mut Vec<Transition>,
) -> Result<(), ()> {
    let from = abs.control_place(ti, inst.src, rho);
    let name = |suffix: &str| format!("{tid}:i{ii}:{suffix}");
    let rho_s = |rho: &[u32]| {
        rho.iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join("_")
    };

    // Self-loops on every read cell that is not otherwise consumed.
    let read_arcs = |asg: &BTreeMap<u32, u32>, except: Option<u32>| -> Vec<(u32, u32)> {
        asg.iter()
            .filter(|(&a, _)| Some(a) != except)
            .map(|(&a, &v)| (abs.memory_place(a, v), 1))
            .collect()
    };

    match &inst.kind {
        ExecInstKind::Load { reg, addr } => {
            let mut reads = Vec::new();
            mem_read_addrs(addr, rho, m, &mut reads)?;
            for asg in assignments(&reads, &values.mem) {
                let a = eval_with(addr, rho, &asg, m);
                for &v in &values.mem[a as usize] {
                    if let Some(&fixed) = asg.get(&a) {
                        if fixed != v {
                            continue;
                        }
                    }
                    let mut rho2 = rho.to_vec();
                    rho2[*reg] = v;
                    let to = abs.control_place(ti, inst.dst, &rho2);
                    let mut consume = vec![(from, 1), (abs.memory_place(a, v), 1)];
                    let mut produce = vec![(to, 1), (abs.memory_place(a, v), 1)];
                    consume.extend(read_arcs(&asg, Some(a)));
                    produce.extend(read_arcs(&asg, Some(a)));
                    out.push(Transition {
                        name: name(&format!("ld_{}_{a}_{v}", rho_s(rho))),
                        consume,
                        produce,
                    });
                }
            }
        }
        ExecInstKind::Store { addr, value } => {
            let mut reads = Vec::new();
            mem_read_addrs(addr, rho, m, &mut reads)?;
            mem_read_addrs(value, rho, m, &mut reads)?;
            for asg in assignments(&reads, &values.mem) {
                let a = eval_with(addr, rho, &asg, m);
                let v = eval_with(value, rho, &asg, m);
                let to = abs.control_place(ti, inst.dst, rho);
                let olds: Vec<u32> = match asg.get(&a) {
                    Some(&fixed) => vec![fixed],
                    None => values.mem[a as usize].clone(),
                };
                for old in olds {
                    let mut consume = vec![(from, 1), (abs.memory_place(a, old), 1)];
                    let mut produce = vec![(to, 1), (abs.memory_place(a, v), 1)];
                    consume.extend(read_arcs(&asg, Some(a)));
                    produce.extend(read_arcs(&asg, Some(a)));
                    out.push(Transition {
                        name: name(&format!("st_{}_{a}_{old}_{v}", rho_s(rho))),
                        consume,
                        produce,
                    });
                }
            }
        }
        ExecInstKind::Mfence => {
            let to = abs.control_place(ti, inst.dst, rho);
            out.push(Transition {
                name: name(&format!("fence_{}", rho_s(rho))),
                consume: vec![(from, 1)],
                produce: vec![(to, 1)],
            });
        }
        ExecInstKind::Assign { reg, expr } => {
            let mut reads = Vec::new();
            mem_read_addrs(expr, rho, m, &mut reads)?;
            for asg in assignments(&reads, &values.mem) {
                let v = eval_with(expr, rho, &asg, m);
                let mut rho2 = rho.to_vec();
                rho2[*reg] = v;
                let to = abs.control_place(ti, inst.dst, &rho2);
                let mut consume = vec![(from, 1)];
                let mut produce = vec![(to, 1)];
                consume.extend(read_arcs(&asg, None));
                produce.extend(read_arcs(&asg, None));
                out.push(Transition {
                    name: name(&format!("asgn_{}", rho_s(rho))),
                    consume,
                    produce,
                });
            }
        }
        ExecInstKind::Assert { cond } => {
            let mut reads = Vec::new();
            mem_read_addrs(cond, rho, m, &mut reads)?;
            for asg in assignments(&reads, &values.mem) {
                if eval_with(cond, rho, &asg, m) == 0 {
                    continue;
                }
                let to = abs.control_place(ti, inst.dst, rho);
                let mut consume = vec![(from, 1)];
                let mut produce = vec![(to, 1)];
                consume.extend(read_arcs(&asg, None));
                produce.extend(read_arcs(&asg, None));
                out.push(Transition {
                    name: name(&format!("guard_{}", rho_s(rho))),
                    consume,
                    produce,
                });
            }
        }
        ExecInstKind::Cas {
            addr,
            expect,
            new,
            result,
        } => {
            let mut reads = Vec::new();
            mem_read_addrs(addr, rho, m, &mut reads)?;
            mem_read_addrs(expect, rho, m, &mut reads)?;
            mem_read_addrs(new, rho, m, &mut reads)?;
            for asg in assignments(&reads, &values.mem) {
                let a = eval_with(addr, rho, &asg, m);
                let exp = eval_with(expect, rho, &asg, m);
                let nv = eval_with(new, rho, &asg, m);
                // Success: swing the cell token and set the result register.
                let success_ok = values.mem[a as usize].contains(&exp)
                    && asg.get(&a).map_or(true, |&fixed| fixed == exp);
                if success_ok {
                    let mut rho2 = rho.to_vec();
                    rho2[*result] = 1;
                    let to = abs.control_place(ti, inst.dst, &rho2);
                    let mut consume = vec![(from, 1), (abs.memory_place(a, exp), 1)];
                    let mut produce = vec![(to, 1), (abs.memory_place(a, nv), 1)];
                    consume.extend(read_arcs(&asg, Some(a)));
                    produce.extend(read_arcs(&asg, Some(a)));
                    out.push(Transition {
                        name: name(&format!("cas1_{}_{a}", rho_s(rho))),
                        consume,
                        produce,
                    });
                }
                // Failure: read arc on any other value.
                let fail_olds: Vec<u32> = match asg.get(&a) {
                    Some(&fixed) => {
                        if fixed == exp {
                            vec![]
                        } else {
                            vec![fixed]
                        }
                    }
                    None => values.mem[a as usize]
                        .iter()
                        .copied()
                        .filter(|&w| w != exp)
                        .collect(),
                };
                for old in fail_olds {
                    let mut rho2 = rho.to_vec();
                    rho2[*result] = 0;
                    let to = abs.control_place(ti, inst.dst, &rho2);
                    let mut consume = vec![(from, 1), (abs.memory_place(a, old), 1)];
                    let mut produce = vec![(to, 1), (abs.memory_place(a, old), 1)];
                    consume.extend(read_arcs(&asg, Some(a)));
                    produce.extend(read_arcs(&asg, Some(a)));
                    out.push(Transition {
                        name: name(&format!("cas0_{}_{a}_{old}", rho_s(rho))),
                        consume,
                        produce,
                    });
                }
            }
        }
    }
    Ok(())
}

/// Result of a coverability query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Coverability {
    /// Firing this transition sequence from the initial marking reaches a
    /// marking dominating the target.
    Coverable { firing: Vec<String> },
    NotCoverable,
    /// The basis grew past the budget.
    Inconclusive { basis: usize },
}

impl Coverability {
    pub fn is_coverable(&self) -> bool {
        matches!(self, Coverability::Coverable { .. })
    }
}

/// Backward coverability for well-structured nets: saturate the minimal
/// basis of the upward-closed set of markings from which `target` is
/// coverable. Terminates by the well-quasi-ordering of markings; the basis
/// budget bounds memory on pathological inputs.
pub fn coverable(
    net: &PetriNet,
    initial: &Marking,
    target: &Marking,
    basis_budget: usize,
) -> Coverability {
    // Pre-index transitions by produced place: only transitions producing
    // into the support of a marking can lower its requirements.
    let mut by_product: HashMap<u32, Vec<usize>> = HashMap::new();
    for (i, t) in net.transitions.iter().enumerate() {
        for &(p, w) in &t.produce {
            if w > 0 {
                by_product.entry(p).or_default().push(i);
            }
        }
    }
    // Family membership for the one-token pruning.
    let mut family_of: HashMap<u32, usize> = HashMap::new();
    for (fi, family) in net.one_token_families.iter().enumerate() {
        for &p in family {
            family_of.insert(p, fi);
        }
    }
    let violates_invariant = |m: &Marking| -> bool {
        let mut sums: HashMap<usize, u32> = HashMap::new();
        for (&p, &n) in &m.0 {
            if let Some(&fi) = family_of.get(&p) {
                let s = sums.entry(fi).or_insert(0);
                *s += n;
                if *s > 1 {
                    return true;
                }
            }
        }
        false
    };

    struct Elem {
        marking: Marking,
        parent: Option<(usize, usize)>, // (transition, parent element)
        alive: bool,
    }
    let mut elems: Vec<Elem> = Vec::new();
    // Best-first: elements missing the fewest tokens from the initial
    // marking expand first, so coverable targets are found long before the
    // basis saturates. `NotCoverable` still requires full saturation.
    let mut queue: std::collections::BinaryHeap<std::cmp::Reverse<(u64, usize)>> =
        std::collections::BinaryHeap::new();
    let excess = |m: &Marking| -> u64 {
        m.0.iter()
            .map(|(&p, &n)| (n.saturating_sub(initial.get(p))) as u64)
            .sum()
    };

    let build_firing = |elems: &[Elem], mut at: usize| -> Vec<String> {
        let mut firing = Vec::new();
        while let Some((t, parent)) = elems[at].parent {
            firing.push(net.transitions[t].name.clone());
            at = parent;
        }
        firing
    };

    // Requirement markings ever inserted (exact duplicates recur often).
    let mut seen: std::collections::HashSet<Marking> = std::collections::HashSet::new();
    // Alive elements indexed by every place in their support. An element
    // `e <= m` needs `supp(e) ⊆ supp(m)`, so dominance scans only touch the
    // lists of the probe's own support.
    let mut by_place: HashMap<u32, Vec<usize>> = HashMap::new();

    let mut insert_index = |m: &Marking, id: usize, by_place: &mut HashMap<u32, Vec<usize>>| {
        for &p in m.0.keys() {
            by_place.entry(p).or_default().push(id);
        }
    };

    elems.push(Elem {
        marking: target.clone(),
        parent: None,
        alive: true,
    });
    seen.insert(target.clone());
    insert_index(target, 0, &mut by_place);
    queue.push(std::cmp::Reverse((excess(target), 0)));
    if target.dominated_by(initial) {
        return Coverability::Coverable { firing: vec![] };
    }

    while let Some(std::cmp::Reverse((_, at))) = queue.pop() {
        if !elems[at].alive {
            continue;
        }
        let marking = elems[at].marking.clone();
        let mut candidates: Vec<usize> = marking
            .0
            .keys()
            .filter_map(|p| by_product.get(p))
            .flatten()
            .copied()
            .collect();
        candidates.sort_unstable();
        candidates.dedup();
        for t_idx in candidates {
            let t = &net.transitions[t_idx];
            // Weakest precondition of covering `marking` through `t`.
            let mut pre = Marking::default();
            for (&p, &n) in &marking.0 {
                let produced = t
                    .produce
                    .iter()
                    .find(|&&(q, _)| q == p)
                    .map(|&(_, w)| w)
                    .unwrap_or(0);
                let rest = n.saturating_sub(produced);
                if rest > 0 {
                    pre.set(p, rest);
                }
            }
            for &(p, w) in &t.consume {
                let needed = pre.get(p).max(w);
                pre.set(p, needed);
            }
            if violates_invariant(&pre) || seen.contains(&pre) {
                continue;
            }
            // Dominated by an existing element?
            let mut dominated = false;
            let mut dominator_scan: Vec<usize> = pre
                .0
                .keys()
                .filter_map(|p| by_place.get(p))
                .flatten()
                .copied()
                .collect();
            dominator_scan.sort_unstable();
            dominator_scan.dedup();
            for &e in &dominator_scan {
                if elems[e].alive && elems[e].marking.dominated_by(&pre) {
                    dominated = true;
                    break;
                }
            }
            if dominated {
                continue;
            }
            // Kill elements the new one strictly improves on: their support
            // includes all of `pre`'s support, so scanning one list suffices.
            if let Some(shortest) = pre
                .0
                .keys()
                .filter_map(|p| by_place.get(p))
                .min_by_key(|l| l.len())
            {
                for &e in shortest.clone().iter() {
                    if elems[e].alive && pre.dominated_by(&elems[e].marking) {
                        elems[e].alive = false;
                    }
                }
            }
            let id = elems.len();
            let covered = pre.dominated_by(initial);
            let score = excess(&pre);
            seen.insert(pre.clone());
            insert_index(&pre, id, &mut by_place);
            elems.push(Elem {
                marking: pre,
                parent: Some((t_idx, at)),
                alive: true,
            });
            if covered {
                return Coverability::Coverable {
                    firing: build_firing(&elems, id),
                };
            }
            if elems.len() > basis_budget {
                return Coverability::Inconclusive { basis: elems.len() };
            }
            queue.push(std::cmp::Reverse((score, id)));
        }
    }
    Coverability::NotCoverable
}

pub const DEFAULT_BASIS_BUDGET: usize = 100_000;

#[derive(Debug, Clone, Copy)]
pub struct ParamConfig {
    pub workers: usize,
    pub basis_budget: usize,
}

impl Default for ParamConfig {
    fn default() -> Self {
        ParamConfig {
            workers: 1,
            basis_budget: DEFAULT_BASIS_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParamAttackStatus {
    Dropped(DropReason),
    NotCoverable,
    Coverable { firing_len: usize },
    Inconclusive { basis: usize },
}

#[derive(Debug, Clone)]
pub struct ParamAttackResult {
    pub attack: Attack,
    pub status: ParamAttackStatus,
    pub basis_size: usize,
}

#[derive(Debug, Clone)]
pub struct ParamReport {
    pub verdict: Verdict,
    pub attacks: Vec<ParamAttackResult>,
    /// Number of coverability queries actually run (attacks not dropped).
    pub queries: usize,
}

/// Parameterized robustness: some instance of the template family is
/// non-robust iff for some attack the instrumented family can cover the
/// success marking.
pub fn check_param_robustness(p: &Program, cfg: &ParamConfig) -> ParamReport {
    let attacks = enumerate_attacks(p);
    let decisions: Vec<FilterDecision> = attacks.iter().map(|a| syntactic_filter(p, a)).collect();
    let queries: Vec<Attack> = attacks
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.is_keep())
        .map(|(a, _)| *a)
        .collect();
    let outcomes = map_parallel(&queries, cfg.workers, |_, a| {
        let ip = instrument_parameterized(p, a).expect("attack shape");
        let abs = counter_abstraction(&ip.program).expect("no nested memory reads emitted");
        let goal = abs.cell_marking(ip.encoding.success_cell() as u32, 1);
        let result = coverable(&abs.net, &abs.initial, &goal, cfg.basis_budget);
        let basis = match &result {
            Coverability::Inconclusive { basis } => *basis,
            _ => 0,
        };
        (result, basis)
    });

    let mut results = Vec::with_capacity(attacks.len());
    let mut qi = 0usize;
    let mut any_coverable = false;
    let mut any_inconclusive = false;
    for (attack, decision) in attacks.iter().zip(&decisions) {
        let result = match decision {
            FilterDecision::Drop(reason) => ParamAttackResult {
                attack: *attack,
                status: ParamAttackStatus::Dropped(*reason),
                basis_size: 0,
            },
            FilterDecision::Keep => {
                let (cov, basis) = &outcomes[qi];
                qi += 1;
                let status = match cov {
                    Coverability::Coverable { firing } => {
                        any_coverable = true;
                        ParamAttackStatus::Coverable {
                            firing_len: firing.len(),
                        }
                    }
                    Coverability::NotCoverable => ParamAttackStatus::NotCoverable,
                    Coverability::Inconclusive { basis } => {
                        any_inconclusive = true;
                        ParamAttackStatus::Inconclusive { basis: *basis }
                    }
                };
                ParamAttackResult {
                    attack: *attack,
                    status,
                    basis_size: *basis,
                }
            }
        };
        results.push(result);
    }
    let verdict = if any_coverable {
        Verdict::NonRobust
    } else if any_inconclusive {
        Verdict::Inconclusive
    } else {
        Verdict::Robust
    };
    ParamReport {
        verdict,
        attacks: results,
        queries: queries.len(),
    }
}

/// Materializes an instance of a template family: `counts[i]` replicas of
/// template `i`, renamed `id#k`.
pub fn instance(p: &Program, counts: &[usize]) -> Program {
    let mut out = Program::new(format!("{}_instance", p.name), p.domain_size);
    out.base_domain = p.base_domain;
    for (t, &n) in p.threads.iter().zip(counts) {
        for k in 1..=n {
            let mut copy = t.clone();
            copy.id = format!("{}#{k}", t.id);
            out.threads.push(copy);
        }
    }
    out
}

/// Convenience wrapper: parameterized instrumentation of one attack plus
/// the abstraction and goal marking.
pub fn abstraction_for_attack(
    p: &Program,
    a: &Attack,
) -> Result<(InstrumentedProgram, CounterAbstraction, Marking), AbstractionError> {
    let ip = instrument_parameterized(p, a).expect("attack shape");
    let abs = counter_abstraction(&ip.program)?;
    let goal = abs.cell_marking(ip.encoding.success_cell() as u32, 1);
    Ok((ip, abs, goal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_robustness, CheckerConfig};
    use crate::parser::parse_program;

    #[test]
    fn abstraction_counts_for_small_template() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: r <- mem[0]; goto l1;\n l1: mem[1] <- r; goto l2;\nend";
        let p = parse_program(text).unwrap();
        let abs = counter_abstraction(&p).unwrap();
        // 3 labels x 2 register values = 6 control places, 2 memory places
        // per address.
        assert_eq!(abs.net.place_count(), 2 * 2 + 3 * 2);
        let spawns: Vec<_> = abs
            .net
            .transitions
            .iter()
            .filter(|t| t.name.ends_with(":spawn"))
            .collect();
        assert_eq!(spawns.len(), 1);
        assert!(spawns[0].consume.is_empty());
        // Initial marking: value zero everywhere, nothing else.
        assert_eq!(abs.initial.get(abs.memory_place(0, 0)), 1);
        assert_eq!(abs.initial.get(abs.memory_place(1, 0)), 1);
        assert_eq!(abs.initial.token_count(), 2);
        // Load transitions carry a read arc on the loaded cell.
        let ld = abs
            .net
            .transitions
            .iter()
            .find(|t| t.name.contains(":i0:ld"))
            .unwrap();
        let cell = ld
            .consume
            .iter()
            .find(|&&(p, _)| p < 4)
            .expect("memory arc");
        assert!(ld.produce.contains(cell));
    }

    #[test]
    fn target_equal_to_initial_is_trivially_coverable() {
        let p = parse_program(crate::corpus::MESSAGE_PASSING).unwrap();
        let abs = counter_abstraction(&p).unwrap();
        let result = coverable(&abs.net, &abs.initial, &abs.initial, 10_000);
        assert_eq!(result, Coverability::Coverable { firing: vec![] });
    }

    #[test]
    fn spawn_satisfies_replica_count_targets() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: r <- mem[0]; goto l1;\nend";
        let p = parse_program(text).unwrap();
        let abs = counter_abstraction(&p).unwrap();
        let init_place = abs.control_place(0, 0, &[0]);
        let mut target = Marking::default();
        target.set(init_place, 3);
        match coverable(&abs.net, &abs.initial, &target, 10_000) {
            Coverability::Coverable { firing } => {
                assert_eq!(firing.len(), 3);
                assert!(firing.iter().all(|f| f.ends_with(":spawn")));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn coverability_is_monotone_in_the_target() {
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let a = enumerate_attacks(&p)[0];
        let (_, abs, goal) = abstraction_for_attack(&p, &a).unwrap();
        assert!(coverable(&abs.net, &abs.initial, &goal, 100_000).is_coverable());
        // The empty marking is below the goal and must also be coverable.
        let empty = Marking::default();
        assert!(coverable(&abs.net, &abs.initial, &empty, 100_000).is_coverable());
    }

    #[test]
    fn parameterized_dekker_is_non_robust_and_matches_instance_check() {
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let report = check_param_robustness(&p, &ParamConfig::default());
        assert_eq!(report.verdict, Verdict::NonRobust);
        // Instance (1,1) agrees.
        let inst = instance(&p, &[1, 1]);
        let instance_report = check_robustness(&inst, &CheckerConfig::default());
        assert_eq!(instance_report.verdict, Verdict::NonRobust);
    }

    #[test]
    fn parameterized_fenced_dekker_is_robust_without_queries() {
        let p = parse_program(crate::corpus::DEKKER_FENCED).unwrap();
        let report = check_param_robustness(&p, &ParamConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
        assert_eq!(report.queries, 0);
    }

    #[test]
    fn store_only_template_is_robust() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: mem[1] <- 1; goto l2;\nend";
        let p = parse_program(text).unwrap();
        let report = check_param_robustness(&p, &ParamConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
        assert!(report.attacks.is_empty());
    }

    #[test]
    fn zero_attacker_instance_cannot_reach_goal() {
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument_parameterized(&p, &a).unwrap();
        let inst = instance(&ip.program, &[0, 1]);
        let xp = crate::exec::ExecProgram::compile(&inst);
        let cell = ip.encoding.success_cell() as usize;
        let result = crate::semantics::sc_reachable(&xp, |_, s| s.mem[cell] == 1, 1_000_000);
        assert!(matches!(
            result,
            crate::semantics::Reachability::NotReachable { .. }
        ));
    }

    #[test]
    fn single_instance_of_template_instrumentation_matches_plain_instrumentation() {
        // Goal reachability of the elected (1,1) instance agrees with the
        // plain instrumentation of the same attack.
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        for a in enumerate_attacks(&p) {
            let plain = crate::instrument::instrument(&p, &a).unwrap();
            let xp_plain = crate::exec::ExecProgram::compile(&plain.program);
            let plain_cell = plain.encoding.success_cell() as usize;
            let plain_reach = matches!(
                crate::semantics::sc_reachable(&xp_plain, |_, s| s.mem[plain_cell] == 1, 1_000_000),
                crate::semantics::Reachability::Reachable { .. }
            );

            let param = instrument_parameterized(&p, &a).unwrap();
            let inst = instance(&param.program, &[1, 1]);
            let xp_param = crate::exec::ExecProgram::compile(&inst);
            let param_cell = param.encoding.success_cell() as usize;
            let param_reach = matches!(
                crate::semantics::sc_reachable(&xp_param, |_, s| s.mem[param_cell] == 1, 1_000_000),
                crate::semantics::Reachability::Reachable { .. }
            );
            assert_eq!(plain_reach, param_reach, "{}", a.describe(&p));
        }
    }

    #[test]
    fn instance_goal_reachability_implies_coverability() {
        // Abstraction soundness at small scale: if a concrete instance
        // reaches the goal, the abstraction covers the goal marking.
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let a = enumerate_attacks(&p)[0];
        let (ip, abs, goal) = abstraction_for_attack(&p, &a).unwrap();
        for counts in [[1, 1], [2, 1], [1, 2]] {
            let inst = instance(&ip.program, &counts);
            let xp = crate::exec::ExecProgram::compile(&inst);
            let cell = ip.encoding.success_cell() as usize;
            let reached = matches!(
                crate::semantics::sc_reachable(&xp, |_, s| s.mem[cell] == 1, 2_000_000),
                crate::semantics::Reachability::Reachable { .. }
            );
            if reached {
                assert!(coverable(&abs.net, &abs.initial, &goal, 100_000).is_coverable());
            }
        }
    }

    #[test]
    fn net_dump_mentions_places_and_transitions() {
        let p = parse_program(crate::corpus::MESSAGE_PASSING).unwrap();
        let abs = counter_abstraction(&p).unwrap();
        let text = abs.net.to_text(&abs.initial);
        assert!(text.contains("place mem_0_0 tokens 1"));
        assert!(text.contains("transition producer:spawn"));
    }
}
