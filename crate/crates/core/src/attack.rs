//! Attacks: a thread together with a store instruction and a program-order
//! later load that the store could be delayed past. Robustness fails exactly
//! when some attack has a witness computation, so the checker enumerates
//! attacks, discards the syntactically impossible ones and queries the rest.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::ast::{control_paths, reachable_labels, Label, Program};
use crate::exec::ExecProgram;
use crate::semantics::{
    count_delays, replay_computation, Action, ActionKind, Computation, ReplayError,
    ReplayStep, ReplayStepKind,
};
use crate::trace::{hb_reachable, trace_of};

/// An attack: `attacker` delays the store at `store_inst` past the load at
/// `load_inst` (instruction indices within the attacker thread).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Attack {
    pub attacker: usize,
    pub store_inst: usize,
    pub load_inst: usize,
}

impl Attack {
    pub fn attacker_id<'a>(&self, p: &'a Program) -> &'a str {
        &p.threads[self.attacker].id
    }

    pub fn store_label<'a>(&self, p: &'a Program) -> &'a Label {
        &p.threads[self.attacker].instructions[self.store_inst].src
    }

    pub fn load_label<'a>(&self, p: &'a Program) -> &'a Label {
        &p.threads[self.attacker].instructions[self.load_inst].src
    }

    pub fn describe(&self, p: &Program) -> String {
        format!(
            "({}, store@{}, load@{})",
            self.attacker_id(p),
            self.store_label(p),
            self.load_label(p)
        )
    }
}

/// All attacks of a program: per thread, every (store, load) instruction
/// pair, in thread then instruction order.
pub fn enumerate_attacks(p: &Program) -> Vec<Attack> {
    let mut out = Vec::new();
    for (ti, t) in p.threads.iter().enumerate() {
        let stores: Vec<usize> = t
            .instructions
            .iter()
            .enumerate()
            .filter(|(_, li)| li.inst.is_store())
            .map(|(i, _)| i)
            .collect();
        let loads: Vec<usize> = t
            .instructions
            .iter()
            .enumerate()
            .filter(|(_, li)| li.inst.is_load())
            .map(|(i, _)| i)
            .collect();
        for &s in &stores {
            for &l in &loads {
                out.push(Attack {
                    attacker: ti,
                    store_inst: s,
                    load_inst: l,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    /// The load's source label cannot be reached from the store's
    /// destination label at all.
    LoadUnreachable,
    /// Every control path from store to load passes a fence or a locked
    /// instruction, which forces the buffer empty.
    FenceOnAllPaths,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::LoadUnreachable => f.write_str("load unreachable from store"),
            DropReason::FenceOnAllPaths => f.write_str("fence or locked instruction on all paths"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

/// Syntactic attack filter: the store can only be delayed past the load if
/// the load is control-flow reachable from the store without crossing a
/// fence or locked instruction.
pub fn syntactic_filter(p: &Program, a: &Attack) -> FilterDecision {
    let t = &p.threads[a.attacker];
    let from = &t.instructions[a.store_inst].dst;
    let to = &t.instructions[a.load_inst].src;
    let reach_all = reachable_labels(t, from, |_| true);
    if !reach_all.contains(to) {
        return FilterDecision::Drop(DropReason::LoadUnreachable);
    }
    let reach_free = reachable_labels(t, from, |inst| !inst.blocks_delay());
    if !reach_free.contains(to) {
        return FilterDecision::Drop(DropReason::FenceOnAllPaths);
    }
    FilterDecision::Keep
}

/// Labels on some control path from the store's destination to the load's
/// source — the candidate fence positions against this attack.
pub fn involved_labels(p: &Program, a: &Attack) -> BTreeSet<Label> {
    let t = &p.threads[a.attacker];
    let from = &t.instructions[a.store_inst].dst;
    let to = &t.instructions[a.load_inst].src;
    control_paths(t, from, to)
        .expect("attack labels belong to the thread")
        .involved
}

/// A computation that witnesses an attack, with the decomposition points:
/// the issue of the delayed store, the overstepped load, and the store's
/// flush.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TsoWitness {
    pub computation: Computation,
    pub isu_index: usize,
    pub ld_index: usize,
    pub st_index: usize,
}

/// The witness conditions, in checking order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WitnessCondition {
    /// Some thread other than the attacker delays a store.
    OnlyAttackerDelays,
    /// The decomposition does not match the attack: wrong instructions,
    /// wrong ordering, the store is not the first delayed one, the load is
    /// not the last overstepped attacker action, or the middle fragment
    /// contains attacker fences or flushes.
    AttackShape,
    /// Some action after the load up to the delayed store is not
    /// happens-before reachable from the load.
    HbPathFromLoad,
    /// The tail after the delayed store contains something other than the
    /// attacker's remaining delayed stores issued before the load.
    TailOnlyDelayedStores,
    /// A delayed store targets the load's address (the load would have read
    /// it early).
    NoEarlyReadOfDelayed,
}

impl WitnessCondition {
    pub fn name(&self) -> &'static str {
        match self {
            WitnessCondition::OnlyAttackerDelays => "w-a",
            WitnessCondition::AttackShape => "w-b",
            WitnessCondition::HbPathFromLoad => "w-c",
            WitnessCondition::TailOnlyDelayedStores => "w-d",
            WitnessCondition::NoEarlyReadOfDelayed => "w-e",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WitnessVerdict {
    Valid,
    Invalid(WitnessCondition),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WitnessError {
    #[error("decomposition index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("not a legal computation of the program: {0}")]
    IllegalComputation(#[from] ReplayError),
    #[error("computation ends with buffered stores")]
    BuffersNotEmpty,
}

/// FIFO-matches each store action to its issue. Returns, for every action
/// index, the matching partner index (issue -> store, store -> issue).
fn match_issue_store(actions: &[Action], num_threads: usize) -> Vec<Option<usize>> {
    let mut partner = vec![None; actions.len()];
    let mut pending: Vec<Vec<usize>> = vec![Vec::new(); num_threads];
    for (i, a) in actions.iter().enumerate() {
        match a.kind {
            ActionKind::Issue => pending[a.thread as usize].push(i),
            ActionKind::Store { .. } => {
                if !pending[a.thread as usize].is_empty() {
                    let isu = pending[a.thread as usize].remove(0);
                    partner[isu] = Some(i);
                    partner[i] = Some(isu);
                }
            }
            _ => {}
        }
    }
    partner
}

fn instruction_of_action(steps: &[ReplayStep], index: usize) -> Option<&ReplayStep> {
    steps
        .iter()
        .find(|s| index >= s.first_action && index < s.first_action + s.action_count)
}

/// Checks a decomposed computation against the witness conditions for an
/// attack. The computation must be a legal TSO computation of the program.
pub fn validate_witness(
    p: &Program,
    a: &Attack,
    w: &TsoWitness,
) -> Result<WitnessVerdict, WitnessError> {
    let xp = ExecProgram::compile(p);
    validate_witness_compiled(p, &xp, a, w)
}

pub fn validate_witness_compiled(
    p: &Program,
    xp: &ExecProgram,
    a: &Attack,
    w: &TsoWitness,
) -> Result<WitnessVerdict, WitnessError> {
    use WitnessCondition::*;
    let actions = &w.computation.actions;
    let len = actions.len();
    for index in [w.isu_index, w.ld_index, w.st_index] {
        if index >= len {
            return Err(WitnessError::IndexOutOfRange { index, len });
        }
    }
    let (steps, end) = replay_computation(xp, actions)?;
    if !end.buffers_empty() {
        return Err(WitnessError::BuffersNotEmpty);
    }

    let att = a.attacker as u32;
    let delays = count_delays(p.threads.len(), actions);
    // w-a: only the attacker delays stores.
    for (t, &d) in delays.per_thread.iter().enumerate() {
        if t != a.attacker && d > 0 {
            return Ok(WitnessVerdict::Invalid(OnlyAttackerDelays));
        }
    }

    // w-b: decomposition shape.
    if !(w.isu_index < w.ld_index && w.ld_index < w.st_index) {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    let partner = match_issue_store(actions, p.threads.len());
    let isu_act = actions[w.isu_index];
    let ld_act = actions[w.ld_index];
    let st_act = actions[w.st_index];
    if isu_act.thread != att || !isu_act.is_issue() {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    if st_act.thread != att || !st_act.is_store() || partner[w.isu_index] != Some(w.st_index) {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    if ld_act.thread != att || !matches!(ld_act.kind, ActionKind::Load { .. }) {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    // The issue and the load come from the attack's instructions.
    let isu_step = instruction_of_action(&steps, w.isu_index).expect("replayed");
    let ld_step = instruction_of_action(&steps, w.ld_index).expect("replayed");
    let expected_store = ReplayStepKind::Instruction {
        inst: a.store_inst as u32,
    };
    let expected_load = ReplayStepKind::Instruction {
        inst: a.load_inst as u32,
    };
    if isu_step.kind != expected_store || ld_step.kind != expected_load {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    // The delayed store is the first one delayed: every earlier attacker
    // pair completes with no same-thread action in between.
    for (i, act) in actions[..w.isu_index].iter().enumerate() {
        if act.thread == att && act.is_issue() {
            match partner[i] {
                Some(st) => {
                    let between = actions[i + 1..st]
                        .iter()
                        .filter(|x| x.thread == att)
                        .count();
                    if between > 0 {
                        return Ok(WitnessVerdict::Invalid(AttackShape));
                    }
                }
                None => return Ok(WitnessVerdict::Invalid(AttackShape)),
            }
        }
    }
    // The load is the last attacker action overstepped by the store.
    if actions[w.ld_index + 1..w.st_index]
        .iter()
        .any(|x| x.thread == att)
    {
        return Ok(WitnessVerdict::Invalid(AttackShape));
    }
    // Between issue and load the attacker neither fences nor flushes.
    for (i, act) in actions.iter().enumerate().take(w.ld_index).skip(w.isu_index + 1) {
        if act.thread != att {
            continue;
        }
        if act.is_store() {
            return Ok(WitnessVerdict::Invalid(AttackShape));
        }
        if let Some(step) = instruction_of_action(&steps, i) {
            if let ReplayStepKind::Instruction { inst } = step.kind {
                if p.threads[a.attacker].instructions[inst as usize]
                    .inst
                    .blocks_delay()
                {
                    return Ok(WitnessVerdict::Invalid(AttackShape));
                }
            }
        }
    }

    // w-c: everything from the load to the delayed store is happens-before
    // reachable from the load (issue+store pairs count once, via their
    // shared trace node).
    let tr = trace_of(&w.computation).expect("legal computation");
    let ld_node = tr.node_of_action[w.ld_index];
    let reach = hb_reachable(&tr, ld_node);
    for idx in w.ld_index + 1..=w.st_index {
        let node = tr.node_of_action[idx] as usize;
        if !reach[node] {
            return Ok(WitnessVerdict::Invalid(HbPathFromLoad));
        }
    }

    // w-d: the tail consists solely of the attacker's remaining delayed
    // stores, issued before the load.
    for (i, act) in actions.iter().enumerate().skip(w.st_index + 1) {
        let ok = act.thread == att
            && act.is_store()
            && matches!(partner[i], Some(isu) if isu < w.ld_index);
        if !ok {
            return Ok(WitnessVerdict::Invalid(TailOnlyDelayedStores));
        }
    }

    // w-e: no delayed store targets the load's address.
    let ld_addr = ld_act.addr().expect("load action");
    for act in &actions[w.st_index..] {
        if act.thread == att && act.is_store() && act.addr() == Some(ld_addr) {
            return Ok(WitnessVerdict::Invalid(NoEarlyReadOfDelayed));
        }
    }

    Ok(WitnessVerdict::Valid)
}

/// The attack instantiated by a violating computation: the thread of the
/// first delayed store, that store's instruction, and the last load it
/// overstepped. `None` when no store is delayed past a load.
pub fn attribute_violation(xp: &ExecProgram, c: &Computation) -> Option<Attack> {
    let (steps, _) = replay_computation(xp, &c.actions).ok()?;
    let actions = &c.actions;
    let partner = match_issue_store(actions, xp.threads.len());
    // First flush whose issue has a same-thread action strictly in between.
    let mut first: Option<(usize, usize)> = None; // (isu, st)
    for (i, a) in actions.iter().enumerate() {
        if a.is_issue() {
            if let Some(st) = partner[i] {
                let delayed = actions[i + 1..st].iter().any(|x| x.thread == a.thread);
                if delayed && first.map_or(true, |(_, s)| st < s) {
                    first = Some((i, st));
                }
            }
        }
    }
    let (isu, st) = first?;
    let thread = actions[isu].thread;
    let store_inst = match instruction_of_action(&steps, isu)?.kind {
        ReplayStepKind::Instruction { inst } => inst as usize,
        ReplayStepKind::Flush { .. } => return None,
    };
    // Last overstepped load of the same thread.
    let (ld_index, _) = actions[isu + 1..st]
        .iter()
        .enumerate()
        .map(|(k, a)| (isu + 1 + k, a))
        .filter(|(_, a)| a.thread == thread && matches!(a.kind, ActionKind::Load { .. }))
        .last()?;
    let load_inst = match instruction_of_action(&steps, ld_index)?.kind {
        ReplayStepKind::Instruction { inst } => inst as usize,
        ReplayStepKind::Flush { .. } => return None,
    };
    Some(Attack {
        attacker: thread as usize,
        store_inst,
        load_inst,
    })
}

/// Rewrites a decomposed violating computation into witness shape: actions
/// after the load that are not happens-before reachable from it commute, one
/// by one, to just before the load. Commuting is trace-preserving because
/// the first unreachable action is independent of everything between the
/// load and itself. Atomic action groups (SC-style store pairs, locked
/// operations) move as units.
pub fn normalize_witness(
    xp: &ExecProgram,
    mut w: TsoWitness,
) -> Result<TsoWitness, WitnessError> {
    loop {
        let (steps, _) = replay_computation(xp, &w.computation.actions)?;
        let tr = trace_of(&w.computation).expect("legal computation");
        let ld_node = tr.node_of_action[w.ld_index];
        let reach = hb_reachable(&tr, ld_node);
        let mut moved = false;
        for idx in w.ld_index + 1..w.st_index {
            if reach[tr.node_of_action[idx] as usize] {
                continue;
            }
            // Move the whole replay step containing idx.
            let step = *instruction_of_action(&steps, idx).expect("replayed");
            let (from, count) = (step.first_action, step.action_count);
            let group: Vec<Action> = w.computation.actions[from..from + count].to_vec();
            w.computation.actions.drain(from..from + count);
            for (k, act) in group.into_iter().enumerate() {
                w.computation.actions.insert(w.ld_index + k, act);
            }
            w.ld_index += count;
            // isu_index and st_index count the same actions before them.
            moved = true;
            break;
        }
        if !moved {
            return Ok(w);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::semantics::CompKind;

    fn dekker() -> Program {
        parse_program(crate::corpus::DEKKER).unwrap()
    }

    fn fig_witness() -> TsoWitness {
        TsoWitness {
            computation: Computation {
                kind: CompKind::Tso,
                actions: vec![
                    Action::new(0, ActionKind::Issue),
                    Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
                    Action::new(1, ActionKind::Issue),
                    Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
                    Action::new(1, ActionKind::Load { addr: 0, val: 0 }),
                    Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
                ],
            },
            isu_index: 0,
            ld_index: 1,
            st_index: 5,
        }
    }

    #[test]
    fn dekker_has_exactly_two_attacks() {
        let p = dekker();
        let attacks = enumerate_attacks(&p);
        assert_eq!(attacks.len(), 2);
        assert_eq!(attacks[0].describe(&p), "(t1, store@l0, load@l1)");
        assert_eq!(attacks[1].describe(&p), "(t2, store@l0', load@l1')");
    }

    #[test]
    fn no_stores_no_attacks() {
        let p = parse_program(
            "program P domain 2\nthread t regs r init l0 begin\n l0: r <- mem[0]; goto l1;\nend",
        )
        .unwrap();
        assert!(enumerate_attacks(&p).is_empty());
    }

    #[test]
    fn attack_count_is_store_times_load() {
        let p = parse_program(
            "program P domain 2\nthread t regs r init l0 begin\n\
             l0: mem[0] <- 1; goto l1;\n l1: mem[1] <- 1; goto l2;\n\
             l2: r <- mem[0]; goto l3;\n l3: r <- mem[1]; goto l4;\n l4: r <- mem[0]; goto l5;\nend",
        )
        .unwrap();
        assert_eq!(enumerate_attacks(&p).len(), 6);
    }

    #[test]
    fn dekker_attacks_kept_fenced_attacks_dropped() {
        let p = dekker();
        for a in enumerate_attacks(&p) {
            assert!(syntactic_filter(&p, &a).is_keep());
        }
        let fenced = parse_program(crate::corpus::DEKKER_FENCED).unwrap();
        for a in enumerate_attacks(&fenced) {
            assert_eq!(
                syntactic_filter(&fenced, &a),
                FilterDecision::Drop(DropReason::FenceOnAllPaths)
            );
        }
    }

    #[test]
    fn unreachable_load_dropped() {
        // The load precedes the store with no way back.
        let p = parse_program(
            "program P domain 2\nthread t regs r init l0 begin\n\
             l0: r <- mem[1]; goto l1;\n l1: mem[0] <- 1; goto l2;\nend",
        )
        .unwrap();
        let a = enumerate_attacks(&p)[0];
        assert_eq!(
            syntactic_filter(&p, &a),
            FilterDecision::Drop(DropReason::LoadUnreachable)
        );
    }

    #[test]
    fn involved_labels_dekker_and_degenerate() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let labels = involved_labels(&p, &a);
        assert_eq!(
            labels.iter().map(|l| l.as_str()).collect::<Vec<_>>(),
            ["l1"]
        );
    }

    #[test]
    fn involved_labels_diamond() {
        let p = parse_program(
            "program P domain 2\nthread t regs r init l0 begin\n\
             l0: mem[0] <- 1; goto l1;\n\
             l1: r <- 0; goto l2;\n\
             l1: r <- 1; goto l3;\n\
             l2: r <- 0; goto l4;\n\
             l3: r <- 0; goto l4;\n\
             l4: r <- mem[1]; goto l5;\nend",
        )
        .unwrap();
        let a = enumerate_attacks(&p)[0];
        let involved = involved_labels(&p, &a);
        let labels: Vec<&str> = involved.iter().map(|l| l.as_str()).collect();
        assert_eq!(labels, ["l1", "l2", "l3", "l4"]);
    }

    #[test]
    fn fig_witness_is_valid() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let w = fig_witness();
        assert_eq!(validate_witness(&p, &a, &w).unwrap(), WitnessVerdict::Valid);
    }

    #[test]
    fn undelayed_reordering_violates_shape() {
        // Store flushed directly after its issue: no delay remains.
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let w = TsoWitness {
            computation: Computation {
                kind: CompKind::Tso,
                actions: vec![
                    Action::new(0, ActionKind::Issue),
                    Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
                    Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
                    Action::new(1, ActionKind::Issue),
                    Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
                    Action::new(1, ActionKind::Load { addr: 0, val: 1 }),
                ],
            },
            isu_index: 0,
            ld_index: 2,
            st_index: 1,
        };
        assert_eq!(
            validate_witness(&p, &a, &w).unwrap(),
            WitnessVerdict::Invalid(WitnessCondition::AttackShape)
        );
    }

    #[test]
    fn unrelated_helper_action_violates_hb_path() {
        // A third thread stores to a fresh address inside the middle
        // fragment; that action has no happens-before path from the load.
        let text = "program P domain 3\n\
                    thread t1 regs r1 init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: r1 <- mem[1]; goto l2;\nend\n\
                    thread t2 regs r2 init m0 begin\n\
                    m0: mem[1] <- 1; goto m1;\n m1: r2 <- mem[0]; goto m2;\nend\n\
                    thread t3 regs r3 init k0 begin\n\
                    k0: mem[2] <- 1; goto k1;\nend";
        let p = parse_program(text).unwrap();
        let a = enumerate_attacks(&p)[0];
        let w = TsoWitness {
            computation: Computation {
                kind: CompKind::Tso,
                actions: vec![
                    Action::new(0, ActionKind::Issue),
                    Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
                    Action::new(1, ActionKind::Issue),
                    Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
                    Action::new(2, ActionKind::Issue),
                    Action::new(2, ActionKind::Store { addr: 2, val: 1 }),
                    Action::new(1, ActionKind::Load { addr: 0, val: 0 }),
                    Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
                ],
            },
            isu_index: 0,
            ld_index: 1,
            st_index: 7,
        };
        assert_eq!(
            validate_witness(&p, &a, &w).unwrap(),
            WitnessVerdict::Invalid(WitnessCondition::HbPathFromLoad)
        );
        // Normalization moves the unrelated store before the load and the
        // witness becomes valid.
        let xp = ExecProgram::compile(&p);
        let normalized = normalize_witness(&xp, w).unwrap();
        assert_eq!(normalized.ld_index, 3);
        assert_eq!(
            validate_witness(&p, &a, &normalized).unwrap(),
            WitnessVerdict::Valid
        );
    }

    #[test]
    fn out_of_range_indices_error() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let mut w = fig_witness();
        w.st_index = 99;
        assert!(matches!(
            validate_witness(&p, &a, &w),
            Err(WitnessError::IndexOutOfRange { .. })
        ));
    }

    #[test]
    fn attribution_identifies_dekker_attack() {
        let p = dekker();
        let xp = ExecProgram::compile(&p);
        let w = fig_witness();
        let attributed = attribute_violation(&xp, &w.computation).unwrap();
        assert_eq!(attributed, enumerate_attacks(&p)[0]);
    }
}
