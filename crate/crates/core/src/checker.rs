//! The robustness decision procedure: one SC reachability query per attack,
//! witness reconstruction from reachability paths, and the aggregated
//! program verdict.

use std::time::Instant;

use crate::ast::Program;
use crate::attack::{
    enumerate_attacks, normalize_witness, syntactic_filter, validate_witness_compiled, Attack,
    DropReason, FilterDecision, TsoWitness, WitnessVerdict,
};
use crate::exec::ExecProgram;
use crate::instrument::{instrument, InstrumentedProgram, Role};
use crate::pool::map_parallel;
use crate::semantics::{
    initial_tso, tso_exec_inst, tso_flush_one, Action, CompKind, Computation, PathStep,
    ScSearchOutcome, TsoState,
};

pub const DEFAULT_STATE_BUDGET: u64 = 10_000_000;

#[derive(Debug, Clone, Copy)]
pub struct CheckerConfig {
    pub workers: usize,
    pub state_budget: u64,
}

impl Default for CheckerConfig {
    fn default() -> Self {
        CheckerConfig {
            workers: 1,
            state_budget: DEFAULT_STATE_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AttackStatus {
    /// Discarded syntactically; no reachability query was needed.
    Dropped(DropReason),
    /// The instrumented program exhausts its state space without reaching
    /// the goal: no witness exists.
    Infeasible,
    /// A witness computation, reconstructed from the reachability path.
    Feasible(Box<TsoWitness>),
    /// The state budget ran out before an answer; never treated as robust.
    Inconclusive { budget: u64 },
}

#[derive(Debug, Clone)]
pub struct AttackResult {
    pub attack: Attack,
    pub status: AttackStatus,
    pub states_explored: u64,
    pub millis: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Robust,
    NonRobust,
    Inconclusive,
}

/// Query counts: total, syntactically discarded, search-refuted,
/// search-confirmed. `rq = nr1 + nr2 + r` unless queries were inconclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Totals {
    pub rq: u64,
    pub nr1: u64,
    pub nr2: u64,
    pub r: u64,
    pub inconclusive: u64,
}

#[derive(Debug, Clone)]
pub struct RobustnessReport {
    pub verdict: Verdict,
    pub attacks: Vec<AttackResult>,
    pub totals: Totals,
}

impl RobustnessReport {
    pub fn feasible(&self) -> impl Iterator<Item = (&Attack, &TsoWitness)> {
        self.attacks.iter().filter_map(|r| match &r.status {
            AttackStatus::Feasible(w) => Some((&r.attack, w.as_ref())),
            _ => None,
        })
    }
}

/// Runs the reachability query for one attack and reconstructs a witness on
/// success. The attack must have survived the syntactic filter.
pub fn check_attack(p: &Program, a: &Attack, state_budget: u64) -> (AttackStatus, u64) {
    let ip = instrument(p, a).expect("attack references a store and a load");
    let xp_inst = ExecProgram::compile(&ip.program);
    let cell = ip.encoding.success_cell() as usize;
    let result = crate::semantics::sc_search(&xp_inst, |_, s| s.mem[cell] == 1, state_budget);
    let states = result.states;
    match result.outcome {
        ScSearchOutcome::Reached { path } => {
            let xp_orig = ExecProgram::compile(p);
            let witness = reconstruct_witness(p, &xp_orig, &ip, &path);
            (AttackStatus::Feasible(Box::new(witness)), states)
        }
        ScSearchOutcome::Exhausted => (AttackStatus::Infeasible, states),
        ScSearchOutcome::BudgetExceeded => (
            AttackStatus::Inconclusive {
                budget: state_budget,
            },
            states,
        ),
    }
}

/// Replay plan derived from an instrumented reachability path.
enum PlanStep {
    /// Execute the original instruction; stores publish immediately.
    Exec { thread: usize, inst: u32 },
    /// Execute a store instruction but leave it buffered (a delayed store).
    IssueOnly { thread: usize, inst: u32, is_attack_store: bool },
    /// The attack load itself.
    AttackLoad { thread: usize, inst: u32 },
}

/// Turns the SC path through the instrumented program back into a TSO
/// witness of the original program: bookkeeping steps disappear, delay-copy
/// stores become buffered issues, everything else replays as its source
/// instruction, and the buffered stores drain at the end. Finally the
/// helper actions that do not extend the happens-before path from the load
/// commute before it.
fn reconstruct_witness(
    p: &Program,
    xp: &ExecProgram,
    ip: &InstrumentedProgram,
    path: &[PathStep],
) -> TsoWitness {
    let attacker = ip.attack.attacker;
    let mut plan: Vec<PlanStep> = Vec::new();
    for step in path {
        let thread = step.thread as usize;
        match ip.roles[thread][step.inst as usize] {
            Role::Original { inst } | Role::CopyExec { inst } => plan.push(PlanStep::Exec {
                thread,
                inst: inst as u32,
            }),
            Role::AttackStoreIssue { inst } => plan.push(PlanStep::IssueOnly {
                thread,
                inst: inst as u32,
                is_attack_store: true,
            }),
            Role::CopyStoreIssue { inst } => plan.push(PlanStep::IssueOnly {
                thread,
                inst: inst as u32,
                is_attack_store: false,
            }),
            Role::AttackLoadMark { inst } => plan.push(PlanStep::AttackLoad {
                thread,
                inst: inst as u32,
            }),
            Role::Glue => {}
        }
    }

    let mut state: TsoState = initial_tso(xp);
    let mut actions: Vec<Action> = Vec::new();
    let mut isu_index = None;
    let mut ld_index = None;
    let exec = |thread: usize, inst: u32, flush: bool, state: &mut TsoState, actions: &mut Vec<Action>| {
        let (acts, next) = tso_exec_inst(xp, state, thread, inst, usize::MAX)
            .unwrap_or_else(|| panic!("replay: instruction {inst} of thread {thread} disabled"));
        actions.extend_from_slice(&acts);
        *state = next;
        if flush && !state.buffers[thread].is_empty() {
            let (act, next) = tso_flush_one(xp, state, thread).expect("buffered store");
            actions.push(act);
            *state = next;
        }
    };
    for step in &plan {
        match *step {
            PlanStep::Exec { thread, inst } => {
                let is_store = matches!(
                    p.threads[thread].instructions[inst as usize].inst,
                    crate::ast::Instruction::Store { .. }
                );
                // Only non-attacker stores (and pre-attack attacker stores,
                // whose buffer is empty) publish immediately.
                exec(thread, inst, is_store, &mut state, &mut actions);
            }
            PlanStep::IssueOnly {
                thread,
                inst,
                is_attack_store,
            } => {
                if is_attack_store {
                    isu_index = Some(actions.len());
                }
                exec(thread, inst, false, &mut state, &mut actions);
            }
            PlanStep::AttackLoad { thread, inst } => {
                ld_index = Some(actions.len());
                exec(thread, inst, false, &mut state, &mut actions);
            }
        }
    }
    let st_index = actions.len();
    while !state.buffers[attacker].is_empty() {
        let (act, next) = tso_flush_one(xp, &state, attacker).expect("delayed store");
        actions.push(act);
        state = next;
    }
    debug_assert!(state.buffers_empty());

    let witness = TsoWitness {
        computation: Computation {
            kind: CompKind::Tso,
            actions,
        },
        isu_index: isu_index.expect("path enters the attack"),
        ld_index: ld_index.expect("path performs the attack load"),
        st_index,
    };
    let debug = witness_actions_debug(&witness);
    let witness = normalize_witness(xp, witness).unwrap_or_else(|e| {
        panic!("reconstructed computation fails to replay: {e}; actions: {debug}")
    });
    let verdict =
        validate_witness_compiled(p, xp, &ip.attack, &witness).expect("reconstruction is legal");
    assert_eq!(
        verdict,
        WitnessVerdict::Valid,
        "reconstructed witness failed validation for {}",
        ip.attack.describe(p)
    );
    witness
}

fn witness_actions_debug(w: &TsoWitness) -> String {
    let actions: Vec<String> = w
        .computation
        .actions
        .iter()
        .map(|a| a.to_string())
        .collect();
    format!(
        "[{}] isu={} ld={} st={}",
        actions.join(" "),
        w.isu_index,
        w.ld_index,
        w.st_index
    )
}

/// Checks every attack of the program: enumerate, filter, then dispatch the
/// surviving reachability queries to a worker pool. The report is
/// independent of the worker count.
pub fn check_robustness(p: &Program, cfg: &CheckerConfig) -> RobustnessReport {
    let attacks = enumerate_attacks(p);
    let decisions: Vec<FilterDecision> = attacks.iter().map(|a| syntactic_filter(p, a)).collect();
    let queries: Vec<Attack> = attacks
        .iter()
        .zip(&decisions)
        .filter(|(_, d)| d.is_keep())
        .map(|(a, _)| *a)
        .collect();
    let query_results = map_parallel(&queries, cfg.workers, |_, a| {
        let start = Instant::now();
        let (status, states) = check_attack(p, a, cfg.state_budget);
        (status, states, start.elapsed().as_millis() as u64)
    });

    let mut results = Vec::with_capacity(attacks.len());
    let mut qi = 0usize;
    let mut totals = Totals {
        rq: attacks.len() as u64,
        ..Totals::default()
    };
    for (attack, decision) in attacks.iter().zip(&decisions) {
        let result = match decision {
            FilterDecision::Drop(reason) => {
                totals.nr1 += 1;
                AttackResult {
                    attack: *attack,
                    status: AttackStatus::Dropped(*reason),
                    states_explored: 0,
                    millis: 0,
                }
            }
            FilterDecision::Keep => {
                let (status, states, millis) = query_results[qi].clone();
                qi += 1;
                match &status {
                    AttackStatus::Infeasible => totals.nr2 += 1,
                    AttackStatus::Feasible(_) => totals.r += 1,
                    AttackStatus::Inconclusive { .. } => totals.inconclusive += 1,
                    AttackStatus::Dropped(_) => unreachable!(),
                }
                AttackResult {
                    attack: *attack,
                    status,
                    states_explored: states,
                    millis,
                }
            }
        };
        results.push(result);
    }
    let verdict = if totals.r > 0 {
        Verdict::NonRobust
    } else if totals.inconclusive > 0 {
        Verdict::Inconclusive
    } else {
        Verdict::Robust
    };
    RobustnessReport {
        verdict,
        attacks: results,
        totals,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;
    use crate::semantics::ActionKind;

    fn dekker() -> Program {
        parse_program(crate::corpus::DEKKER).unwrap()
    }

    #[test]
    fn dekker_is_non_robust_with_two_feasible_attacks() {
        let p = dekker();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::NonRobust);
        assert_eq!(report.totals.rq, 2);
        assert_eq!(report.totals.r, 2);
        assert_eq!(report.totals.nr1, 0);
        assert_eq!(report.totals.nr2, 0);
        for r in &report.attacks {
            assert!(r.states_explored < 10_000);
        }
    }

    #[test]
    fn dekker_witness_matches_the_delayed_store_run() {
        let p = dekker();
        let report = check_robustness(&p, &CheckerConfig::default());
        let (_, w) = report.feasible().next().expect("feasible attack");
        let expected = vec![
            Action::new(0, ActionKind::Issue),
            Action::new(0, ActionKind::Load { addr: 1, val: 0 }),
            Action::new(1, ActionKind::Issue),
            Action::new(1, ActionKind::Store { addr: 1, val: 1 }),
            Action::new(1, ActionKind::Load { addr: 0, val: 0 }),
            Action::new(0, ActionKind::Store { addr: 0, val: 1 }),
        ];
        assert_eq!(w.computation.actions, expected);
        assert_eq!((w.isu_index, w.ld_index, w.st_index), (0, 1, 5));
    }

    #[test]
    fn fenced_dekker_is_robust_with_all_attacks_dropped() {
        let p = parse_program(crate::corpus::DEKKER_FENCED).unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
        assert_eq!(report.totals.nr2, 0);
        assert_eq!(report.totals.r, 0);
        assert_eq!(report.totals.nr1, report.totals.rq);
    }

    #[test]
    fn single_thread_program_is_robust() {
        let p = parse_program(
            "program P domain 2\nthread t regs r init l0 begin\n\
             l0: mem[0] <- 1; goto l1;\n l1: r <- mem[1]; goto l2;\nend",
        )
        .unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
        assert_eq!(report.totals.r, 0);
    }

    #[test]
    fn forcing_a_dropped_attack_still_answers_infeasible() {
        let p = parse_program(crate::corpus::DEKKER_FENCED).unwrap();
        let a = enumerate_attacks(&p)[0];
        assert!(!syntactic_filter(&p, &a).is_keep());
        let (status, _) = check_attack(&p, &a, 1_000_000);
        assert_eq!(status, AttackStatus::Infeasible);
    }

    #[test]
    fn own_buffer_read_makes_attack_infeasible() {
        // The attack load always reads the attacker's own buffered store,
        // so the early-read guard blocks every instrumented run.
        let text = "program P domain 2\n\
                    thread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: r <- mem[0]; goto l2;\nend\n\
                    thread u regs s init m0 begin\n m0: mem[1] <- 1; goto m1;\nend";
        let p = parse_program(text).unwrap();
        let a = enumerate_attacks(&p)[0];
        assert!(syntactic_filter(&p, &a).is_keep());
        let (status, _) = check_attack(&p, &a, 1_000_000);
        assert_eq!(status, AttackStatus::Infeasible);
    }

    #[test]
    fn report_is_identical_across_worker_counts() {
        let p = dekker();
        let base = check_robustness(&p, &CheckerConfig { workers: 1, ..Default::default() });
        for workers in [2, 4] {
            let other = check_robustness(&p, &CheckerConfig { workers, ..Default::default() });
            assert_eq!(base.verdict, other.verdict);
            assert_eq!(base.totals, other.totals);
            for (a, b) in base.attacks.iter().zip(&other.attacks) {
                assert_eq!(a.attack, b.attack);
                assert_eq!(a.status, b.status);
                assert_eq!(a.states_explored, b.states_explored);
            }
        }
    }

    #[test]
    fn peterson_is_non_robust_and_fenced_peterson_robust() {
        let p = parse_program(crate::corpus::PETERSON).unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::NonRobust);
        let q = parse_program(crate::corpus::PETERSON_FENCED).unwrap();
        let report = check_robustness(&q, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
    }

    #[test]
    fn cas_lock_is_robust_via_syntactic_drops() {
        let p = parse_program(crate::corpus::CAS_LOCK).unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
        assert_eq!(report.totals.nr1, report.totals.rq);
    }

    #[test]
    fn message_passing_is_robust() {
        let p = parse_program(crate::corpus::MESSAGE_PASSING).unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        assert_eq!(report.verdict, Verdict::Robust);
    }
}
