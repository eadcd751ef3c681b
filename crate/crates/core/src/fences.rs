//! Fence synthesis: irreducible eliminating fence sets per feasible attack,
//! and an exact 0/1 integer program choosing a cost-optimal valid set.

use std::collections::BTreeMap;
use std::fmt;

use num_rational::Ratio;
use thiserror::Error;

use crate::ast::{insert_fences_mapped, FenceSet, Label, Program, ThreadLabel};
use crate::attack::{syntactic_filter, Attack};
use crate::checker::{check_attack, check_robustness, AttackStatus, CheckerConfig, RobustnessReport, Verdict};
use crate::pool::map_parallel;

pub type Cost = Ratio<u64>;

/// Per-label fence costs; absent labels cost 1 (pure size minimization).
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CostFunction {
    costs: BTreeMap<ThreadLabel, Cost>,
}

impl CostFunction {
    pub fn uniform() -> Self {
        CostFunction::default()
    }

    pub fn set(&mut self, tl: ThreadLabel, cost: Cost) {
        self.costs.insert(tl, cost);
    }

    pub fn cost(&self, tl: &ThreadLabel) -> Cost {
        self.costs.get(tl).copied().unwrap_or_else(|| Ratio::from_integer(1))
    }

    pub fn total(&self, fences: &FenceSet) -> Cost {
        fences
            .labels
            .iter()
            .map(|tl| self.cost(tl))
            .fold(Ratio::from_integer(0), |a, b| a + b)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct CostFileError {
    pub line: usize,
    pub msg: String,
}

/// Parses a cost file: one `thread.label = rational` per line, `#` comments.
/// Rationals are integers, fractions (`3/2`) or decimals (`1.5`), all
/// strictly positive.
pub fn parse_cost_file(text: &str) -> Result<CostFunction, CostFileError> {
    let mut out = CostFunction::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let err = |msg: String| CostFileError { line, msg };
        let (lhs, rhs) = content
            .split_once('=')
            .ok_or_else(|| err("expected `thread.label = cost`".into()))?;
        let (thread, label) = lhs
            .trim()
            .split_once('.')
            .ok_or_else(|| err("expected `thread.label` on the left".into()))?;
        let cost = parse_rational(rhs.trim()).map_err(|msg| err(msg))?;
        if cost == Ratio::from_integer(0) {
            return Err(err("costs must be strictly positive".into()));
        }
        out.set(
            ThreadLabel::new(thread.trim(), Label::new(label.trim())),
            cost,
        );
    }
    Ok(out)
}

fn parse_rational(s: &str) -> Result<Cost, String> {
    if let Some((num, den)) = s.split_once('/') {
        let n: u64 = num.trim().parse().map_err(|_| format!("bad numerator `{num}`"))?;
        let d: u64 = den.trim().parse().map_err(|_| format!("bad denominator `{den}`"))?;
        if d == 0 {
            return Err("zero denominator".into());
        }
        return Ok(Ratio::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let i: u64 = int.trim().parse().map_err(|_| format!("bad number `{s}`"))?;
        let frac = frac.trim();
        let f: u64 = frac.parse().map_err(|_| format!("bad number `{s}`"))?;
        let scale = 10u64
            .checked_pow(frac.len() as u32)
            .ok_or_else(|| format!("too many decimals in `{s}`"))?;
        return Ok(Ratio::new(i * scale + f, scale));
    }
    let n: u64 = s.parse().map_err(|_| format!("bad number `{s}`"))?;
    Ok(Ratio::from_integer(n))
}

pub fn format_cost(c: Cost) -> String {
    if c.is_integer() {
        c.numer().to_string()
    } else {
        format!("{}/{}", c.numer(), c.denom())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SynthesisError {
    #[error("robustness query inconclusive for attack {attack} (state budget exceeded)")]
    Inconclusive { attack: String },
    #[error("internal error: attack {attack} has no eliminating fence set")]
    NoEliminatingSet { attack: String },
    #[error("internal error: fenced program still {verdict} after inserting {fences}")]
    RecheckFailed { verdict: String, fences: String },
}

/// Does the candidate set cover every control path from the store's
/// destination to the load's source? If so, fencing it kills the attack
/// without a reachability query.
fn covers_all_paths(p: &Program, a: &Attack, candidate: &[Label]) -> bool {
    let t = &p.threads[a.attacker];
    let from = &t.instructions[a.store_inst].dst;
    let to = &t.instructions[a.load_inst].src;
    if candidate.contains(from) || candidate.contains(to) {
        return true;
    }
    // Reachability avoiding candidate labels entirely.
    let mut seen = vec![from.clone()];
    let mut stack = vec![from.clone()];
    while let Some(l) = stack.pop() {
        for (_, li) in t.instructions_at(&l) {
            if li.dst == *to {
                return false;
            }
            if candidate.contains(&li.dst) || seen.contains(&li.dst) {
                continue;
            }
            seen.push(li.dst.clone());
            stack.push(li.dst.clone());
        }
    }
    true
}

/// Does fencing the candidate labels (in the attacker) make the attack
/// infeasible?
fn eliminates(
    p: &Program,
    a: &Attack,
    candidate: &[Label],
    state_budget: u64,
) -> Result<bool, SynthesisError> {
    if covers_all_paths(p, a, candidate) {
        return Ok(true);
    }
    let fences = FenceSet::from_iter(
        candidate
            .iter()
            .map(|l| ThreadLabel::new(p.threads[a.attacker].id.clone(), l.clone())),
    );
    let (fenced, mapping) = insert_fences_mapped(p, &fences).expect("labels exist");
    let moved = Attack {
        attacker: a.attacker,
        store_inst: mapping[a.attacker][a.store_inst],
        load_inst: mapping[a.attacker][a.load_inst],
    };
    if !syntactic_filter(&fenced, &moved).is_keep() {
        return Ok(true);
    }
    match check_attack(&fenced, &moved, state_budget).0 {
        AttackStatus::Infeasible | AttackStatus::Dropped(_) => Ok(true),
        AttackStatus::Feasible(_) => Ok(false),
        AttackStatus::Inconclusive { .. } => Err(SynthesisError::Inconclusive {
            attack: a.describe(p),
        }),
    }
}

/// All irreducible fence sets over the attack's involved labels that
/// eliminate it. Subsets are tried smallest-first, and supersets of an
/// already-eliminating set are pruned, so exactly the irreducible sets
/// remain.
pub fn eliminating_sets(
    p: &Program,
    a: &Attack,
    cfg: &CheckerConfig,
) -> Result<Vec<FenceSet>, SynthesisError> {
    let labels: Vec<Label> = crate::attack::involved_labels(p, a).into_iter().collect();
    let thread_id = &p.threads[a.attacker].id;
    let mut found: Vec<Vec<Label>> = Vec::new();
    for size in 1..=labels.len() {
        for combo in combinations(labels.len(), size) {
            let candidate: Vec<Label> = combo.iter().map(|&i| labels[i].clone()).collect();
            if found
                .iter()
                .any(|f| f.iter().all(|l| candidate.contains(l)))
            {
                continue;
            }
            if eliminates(p, a, &candidate, cfg.state_budget)? {
                found.push(candidate);
            }
        }
    }
    Ok(found
        .into_iter()
        .map(|labels| {
            FenceSet::from_iter(
                labels
                    .into_iter()
                    .map(|l| ThreadLabel::new(thread_id.clone(), l)),
            )
        })
        .collect())
}

/// k-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut combo: Vec<usize> = (0..k).collect();
    if k > n {
        return out;
    }
    loop {
        out.push(combo.clone());
        // Advance the rightmost index that can still move.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if combo[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        combo[i] += 1;
        for j in i + 1..k {
            combo[j] = combo[j - 1] + 1;
        }
    }
}

/// The 0/1 integer program: one selection row per feasible attack (pick at
/// least one eliminating set), one linking row per set (a picked set forces
/// all its labels), minimizing the summed label costs.
#[derive(Debug, Clone)]
pub struct IlpInstance {
    /// Label variables in a fixed order.
    pub label_vars: Vec<ThreadLabel>,
    pub label_costs: Vec<Cost>,
    /// Set variables: (attack index, label variable indices).
    pub set_vars: Vec<(usize, Vec<usize>)>,
    /// Selection rows: per attack, the set variables covering it.
    pub selections: Vec<Vec<usize>>,
}

impl IlpInstance {
    pub fn is_empty(&self) -> bool {
        self.selections.is_empty()
    }

    pub fn variable_count(&self) -> usize {
        self.label_vars.len() + self.set_vars.len()
    }

    pub fn constraint_count(&self) -> usize {
        self.selections.len() + self.set_vars.len()
    }
}

/// A 0/1 assignment solving the instance.
#[derive(Debug, Clone)]
pub struct IlpSolution {
    pub label_values: Vec<bool>,
    pub set_values: Vec<bool>,
    pub cost: Cost,
    pub fences: FenceSet,
}

pub fn build_ilp(feasible: &[(Attack, Vec<FenceSet>)], cost: &CostFunction) -> IlpInstance {
    let mut label_vars: Vec<ThreadLabel> = Vec::new();
    let mut set_vars: Vec<(usize, Vec<usize>)> = Vec::new();
    let mut selections: Vec<Vec<usize>> = Vec::new();
    for (ai, (_, sets)) in feasible.iter().enumerate() {
        let mut row = Vec::new();
        for set in sets {
            let mut label_ids = Vec::new();
            for tl in &set.labels {
                let id = match label_vars.iter().position(|x| x == tl) {
                    Some(i) => i,
                    None => {
                        label_vars.push(tl.clone());
                        label_vars.len() - 1
                    }
                };
                label_ids.push(id);
            }
            row.push(set_vars.len());
            set_vars.push((ai, label_ids));
        }
        selections.push(row);
    }
    let label_costs = label_vars.iter().map(|tl| cost.cost(tl)).collect();
    IlpInstance {
        label_vars,
        label_costs,
        set_vars,
        selections,
    }
}

/// Exact branch-and-bound over set variables: each attack picks one of its
/// eliminating sets; the objective is the cost of the union of the picked
/// labels. Ties break towards the lexicographically smallest label set.
pub fn solve_ilp(ilp: &IlpInstance) -> IlpSolution {
    #[derive(Clone)]
    struct Best {
        labels: Vec<bool>,
        sets: Vec<bool>,
        cost: Cost,
    }

    fn union_cost(ilp: &IlpInstance, labels: &[bool]) -> Cost {
        labels
            .iter()
            .zip(&ilp.label_costs)
            .filter(|(&on, _)| on)
            .map(|(_, c)| *c)
            .fold(Ratio::from_integer(0), |a, b| a + b)
    }

    fn chosen_labels(ilp: &IlpInstance, labels: &[bool]) -> Vec<ThreadLabel> {
        labels
            .iter()
            .enumerate()
            .filter(|(_, &on)| on)
            .map(|(i, _)| ilp.label_vars[i].clone())
            .collect()
    }

    /// Admissible bound: the cheapest additional cost each remaining attack
    /// could possibly incur given the current union.
    fn lower_bound(ilp: &IlpInstance, from_attack: usize, labels: &[bool]) -> Cost {
        let mut extra = Ratio::from_integer(0);
        for row in &ilp.selections[from_attack..] {
            let min_add = row
                .iter()
                .map(|&sv| {
                    ilp.set_vars[sv]
                        .1
                        .iter()
                        .filter(|&&l| !labels[l])
                        .map(|&l| ilp.label_costs[l])
                        .fold(Ratio::from_integer(0), |a, b| a + b)
                })
                .min();
            if let Some(m) = min_add {
                extra += m;
            }
        }
        extra
    }

    fn descend(
        ilp: &IlpInstance,
        attack: usize,
        labels: &mut Vec<bool>,
        sets: &mut Vec<bool>,
        best: &mut Option<Best>,
    ) {
        let current = union_cost(ilp, labels);
        if let Some(b) = best {
            let bound = current + lower_bound(ilp, attack, labels);
            if bound > b.cost {
                return;
            }
        }
        if attack == ilp.selections.len() {
            let cost = current;
            let replace = match best {
                None => true,
                Some(b) => {
                    cost < b.cost
                        || (cost == b.cost
                            && chosen_labels(ilp, labels) < chosen_labels(ilp, &b.labels))
                }
            };
            if replace {
                *best = Some(Best {
                    labels: labels.clone(),
                    sets: sets.clone(),
                    cost,
                });
            }
            return;
        }
        for &sv in &ilp.selections[attack] {
            let added: Vec<usize> = ilp.set_vars[sv]
                .1
                .iter()
                .copied()
                .filter(|&l| !labels[l])
                .collect();
            for &l in &added {
                labels[l] = true;
            }
            sets[sv] = true;
            descend(ilp, attack + 1, labels, sets, best);
            sets[sv] = false;
            for &l in &added {
                labels[l] = false;
            }
        }
    }

    let mut labels = vec![false; ilp.label_vars.len()];
    let mut sets = vec![false; ilp.set_vars.len()];
    let mut best: Option<Best> = None;
    descend(ilp, 0, &mut labels, &mut sets, &mut best);
    let best = best.unwrap_or(Best {
        labels: labels.clone(),
        sets: sets.clone(),
        cost: Ratio::from_integer(0),
    });

    // Every selection row must be satisfied by the chosen assignment.
    for (ai, row) in ilp.selections.iter().enumerate() {
        debug_assert!(
            row.iter().any(|&sv| best.sets[sv]),
            "attack {ai} has no selected set"
        );
    }
    let fences = FenceSet::from_iter(chosen_labels(ilp, &best.labels));
    IlpSolution {
        label_values: best.labels,
        set_values: best.sets,
        cost: best.cost,
        fences,
    }
}

/// One full fence synthesis run.
#[derive(Debug, Clone)]
pub struct FenceSynthesis {
    pub fences: FenceSet,
    pub cost: Cost,
    pub fenced_program: Program,
    pub per_attack_sets: Vec<(Attack, Vec<FenceSet>)>,
    pub initial_report: RobustnessReport,
    pub recheck: RobustnessReport,
}

/// Computes a cost-optimal valid fence set: checks the program, derives the
/// irreducible eliminating sets of every feasible attack, solves the
/// integer program, inserts the chosen fences and re-verifies robustness of
/// the result.
pub fn optimal_fences(
    p: &Program,
    cost: &CostFunction,
    cfg: &CheckerConfig,
) -> Result<FenceSynthesis, SynthesisError> {
    let initial_report = check_robustness(p, cfg);
    if initial_report.verdict == Verdict::Inconclusive {
        return Err(SynthesisError::Inconclusive {
            attack: "<whole program>".into(),
        });
    }
    let feasible: Vec<Attack> = initial_report.feasible().map(|(a, _)| *a).collect();
    let sets = map_parallel(&feasible, cfg.workers, |_, a| eliminating_sets(p, a, cfg));
    let mut per_attack_sets = Vec::with_capacity(feasible.len());
    for (a, sets) in feasible.iter().zip(sets) {
        let sets = sets?;
        if sets.is_empty() {
            return Err(SynthesisError::NoEliminatingSet {
                attack: a.describe(p),
            });
        }
        per_attack_sets.push((*a, sets));
    }
    let ilp = build_ilp(&per_attack_sets, cost);
    let solution = solve_ilp(&ilp);
    let fenced_program =
        crate::ast::insert_fences(p, &solution.fences).expect("synthesized labels exist");
    let recheck = check_robustness(&fenced_program, cfg);
    match recheck.verdict {
        Verdict::Robust => {}
        Verdict::Inconclusive => {
            return Err(SynthesisError::Inconclusive {
                attack: "<fenced program re-check>".into(),
            })
        }
        Verdict::NonRobust => {
            return Err(SynthesisError::RecheckFailed {
                verdict: "non-robust".into(),
                fences: solution.fences.to_string(),
            })
        }
    }
    Ok(FenceSynthesis {
        fences: solution.fences,
        cost: solution.cost,
        fenced_program,
        per_attack_sets,
        initial_report,
        recheck,
    })
}

impl fmt::Display for FenceSynthesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "fences {} cost {}", self.fences, format_cost(self.cost))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    fn dekker() -> Program {
        parse_program(crate::corpus::DEKKER).unwrap()
    }

    fn feasible_attacks(p: &Program) -> Vec<Attack> {
        check_robustness(p, &CheckerConfig::default())
            .feasible()
            .map(|(a, _)| *a)
            .collect()
    }

    /// A two-thread program whose attacker has a diamond between its store
    /// and its load.
    fn diamond() -> Program {
        parse_program(
            "program Diamond domain 2\n\
             thread t1 regs r init l0 begin\n\
             l0: mem[0] <- 1; goto l1;\n\
             l1: r <- 0; goto l2;\n\
             l1: r <- 1; goto l3;\n\
             l2: r <- 0; goto l4;\n\
             l3: r <- 0; goto l4;\n\
             l4: r <- mem[1]; goto l5;\n\
             end\n\
             thread t2 regs s init m0 begin\n\
             m0: mem[1] <- 1; goto m1;\n\
             m1: s <- mem[0]; goto m2;\n\
             end",
        )
        .unwrap()
    }

    #[test]
    fn dekker_attacks_have_singleton_eliminating_sets() {
        let p = dekker();
        let cfg = CheckerConfig::default();
        let attacks = feasible_attacks(&p);
        assert_eq!(attacks.len(), 2);
        let sets0 = eliminating_sets(&p, &attacks[0], &cfg).unwrap();
        assert_eq!(
            sets0,
            vec![FenceSet::from_iter([ThreadLabel::new("t1", "l1")])]
        );
        let sets1 = eliminating_sets(&p, &attacks[1], &cfg).unwrap();
        assert_eq!(
            sets1,
            vec![FenceSet::from_iter([ThreadLabel::new("t2", "l1'")])]
        );
    }

    #[test]
    fn diamond_attack_has_three_irreducible_sets() {
        let p = diamond();
        let cfg = CheckerConfig::default();
        let attacks = feasible_attacks(&p);
        let diamond_attack = attacks
            .iter()
            .find(|a| a.attacker == 0)
            .expect("t1 attack feasible");
        let sets = eliminating_sets(&p, diamond_attack, &cfg).unwrap();
        let expected: Vec<FenceSet> = vec![
            FenceSet::from_iter([ThreadLabel::new("t1", "l1")]),
            FenceSet::from_iter([ThreadLabel::new("t1", "l4")]),
            FenceSet::from_iter([
                ThreadLabel::new("t1", "l2"),
                ThreadLabel::new("t1", "l3"),
            ]),
        ];
        assert_eq!(sets, expected);
    }

    #[test]
    fn ilp_shape_for_dekker() {
        let p = dekker();
        let cfg = CheckerConfig::default();
        let mut feasible = Vec::new();
        for a in feasible_attacks(&p) {
            feasible.push((a, eliminating_sets(&p, &a, &cfg).unwrap()));
        }
        let ilp = build_ilp(&feasible, &CostFunction::uniform());
        assert_eq!(ilp.variable_count(), 4);
        assert_eq!(ilp.constraint_count(), 4);
        assert_eq!(ilp.selections.len(), 2);
    }

    #[test]
    fn empty_instance_solves_to_no_fences() {
        let ilp = build_ilp(&[], &CostFunction::uniform());
        assert!(ilp.is_empty());
        let sol = solve_ilp(&ilp);
        assert!(sol.fences.is_empty());
        assert_eq!(sol.cost, Ratio::from_integer(0));
    }

    #[test]
    fn diamond_selection_row_has_three_set_variables() {
        let p = diamond();
        let cfg = CheckerConfig::default();
        let attacks = feasible_attacks(&p);
        let a = *attacks.iter().find(|a| a.attacker == 0).unwrap();
        let feasible = vec![(a, eliminating_sets(&p, &a, &cfg).unwrap())];
        let ilp = build_ilp(&feasible, &CostFunction::uniform());
        assert_eq!(ilp.selections.len(), 1);
        assert_eq!(ilp.selections[0].len(), 3);
    }

    #[test]
    fn dekker_optimal_fences_unit_cost() {
        let p = dekker();
        let synth = optimal_fences(&p, &CostFunction::uniform(), &CheckerConfig::default()).unwrap();
        assert_eq!(
            synth.fences,
            FenceSet::from_iter([
                ThreadLabel::new("t1", "l1"),
                ThreadLabel::new("t2", "l1'"),
            ])
        );
        assert_eq!(synth.cost, Ratio::from_integer(2));
        assert_eq!(synth.recheck.verdict, Verdict::Robust);
        // All attacks on the fenced program fall to the syntactic filter.
        assert_eq!(synth.recheck.totals.nr2, 0);
        assert_eq!(synth.recheck.totals.r, 0);
    }

    #[test]
    fn robust_input_needs_no_fences() {
        let p = parse_program(crate::corpus::MESSAGE_PASSING).unwrap();
        let synth = optimal_fences(&p, &CostFunction::uniform(), &CheckerConfig::default()).unwrap();
        assert!(synth.fences.is_empty());
        assert_eq!(synth.cost, Ratio::from_integer(0));
    }

    #[test]
    fn skewed_costs_cannot_avoid_forced_fences() {
        let p = dekker();
        let mut cost = CostFunction::uniform();
        cost.set(ThreadLabel::new("t1", "l1"), Ratio::from_integer(5));
        cost.set(ThreadLabel::new("t2", "l1'"), Ratio::from_integer(1));
        let synth = optimal_fences(&p, &cost, &CheckerConfig::default()).unwrap();
        assert_eq!(synth.fences.len(), 2);
        assert_eq!(synth.cost, Ratio::from_integer(6));
    }

    #[test]
    fn cost_file_parses_rationals() {
        let cf = parse_cost_file(
            "# comment\n t1.l1 = 3/2\n t2.l1' = 1.5 # trailing\n t1.l0 = 4\n",
        )
        .unwrap();
        assert_eq!(cf.cost(&ThreadLabel::new("t1", "l1")), Ratio::new(3, 2));
        assert_eq!(cf.cost(&ThreadLabel::new("t2", "l1'")), Ratio::new(3, 2));
        assert_eq!(cf.cost(&ThreadLabel::new("t1", "l0")), Ratio::from_integer(4));
        assert_eq!(cf.cost(&ThreadLabel::new("zz", "zz")), Ratio::from_integer(1));
        assert!(parse_cost_file("t1.l1 = 0").is_err());
        assert!(parse_cost_file("nonsense").is_err());
    }

    #[test]
    fn diamond_prefers_lexicographically_smallest_optimum() {
        // {l1} and {l4} both cost 1 for the diamond attack; the tie must
        // break to l1.
        let p = diamond();
        let synth = optimal_fences(&p, &CostFunction::uniform(), &CheckerConfig::default()).unwrap();
        assert!(synth.fences.labels.contains(&ThreadLabel::new("t1", "l1")));
        assert!(!synth.fences.labels.contains(&ThreadLabel::new("t1", "l4")));
    }

    /// Brute-force optimum over all label subsets, as an independent check.
    fn brute_force_optimum(p: &Program, cost: &CostFunction) -> Cost {
        let mut all_labels: Vec<ThreadLabel> = Vec::new();
        for a in feasible_attacks(p) {
            for l in crate::attack::involved_labels(p, &a) {
                let tl = ThreadLabel::new(p.threads[a.attacker].id.clone(), l);
                if !all_labels.contains(&tl) {
                    all_labels.push(tl);
                }
            }
        }
        let n = all_labels.len();
        let mut best: Option<Cost> = None;
        for mask in 0u32..(1 << n) {
            let fs = FenceSet::from_iter(
                (0..n)
                    .filter(|i| mask & (1 << i) != 0)
                    .map(|i| all_labels[i].clone()),
            );
            let fenced = crate::ast::insert_fences(p, &fs).unwrap();
            if check_robustness(&fenced, &CheckerConfig::default()).verdict == Verdict::Robust {
                let c = cost.total(&fs);
                if best.map_or(true, |b| c < b) {
                    best = Some(c);
                }
            }
        }
        best.expect("fencing everything is valid")
    }

    #[test]
    fn ilp_matches_brute_force_on_diamond() {
        let p = diamond();
        let cost = CostFunction::uniform();
        let synth = optimal_fences(&p, &cost, &CheckerConfig::default()).unwrap();
        assert_eq!(synth.cost, brute_force_optimum(&p, &cost));
    }
}
