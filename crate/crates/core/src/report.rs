//! JSON report schema for checker results, witnesses and oracle verdicts.
//!
//! The layout is stable: object keys follow struct declaration order and
//! timing defaults to zero, so reports are byte-identical across worker
//! counts and runs unless timing is explicitly requested.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ast::Program;
use crate::attack::{Attack, TsoWitness};
use crate::checker::{AttackStatus, RobustnessReport, Verdict};
use crate::semantics::{Action, ActionKind, CompKind, Computation};
use crate::trace::OracleVerdict;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JsonAction {
    pub thread: String,
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub addr: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JsonDecomposition {
    pub isu_index: usize,
    pub ld_index: usize,
    pub st_index: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JsonWitness {
    pub computation: Vec<JsonAction>,
    pub decomposition: JsonDecomposition,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JsonAttackRef {
    pub attacker: String,
    pub st_label: String,
    pub ld_label: String,
}

/// Witness exchange format: the attack plus its decomposed computation.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct JsonWitnessFile {
    pub attack: JsonAttackRef,
    #[serde(flatten)]
    pub witness: JsonWitness,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct JsonAttackResult {
    pub attacker: String,
    pub st_label: String,
    pub ld_label: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<JsonWitness>,
    pub states_explored: u64,
    pub millis: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct JsonTotals {
    #[serde(rename = "RQ")]
    pub rq: u64,
    #[serde(rename = "NR1")]
    pub nr1: u64,
    #[serde(rename = "NR2")]
    pub nr2: u64,
    #[serde(rename = "R")]
    pub r: u64,
}

#[derive(Debug, Clone, Serialize, PartialEq, Eq)]
pub struct JsonReport {
    pub verdict: String,
    pub attacks: Vec<JsonAttackResult>,
    pub totals: JsonTotals,
}

pub fn action_to_json(p: &Program, a: &Action) -> JsonAction {
    let thread = p
        .threads
        .get(a.thread as usize)
        .map(|t| t.id.clone())
        .unwrap_or_else(|| format!("#{}", a.thread));
    match a.kind {
        ActionKind::Issue => JsonAction {
            thread,
            kind: "isu".into(),
            addr: None,
            val: None,
        },
        ActionKind::Local => JsonAction {
            thread,
            kind: "loc".into(),
            addr: None,
            val: None,
        },
        ActionKind::Load { addr, val } => JsonAction {
            thread,
            kind: "ld".into(),
            addr: Some(addr as u64),
            val: Some(val as u64),
        },
        ActionKind::Store { addr, val } => JsonAction {
            thread,
            kind: "st".into(),
            addr: Some(addr as u64),
            val: Some(val as u64),
        },
    }
}

pub fn computation_to_json(p: &Program, c: &Computation) -> Vec<JsonAction> {
    c.actions.iter().map(|a| action_to_json(p, a)).collect()
}

pub fn witness_to_json(p: &Program, w: &TsoWitness) -> JsonWitness {
    JsonWitness {
        computation: computation_to_json(p, &w.computation),
        decomposition: JsonDecomposition {
            isu_index: w.isu_index,
            ld_index: w.ld_index,
            st_index: w.st_index,
        },
    }
}

pub fn verdict_name(v: Verdict) -> &'static str {
    match v {
        Verdict::Robust => "robust",
        Verdict::NonRobust => "non-robust",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// Converts a checker report to the JSON schema. Timing is zeroed unless
/// `include_timing` is set, keeping default output reproducible.
pub fn report_to_json(p: &Program, report: &RobustnessReport, include_timing: bool) -> JsonReport {
    let attacks = report
        .attacks
        .iter()
        .map(|r| {
            let (status, reason, witness) = match &r.status {
                AttackStatus::Dropped(reason) => {
                    ("dropped".to_string(), Some(reason.to_string()), None)
                }
                AttackStatus::Infeasible => ("infeasible".to_string(), None, None),
                AttackStatus::Feasible(w) => {
                    ("feasible".to_string(), None, Some(witness_to_json(p, w)))
                }
                AttackStatus::Inconclusive { budget } => (
                    "inconclusive".to_string(),
                    Some(format!("state budget {budget} exceeded")),
                    None,
                ),
            };
            JsonAttackResult {
                attacker: r.attack.attacker_id(p).to_string(),
                st_label: r.attack.store_label(p).to_string(),
                ld_label: r.attack.load_label(p).to_string(),
                status,
                reason,
                witness,
                states_explored: r.states_explored,
                millis: if include_timing { r.millis } else { 0 },
            }
        })
        .collect();
    JsonReport {
        verdict: verdict_name(report.verdict).to_string(),
        attacks,
        totals: JsonTotals {
            rq: report.totals.rq,
            nr1: report.totals.nr1,
            nr2: report.totals.nr2,
            r: report.totals.r,
        },
    }
}

#[derive(Debug, Error)]
pub enum WitnessFileError {
    #[error("unknown thread `{0}`")]
    UnknownThread(String),
    #[error("thread `{thread}` has no store instruction at label `{label}`")]
    NoStoreAt { thread: String, label: String },
    #[error("thread `{thread}` has no load instruction at label `{label}`")]
    NoLoadAt { thread: String, label: String },
    #[error("action {index}: unknown action kind `{kind}`")]
    BadActionKind { index: usize, kind: String },
    #[error("action {index}: `{kind}` needs addr and val")]
    MissingAddrVal { index: usize, kind: String },
}

pub fn action_from_json(
    p: &Program,
    index: usize,
    a: &JsonAction,
) -> Result<Action, WitnessFileError> {
    let thread = p
        .thread_index(&a.thread)
        .ok_or_else(|| WitnessFileError::UnknownThread(a.thread.clone()))? as u32;
    let kind = match a.kind.as_str() {
        "isu" => ActionKind::Issue,
        "loc" => ActionKind::Local,
        "ld" | "st" => {
            let (Some(addr), Some(val)) = (a.addr, a.val) else {
                return Err(WitnessFileError::MissingAddrVal {
                    index,
                    kind: a.kind.clone(),
                });
            };
            if a.kind == "ld" {
                ActionKind::Load {
                    addr: addr as u32,
                    val: val as u32,
                }
            } else {
                ActionKind::Store {
                    addr: addr as u32,
                    val: val as u32,
                }
            }
        }
        other => {
            return Err(WitnessFileError::BadActionKind {
                index,
                kind: other.to_string(),
            })
        }
    };
    Ok(Action::new(thread, kind))
}

/// Resolves a witness file against a program: the attack is identified by
/// its thread and the source labels of its store and load (first match in
/// instruction order).
pub fn witness_from_json(
    p: &Program,
    file: &JsonWitnessFile,
) -> Result<(Attack, TsoWitness), WitnessFileError> {
    let ti = p
        .thread_index(&file.attack.attacker)
        .ok_or_else(|| WitnessFileError::UnknownThread(file.attack.attacker.clone()))?;
    let thread = &p.threads[ti];
    let store_inst = thread
        .instructions
        .iter()
        .position(|li| li.inst.is_store() && li.src.as_str() == file.attack.st_label)
        .ok_or_else(|| WitnessFileError::NoStoreAt {
            thread: file.attack.attacker.clone(),
            label: file.attack.st_label.clone(),
        })?;
    let load_inst = thread
        .instructions
        .iter()
        .position(|li| li.inst.is_load() && li.src.as_str() == file.attack.ld_label)
        .ok_or_else(|| WitnessFileError::NoLoadAt {
            thread: file.attack.attacker.clone(),
            label: file.attack.ld_label.clone(),
        })?;
    let actions = file
        .witness
        .computation
        .iter()
        .enumerate()
        .map(|(i, a)| action_from_json(p, i, a))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((
        Attack {
            attacker: ti,
            store_inst,
            load_inst,
        },
        TsoWitness {
            computation: Computation {
                kind: CompKind::Tso,
                actions,
            },
            isu_index: file.witness.decomposition.isu_index,
            ld_index: file.witness.decomposition.ld_index,
            st_index: file.witness.decomposition.st_index,
        },
    ))
}

pub fn oracle_to_json(p: &Program, v: &OracleVerdict) -> serde_json::Value {
    match v {
        OracleVerdict::RobustWithinBound => serde_json::json!({
            "verdict": "robust-within-bound",
        }),
        OracleVerdict::Violating {
            computation,
            delays,
            per_thread_delays,
        } => serde_json::json!({
            "verdict": "violating",
            "delays": delays,
            "per_thread_delays": per_thread_delays,
            "computation": computation_to_json(p, computation),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checker::{check_robustness, CheckerConfig};
    use crate::parser::parse_program;

    #[test]
    fn report_json_is_stable_and_round_trips_witnesses() {
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let report = check_robustness(&p, &CheckerConfig::default());
        let json = report_to_json(&p, &report, false);
        let text = serde_json::to_string_pretty(&json).unwrap();
        assert!(text.contains("\"verdict\": \"non-robust\""));
        assert!(text.contains("\"RQ\": 2"));

        // Pull a witness out, serialize it as a witness file, read it back.
        let attack = &json.attacks[0];
        let file = JsonWitnessFile {
            attack: JsonAttackRef {
                attacker: attack.attacker.clone(),
                st_label: attack.st_label.clone(),
                ld_label: attack.ld_label.clone(),
            },
            witness: attack.witness.clone().unwrap(),
        };
        let round = serde_json::to_string(&file).unwrap();
        let parsed: JsonWitnessFile = serde_json::from_str(&round).unwrap();
        let (a, w) = witness_from_json(&p, &parsed).unwrap();
        assert_eq!(a.attacker, 0);
        assert_eq!(
            crate::attack::validate_witness(&p, &a, &w).unwrap(),
            crate::attack::WitnessVerdict::Valid
        );
    }
}
