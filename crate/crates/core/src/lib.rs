//! Robustness checking and fence synthesis for programs running on
//! store-buffer (TSO) hardware.
//!
//! A program is robust when every behaviour it exhibits under TSO store
//! buffering is also explainable under interleaving (SC) semantics, in the
//! sense of equal happens-before traces. This crate decides robustness by
//! enumerating *attacks* (a thread together with a store and a later load
//! that the store could be delayed past), compiling each attack into an
//! instrumented program whose SC state space encodes the existence of a
//! violating TSO run, and answering the resulting reachability queries with
//! a built-in explicit-state search. On top of the checker sit: a bounded
//! enumeration oracle for cross-validation, an optimal fence-placement
//! solver, and a parameterized (thread-replicated) robustness decision via
//! Petri-net coverability.

pub mod ast;
pub mod checker;
pub mod corpus;
pub mod exec;
pub mod fences;
pub mod instrument;
pub mod param;
pub mod parser;
pub mod pool;
pub mod pretty;
pub mod report;
pub mod semantics;
pub mod attack;
pub mod trace;

pub use ast::{
    control_paths, insert_fences, Expr, FenceSet, Instruction, Label, LabeledInstruction,
    Program, Thread, ThreadLabel,
};
pub use parser::parse_program;
pub use pretty::pretty;
