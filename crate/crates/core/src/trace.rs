//! Traces of computations: program order, store order, source and conflict
//! relations, feasibility under SC (acyclicity of happens-before), and the
//! bounded brute-force robustness oracle.
//!
//! A trace abstracts a computation into its control and data dependencies.
//! Issue/store pairs collapse into a single node placed at the issue
//! position, so a delayed store shows up "early" in program order — exactly
//! what makes a happens-before cycle possible when the delay matters.

use std::collections::HashMap;

use thiserror::Error;

use crate::exec::ExecProgram;
use crate::semantics::{
    count_delays, for_each_tso_computation, Action, ActionKind, CompKind, Computation, DelayInfo,
    TsoBounds,
};

/// Node-labelled dependency graph of one computation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    /// Node labels. A store node carries the store action (its issue does
    /// not appear separately); pending issues keep the `Issue` label.
    pub nodes: Vec<Action>,
    /// Per-thread program order as node lists (total order per thread).
    pub thread_order: Vec<Vec<u32>>,
    /// Per-address store order as node lists (total order per address).
    pub store_order: HashMap<u32, Vec<u32>>,
    /// Source edge of each load node: the store it read from, when it did
    /// not read the initial value.
    pub src: HashMap<u32, u32>,
    /// Node of the computation's i-th action (stores map to their issue's
    /// node).
    pub node_of_action: Vec<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EdgeKind {
    Po,
    St,
    Src,
    Cf,
}

impl EdgeKind {
    pub fn name(self) -> &'static str {
        match self {
            EdgeKind::Po => "po",
            EdgeKind::St => "st",
            EdgeKind::Src => "src",
            EdgeKind::Cf => "cf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct HbEdge {
    pub from: u32,
    pub to: u32,
    pub kind: EdgeKind,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("action {index}: {msg}")]
pub struct MalformedComputation {
    pub index: usize,
    pub msg: String,
}

/// Builds the trace of a computation by the inductive construction: issues
/// append pending nodes that their store action later relabels; loads attach
/// to the most recent store of their address, and are re-attached when a
/// program-order earlier store to the same address with the read value
/// completes (early reads from the own buffer).
pub fn trace_of(c: &Computation) -> Result<Trace, MalformedComputation> {
    let mut nodes: Vec<Action> = Vec::new();
    let mut thread_order: Vec<Vec<u32>> = Vec::new();
    let mut store_order: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut src: HashMap<u32, u32> = HashMap::new();
    let mut node_of_action = Vec::with_capacity(c.actions.len());
    // Pending issue nodes per thread, oldest first.
    let mut pending: Vec<Vec<u32>> = Vec::new();

    let ensure_thread = |t: usize, thread_order: &mut Vec<Vec<u32>>, pending: &mut Vec<Vec<u32>>| {
        while thread_order.len() <= t {
            thread_order.push(Vec::new());
            pending.push(Vec::new());
        }
    };

    for (i, &a) in c.actions.iter().enumerate() {
        let t = a.thread as usize;
        ensure_thread(t, &mut thread_order, &mut pending);
        match a.kind {
            ActionKind::Store { addr, val } => {
                if pending[t].is_empty() {
                    return Err(MalformedComputation {
                        index: i,
                        msg: format!("store {a} without a pending issue"),
                    });
                }
                let n = pending[t].remove(0);
                nodes[n as usize] = a;
                store_order.entry(addr).or_default().push(n);
                // Re-attach program-order later loads that read this store
                // early from the buffer.
                let pos = thread_order[t].iter().position(|&x| x == n).unwrap();
                for &m in &thread_order[t][pos + 1..] {
                    if nodes[m as usize].kind == (ActionKind::Load { addr, val }) {
                        src.insert(m, n);
                    }
                }
                node_of_action.push(n);
            }
            ActionKind::Load { addr, .. } => {
                let n = nodes.len() as u32;
                nodes.push(a);
                thread_order[t].push(n);
                if let Some(stores) = store_order.get(&addr) {
                    if let Some(&last) = stores.last() {
                        src.insert(n, last);
                    }
                }
                node_of_action.push(n);
            }
            ActionKind::Issue => {
                let n = nodes.len() as u32;
                nodes.push(a);
                thread_order[t].push(n);
                pending[t].push(n);
                node_of_action.push(n);
            }
            ActionKind::Local => {
                let n = nodes.len() as u32;
                nodes.push(a);
                thread_order[t].push(n);
                node_of_action.push(n);
            }
        }
    }
    Ok(Trace {
        nodes,
        thread_order,
        store_order,
        src,
        node_of_action,
    })
}

impl Trace {
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Nodes that are loads or stores.
    pub fn non_local_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|a| matches!(a.kind, ActionKind::Load { .. } | ActionKind::Store { .. }))
            .count()
    }
}

/// The happens-before edges of a trace: program order, store order, source
/// and conflict edges. Order edges are given between consecutive elements of
/// each total order (their transitive closure is the full relation).
pub fn happens_before(tr: &Trace) -> Vec<HbEdge> {
    let mut edges = Vec::new();
    for order in &tr.thread_order {
        for w in order.windows(2) {
            edges.push(HbEdge {
                from: w[0],
                to: w[1],
                kind: EdgeKind::Po,
            });
        }
    }
    for stores in tr.store_order.values() {
        for w in stores.windows(2) {
            edges.push(HbEdge {
                from: w[0],
                to: w[1],
                kind: EdgeKind::St,
            });
        }
    }
    for (&load, &store) in &tr.src {
        edges.push(HbEdge {
            from: store,
            to: load,
            kind: EdgeKind::Src,
        });
    }
    // Conflict edges: a load conflicts with every store to its address that
    // overwrites the value it read. Reads of the initial value conflict with
    // all stores to the address (a virtual initial store precedes them all).
    for (n, a) in tr.nodes.iter().enumerate() {
        let n = n as u32;
        if let ActionKind::Load { addr, .. } = a.kind {
            let Some(stores) = tr.store_order.get(&addr) else {
                continue;
            };
            let from_pos = match tr.src.get(&n) {
                Some(&s) => stores.iter().position(|&x| x == s).map(|p| p + 1).unwrap_or(0),
                None => 0,
            };
            for &overwriter in &stores[from_pos..] {
                edges.push(HbEdge {
                    from: n,
                    to: overwriter,
                    kind: EdgeKind::Cf,
                });
            }
        }
    }
    edges
}

fn adjacency(n: usize, edges: &[HbEdge]) -> Vec<Vec<u32>> {
    let mut adj = vec![Vec::new(); n];
    for e in edges {
        adj[e.from as usize].push(e.to);
    }
    adj
}

fn has_cycle(n: usize, adj: &[Vec<u32>]) -> bool {
    // Iterative three-colour DFS.
    let mut colour = vec![0u8; n];
    for start in 0..n {
        if colour[start] != 0 {
            continue;
        }
        let mut stack: Vec<(u32, usize)> = vec![(start as u32, 0)];
        colour[start] = 1;
        while let Some(&mut (at, ref mut next)) = stack.last_mut() {
            if *next < adj[at as usize].len() {
                let to = adj[at as usize][*next];
                *next += 1;
                match colour[to as usize] {
                    0 => {
                        colour[to as usize] = 1;
                        stack.push((to, 0));
                    }
                    1 => return true,
                    _ => {}
                }
            } else {
                colour[at as usize] = 2;
                stack.pop();
            }
        }
    }
    false
}

/// A trace is realizable under SC iff its happens-before relation is acyclic.
pub fn is_sc_feasible(tr: &Trace) -> bool {
    let edges = happens_before(tr);
    !has_cycle(tr.nodes.len(), &adjacency(tr.nodes.len(), &edges))
}

/// Nodes reachable from `from` by one or more happens-before edges.
pub fn hb_reachable(tr: &Trace, from: u32) -> Vec<bool> {
    let edges = happens_before(tr);
    let adj = adjacency(tr.nodes.len(), &edges);
    let mut seen = vec![false; tr.nodes.len()];
    let mut stack: Vec<u32> = adj[from as usize].clone();
    while let Some(n) = stack.pop() {
        if !seen[n as usize] {
            seen[n as usize] = true;
            stack.extend_from_slice(&adj[n as usize]);
        }
    }
    seen
}

/// Finds one happens-before cycle, as its edge list, if any exists.
pub fn find_hb_cycle(tr: &Trace) -> Option<Vec<HbEdge>> {
    let edges = happens_before(tr);
    let n = tr.nodes.len();
    let adj: Vec<Vec<(u32, HbEdge)>> = {
        let mut a = vec![Vec::new(); n];
        for e in &edges {
            a[e.from as usize].push((e.to, *e));
        }
        a
    };
    let mut colour = vec![0u8; n];
    let mut parent: Vec<Option<HbEdge>> = vec![None; n];
    for start in 0..n {
        if colour[start] != 0 {
            continue;
        }
        let mut stack: Vec<(u32, usize)> = vec![(start as u32, 0)];
        colour[start] = 1;
        while let Some(&mut (at, ref mut next)) = stack.last_mut() {
            if *next < adj[at as usize].len() {
                let (to, edge) = adj[at as usize][*next];
                *next += 1;
                match colour[to as usize] {
                    0 => {
                        colour[to as usize] = 1;
                        parent[to as usize] = Some(edge);
                        stack.push((to, 0));
                    }
                    1 => {
                        // Close the cycle: walk parents from `at` back to `to`.
                        let mut cycle = vec![edge];
                        let mut cur = at;
                        while cur != to {
                            let e = parent[cur as usize].expect("on stack");
                            cycle.push(e);
                            cur = e.from;
                        }
                        cycle.reverse();
                        return Some(cycle);
                    }
                    _ => {}
                }
            } else {
                colour[at as usize] = 2;
                stack.pop();
            }
        }
    }
    None
}

/// Canonical text form of a trace: nodes sorted by (thread, program-order
/// position), then sorted typed edges. Two traces are isomorphic iff their
/// canonical forms are equal.
pub fn canonical_trace(tr: &Trace) -> String {
    use std::fmt::Write;
    let n = tr.nodes.len();
    let mut rank = vec![u32::MAX; n];
    let mut ordered: Vec<u32> = Vec::with_capacity(n);
    let mut threads: Vec<usize> = (0..tr.thread_order.len()).collect();
    threads.sort();
    for t in threads {
        for &node in &tr.thread_order[t] {
            rank[node as usize] = ordered.len() as u32;
            ordered.push(node);
        }
    }
    let mut out = String::new();
    for &node in &ordered {
        let a = tr.nodes[node as usize];
        match a.kind {
            ActionKind::Issue => {
                let _ = writeln!(out, "n t{} isu", a.thread);
            }
            ActionKind::Local => {
                let _ = writeln!(out, "n t{} loc", a.thread);
            }
            ActionKind::Load { addr, val } => {
                let _ = writeln!(out, "n t{} ld {addr} {val}", a.thread);
            }
            ActionKind::Store { addr, val } => {
                let _ = writeln!(out, "n t{} st {addr} {val}", a.thread);
            }
        }
    }
    let mut edges: Vec<(EdgeKind, u32, u32)> = happens_before(tr)
        .into_iter()
        .map(|e| (e.kind, rank[e.from as usize], rank[e.to as usize]))
        .collect();
    edges.sort();
    edges.dedup();
    for (kind, from, to) in edges {
        let _ = writeln!(out, "e {} {from} {to}", kind.name());
    }
    out
}

/// Trace export for debugging reports: a node list followed by a typed edge
/// list.
pub fn trace_to_text(tr: &Trace) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    for (i, a) in tr.nodes.iter().enumerate() {
        match a.kind {
            ActionKind::Issue => {
                let _ = writeln!(out, "node {i} t{} isu", a.thread);
            }
            ActionKind::Local => {
                let _ = writeln!(out, "node {i} t{} loc", a.thread);
            }
            ActionKind::Load { addr, val } => {
                let _ = writeln!(out, "node {i} t{} ld {addr} {val}", a.thread);
            }
            ActionKind::Store { addr, val } => {
                let _ = writeln!(out, "node {i} t{} st {addr} {val}", a.thread);
            }
        }
    }
    let mut edges = happens_before(tr);
    edges.sort_by_key(|e| (e.kind, e.from, e.to));
    edges.dedup();
    for e in edges {
        let _ = writeln!(out, "edge {} {} {}", e.kind.name(), e.from, e.to);
    }
    out
}

/// Verdict of the bounded enumeration oracle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OracleVerdict {
    /// No enumerated computation within the bounds has a cyclic trace.
    RobustWithinBound,
    /// A violating computation with the smallest delay count found.
    Violating {
        computation: Computation,
        delays: u64,
        per_thread_delays: Vec<u64>,
    },
}

impl OracleVerdict {
    pub fn is_violating(&self) -> bool {
        matches!(self, OracleVerdict::Violating { .. })
    }
}

/// Brute-force robustness check: enumerates every TSO computation within the
/// bounds and tests its trace for a happens-before cycle. Returns a
/// violating computation with the minimal delay count (ties resolved by
/// enumeration order), or reports the program robust within the bounds.
pub fn oracle_check(p: &ExecProgram, bounds: TsoBounds) -> OracleVerdict {
    let threads = p.threads.len();
    let mut best: Option<(u64, Computation, DelayInfo)> = None;
    for_each_tso_computation(p, bounds, &mut |actions| {
        let comp = Computation {
            kind: CompKind::Tso,
            actions: actions.to_vec(),
        };
        let tr = trace_of(&comp).expect("enumerated computations are well formed");
        if !is_sc_feasible(&tr) {
            let delays = count_delays(threads, actions);
            if best.as_ref().map_or(true, |(d, _, _)| delays.total < *d) {
                best = Some((delays.total, comp, delays));
            }
        }
        true
    });
    match best {
        Some((total, computation, info)) => OracleVerdict::Violating {
            computation,
            delays: total,
            per_thread_delays: info.per_thread,
        },
        None => OracleVerdict::RobustWithinBound,
    }
}
