//! Source-to-source instrumentation: compiles an attack into a program whose
//! SC reachability answers whether the attack has a TSO witness.
//!
//! The instrumented program runs over an extended address space laid out on
//! top of the base domain `{0..N-1}`:
//!
//! * `N + a`  — the delay copy `d(a)`: the youngest buffered store of the
//!   attacker to `a`, stored as the tagged value `N + v` (nonzero, so zero
//!   means "nothing buffered");
//! * `2N + a` — the access tag `hb(a)`: 0 = untouched, 1 = loaded,
//!   2 = stored, tracking accesses that extend the happens-before path;
//! * `3N`     — the `HB` flag: set when the attack's load happens, freezing
//!   helper threads out of their original code;
//! * `3N + 1` — `AST`: the address used by the attack's store;
//! * `3N + 2` — `SUC`: the success flag, the goal of the reachability query;
//! * `3N + 3` — `ELECT`: attacker election flag (thread-replicated programs
//!   only).
//!
//! The attacker thread simulates its own store buffer in the delay copies:
//! stores go to `d(a)`, loads prefer a tagged buffered value and fall back
//! to memory. Helper threads run their original code until `HB` rises, then
//! may enter a code copy, but only through an access that provably extends
//! the happens-before path from the attack's load; inside the copy they
//! maintain the access tags and can raise `SUC` once the attack store's
//! address has been touched, closing the happens-before cycle.
//!
//! Expression arithmetic wraps at the program's domain size, so every
//! expression copied from the base program is rewritten node-by-node with a
//! `% N` reduction. The extended domain is padded to a multiple of `N`,
//! which makes reduction modulo `N` a ring homomorphism — copied expressions
//! evaluate exactly as they did in the base program.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::ast::{BinOp, Expr, Instruction, Label, LabeledInstruction, Program, Thread};
use crate::attack::Attack;
use crate::exec::ExecProgram;
use crate::semantics::ScState;

/// Access levels stored in the `hb(a)` tags.
pub const ACCESS_NONE: u64 = 0;
pub const ACCESS_LOAD: u64 = 1;
pub const ACCESS_STORE: u64 = 2;

/// Numeric layout of the extended address space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AddressEncoding {
    /// Domain size of the base program.
    pub base: u64,
    /// Domain size of the instrumented program: the least multiple of
    /// `base` covering all auxiliary cells.
    pub domain: u64,
}

impl AddressEncoding {
    /// Encoding for a plain (non-replicated) instrumentation: cells up to
    /// `SUC`.
    pub fn new(base: u64) -> Self {
        Self::with_cells(base, 3 * base + 3)
    }

    /// Encoding with an election flag for thread-replicated programs.
    pub fn with_election(base: u64) -> Self {
        Self::with_cells(base, 3 * base + 4)
    }

    fn with_cells(base: u64, cells: u64) -> Self {
        let domain = cells.div_ceil(base) * base;
        AddressEncoding { base, domain }
    }

    pub fn delay_addr(&self, a: u64) -> u64 {
        self.base + a
    }

    pub fn hb_addr(&self, a: u64) -> u64 {
        2 * self.base + a
    }

    pub fn hb_flag(&self) -> u64 {
        3 * self.base
    }

    pub fn attack_store_cell(&self) -> u64 {
        3 * self.base + 1
    }

    pub fn success_cell(&self) -> u64 {
        3 * self.base + 2
    }

    pub fn election_cell(&self) -> u64 {
        3 * self.base + 3
    }

    pub fn is_delay_addr(&self, a: u64) -> bool {
        a >= self.base && a < 2 * self.base
    }

    /// Strips the delay tag from a value (`N + v` ↦ `v`).
    pub fn untag_value(&self, v: u64) -> u64 {
        v - self.base
    }

    /// Rewrites a base-program expression for the extended domain: every
    /// wrapping arithmetic node is reduced modulo the base domain.
    pub fn wrap(&self, e: &Expr) -> Expr {
        match e {
            Expr::Const(c) => Expr::Const(*c),
            Expr::Reg(r) => Expr::Reg(r.clone()),
            Expr::Not(x) => Expr::Not(Box::new(self.wrap(x))),
            Expr::Mem(x) => Expr::Mem(Box::new(self.wrap(x))),
            Expr::Bin(op, a, b) => {
                let inner = Expr::bin(*op, self.wrap(a), self.wrap(b));
                match op {
                    BinOp::Add | BinOp::Sub | BinOp::Mul => {
                        Expr::bin(BinOp::Mod, inner, Expr::Const(self.base))
                    }
                    _ => inner,
                }
            }
        }
    }

    /// `d(e)`: the delay copy of a (wrapped) address or value expression.
    pub fn delay_of(&self, wrapped: Expr) -> Expr {
        Expr::bin(BinOp::Add, Expr::Const(self.base), wrapped)
    }

    /// `hb(e)`: the access tag of a (wrapped) address expression.
    pub fn hb_of(&self, wrapped: Expr) -> Expr {
        Expr::bin(BinOp::Add, Expr::Const(2 * self.base), wrapped)
    }
}

/// Provenance of one instrumented instruction, for witness reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Original instruction running outside the attack window.
    Original { inst: usize },
    /// The attack store entering the simulated buffer (issue of `stinst`).
    AttackStoreIssue { inst: usize },
    /// The final step of the instrumented attack load; plays the
    /// overstepped load itself.
    AttackLoadMark { inst: usize },
    /// An attacker code-copy store: another delayed store's issue.
    CopyStoreIssue { inst: usize },
    /// An instruction that replays as its original counterpart inside the
    /// attack window (attacker copy loads/locals, helper entries and
    /// copies).
    CopyExec { inst: usize },
    /// Bookkeeping with no counterpart in the original program.
    Glue,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum InstrumentError {
    #[error("attack store index {0} is not a store instruction")]
    NotAStore(usize),
    #[error("attack load index {0} is not a load instruction")]
    NotALoad(usize),
}

/// An attack compiled to an SC reachability query.
#[derive(Debug, Clone)]
pub struct InstrumentedProgram {
    pub program: Program,
    pub attack: Attack,
    pub encoding: AddressEncoding,
    /// Per instrumented thread, per instruction: where it came from.
    pub roles: Vec<Vec<Role>>,
}

impl InstrumentedProgram {
    pub fn success_addr(&self) -> u64 {
        self.encoding.success_cell()
    }

    /// The goal predicate of the reachability query.
    pub fn is_goal(&self, s: &ScState) -> bool {
        s.mem[self.encoding.success_cell() as usize] == 1
    }
}

/// Fresh-name helper over a set of taken label names.
struct LabelGen {
    taken: BTreeSet<String>,
    counter: usize,
}

impl LabelGen {
    fn new(thread: &Thread) -> Self {
        let taken = thread
            .labels()
            .into_iter()
            .map(|l| l.0)
            .collect::<BTreeSet<_>>();
        LabelGen { taken, counter: 0 }
    }

    fn claim(&mut self, candidate: String) -> Label {
        let mut name = candidate;
        while self.taken.contains(&name) {
            name.push('_');
        }
        self.taken.insert(name.clone());
        Label(name)
    }

    fn fresh(&mut self) -> Label {
        self.counter += 1;
        self.claim(format!("x{}", self.counter))
    }
}

/// Copy-label map for one thread, claimed up front so that references and
/// definitions agree.
struct CopyLabels {
    pairs: Vec<(Label, Label)>,
}

impl CopyLabels {
    fn build(thread: &Thread, gen: &mut LabelGen, suffix: &str) -> CopyLabels {
        let mut pairs: Vec<(Label, Label)> = Vec::new();
        let mut seen = BTreeSet::new();
        let mut add = |l: &Label, gen: &mut LabelGen, pairs: &mut Vec<(Label, Label)>| {
            if seen.insert(l.clone()) {
                let copy = gen.claim(format!("{}{}", l.0, suffix));
                pairs.push((l.clone(), copy));
            }
        };
        add(&thread.init, gen, &mut pairs);
        for li in &thread.instructions {
            add(&li.src, gen, &mut pairs);
            add(&li.dst, gen, &mut pairs);
        }
        CopyLabels { pairs }
    }

    fn get(&self, l: &Label) -> &Label {
        &self
            .pairs
            .iter()
            .find(|(orig, _)| orig == l)
            .expect("label collected")
            .1
    }

    /// Original labels in first-occurrence order.
    fn originals(&self) -> impl Iterator<Item = &Label> {
        self.pairs.iter().map(|(o, _)| o)
    }
}

fn wrap_instruction(enc: &AddressEncoding, inst: &Instruction) -> Instruction {
    match inst {
        Instruction::Load { reg, addr } => Instruction::Load {
            reg: reg.clone(),
            addr: enc.wrap(addr),
        },
        Instruction::Store { addr, value } => Instruction::Store {
            addr: enc.wrap(addr),
            value: enc.wrap(value),
        },
        Instruction::Mfence => Instruction::Mfence,
        Instruction::Assign { reg, expr } => Instruction::Assign {
            reg: reg.clone(),
            expr: enc.wrap(expr),
        },
        Instruction::Assert { cond } => Instruction::Assert {
            cond: enc.wrap(cond),
        },
        Instruction::Cas {
            addr,
            expect,
            new,
            result,
        } => Instruction::Cas {
            addr: enc.wrap(addr),
            expect: enc.wrap(expect),
            new: enc.wrap(new),
            result: result.clone(),
        },
    }
}

fn assert_eq0(e: Expr) -> Instruction {
    Instruction::Assert {
        cond: Expr::bin(BinOp::Eq, e, Expr::Const(0)),
    }
}

fn assert_ne0(e: Expr) -> Instruction {
    Instruction::Assert {
        cond: Expr::bin(BinOp::Ne, e, Expr::Const(0)),
    }
}

/// `mem[hb(x)] + (mem[hb(x)] == 0)`: the current access tag raised to at
/// least "loaded", computed in one atomic store so tags never decrease.
fn raise_to_load(hb_addr: Expr) -> Expr {
    let read = Expr::mem(hb_addr);
    Expr::bin(
        BinOp::Add,
        read.clone(),
        Expr::bin(BinOp::Eq, read, Expr::Const(0)),
    )
}

/// Instruction emitter for one instrumented thread.
struct Emitter<'a> {
    enc: &'a AddressEncoding,
    thread: &'a Thread,
    gen: LabelGen,
    out: Vec<LabeledInstruction>,
    roles: Vec<Role>,
}

impl<'a> Emitter<'a> {
    fn new(enc: &'a AddressEncoding, thread: &'a Thread) -> Self {
        Emitter {
            enc,
            thread,
            gen: LabelGen::new(thread),
            out: Vec::new(),
            roles: Vec::new(),
        }
    }

    fn push(&mut self, src: Label, inst: Instruction, dst: Label, role: Role) {
        self.out.push(LabeledInstruction { src, inst, dst });
        self.roles.push(role);
    }

    /// Original code, verbatim up to expression wrapping.
    fn originals_plain(&mut self) {
        for (idx, li) in self.thread.instructions.iter().enumerate() {
            self.push(
                li.src.clone(),
                wrap_instruction(self.enc, &li.inst),
                li.dst.clone(),
                Role::Original { inst: idx },
            );
        }
    }

    /// Original code, each instruction gated on the HB flag still clear.
    fn originals_guarded(&mut self) {
        for (idx, li) in self.thread.instructions.iter().enumerate() {
            let gate = self.gen.fresh();
            self.push(
                li.src.clone(),
                assert_eq0(Expr::mem(Expr::Const(self.enc.hb_flag()))),
                gate.clone(),
                Role::Glue,
            );
            self.push(
                gate,
                wrap_instruction(self.enc, &li.inst),
                li.dst.clone(),
                Role::Original { inst: idx },
            );
        }
    }

    /// The attack entry: the store diverted into its delay copy, recording
    /// its address. With `election`, entry first wins a locked flag, so at
    /// most one replica attacks.
    fn attacker_entry(
        &mut self,
        copies: &CopyLabels,
        attack: &Attack,
        election: Option<&str>,
    ) -> Result<(), InstrumentError> {
        let enc = self.enc;
        let st = &self.thread.instructions[attack.store_inst];
        let Instruction::Store { addr, value } = &st.inst else {
            return Err(InstrumentError::NotAStore(attack.store_inst));
        };
        let mut entry_src = st.src.clone();
        if let Some(scratch) = election {
            let won = self.gen.fresh();
            let go = self.gen.fresh();
            self.push(
                entry_src,
                Instruction::Cas {
                    addr: Expr::Const(enc.election_cell()),
                    expect: Expr::Const(0),
                    new: Expr::Const(1),
                    result: scratch.to_string(),
                },
                won.clone(),
                Role::Glue,
            );
            self.push(
                won,
                assert_ne0(Expr::reg(scratch)),
                go.clone(),
                Role::Glue,
            );
            entry_src = go;
        }
        let mid = self.gen.fresh();
        self.push(
            entry_src,
            Instruction::Store {
                addr: enc.delay_of(enc.wrap(addr)),
                value: enc.delay_of(enc.wrap(value)),
            },
            mid.clone(),
            Role::AttackStoreIssue {
                inst: attack.store_inst,
            },
        );
        self.push(
            mid,
            Instruction::Store {
                addr: Expr::Const(enc.attack_store_cell()),
                value: enc.wrap(addr),
            },
            copies.get(&st.dst).clone(),
            Role::Glue,
        );

        // The attack load: guard against an early read, raise HB, tag the
        // address as loaded and halt.
        let ld = &self.thread.instructions[attack.load_inst];
        let Instruction::Load { addr: ld_addr, .. } = &ld.inst else {
            return Err(InstrumentError::NotALoad(attack.load_inst));
        };
        let g1 = self.gen.fresh();
        let g2 = self.gen.fresh();
        let halt = self.gen.claim("halt".to_string());
        self.push(
            copies.get(&ld.src).clone(),
            assert_eq0(Expr::mem(enc.delay_of(enc.wrap(ld_addr)))),
            g1.clone(),
            Role::Glue,
        );
        self.push(
            g1,
            Instruction::Store {
                addr: Expr::Const(enc.hb_flag()),
                value: Expr::Const(1),
            },
            g2.clone(),
            Role::Glue,
        );
        self.push(
            g2,
            Instruction::Store {
                addr: enc.hb_of(enc.wrap(ld_addr)),
                value: Expr::Const(ACCESS_LOAD),
            },
            halt,
            Role::AttackLoadMark {
                inst: attack.load_inst,
            },
        );
        Ok(())
    }

    /// The attacker's code copy: stores feed the delay copies, loads prefer
    /// a buffered value, fences and locked instructions disappear (they
    /// could not execute with a nonempty buffer).
    fn attacker_copy(&mut self, copies: &CopyLabels) {
        let enc = self.enc;
        for (idx, li) in self.thread.instructions.iter().enumerate() {
            let src = copies.get(&li.src).clone();
            let dst = copies.get(&li.dst).clone();
            match &li.inst {
                Instruction::Store { addr, value } => {
                    self.push(
                        src,
                        Instruction::Store {
                            addr: enc.delay_of(enc.wrap(addr)),
                            value: enc.delay_of(enc.wrap(value)),
                        },
                        dst,
                        Role::CopyStoreIssue { inst: idx },
                    );
                }
                Instruction::Load { reg, addr } => {
                    let dcopy = Expr::mem(enc.delay_of(enc.wrap(addr)));
                    let from_memory = self.gen.fresh();
                    self.push(
                        src.clone(),
                        assert_eq0(dcopy.clone()),
                        from_memory.clone(),
                        Role::Glue,
                    );
                    self.push(
                        from_memory,
                        Instruction::Load {
                            reg: reg.clone(),
                            addr: enc.wrap(addr),
                        },
                        dst.clone(),
                        Role::CopyExec { inst: idx },
                    );
                    let from_buffer = self.gen.fresh();
                    self.push(src, assert_ne0(dcopy.clone()), from_buffer.clone(), Role::Glue);
                    // Untag the buffered value into the register.
                    self.push(
                        from_buffer,
                        Instruction::Assign {
                            reg: reg.clone(),
                            expr: Expr::bin(BinOp::Sub, dcopy, Expr::Const(enc.base)),
                        },
                        dst,
                        Role::CopyExec { inst: idx },
                    );
                }
                Instruction::Assign { .. } | Instruction::Assert { .. } => {
                    self.push(
                        src,
                        wrap_instruction(enc, &li.inst),
                        dst,
                        Role::CopyExec { inst: idx },
                    );
                }
                Instruction::Mfence | Instruction::Cas { .. } => {}
            }
        }
    }

    /// Helper copy entries: a load needs its address tagged as stored, a
    /// store needs at least a load tag (and then raises it), a locked
    /// operation is treated as the load case.
    fn helper_entries(&mut self, copies: &CopyLabels) {
        let enc = self.enc;
        for (idx, li) in self.thread.instructions.iter().enumerate() {
            match &li.inst {
                Instruction::Load { reg, addr } => {
                    let gate = self.gen.fresh();
                    self.push(
                        li.src.clone(),
                        Instruction::Assert {
                            cond: Expr::bin(
                                BinOp::Eq,
                                Expr::mem(enc.hb_of(enc.wrap(addr))),
                                Expr::Const(ACCESS_STORE),
                            ),
                        },
                        gate.clone(),
                        Role::Glue,
                    );
                    self.push(
                        gate,
                        Instruction::Load {
                            reg: reg.clone(),
                            addr: enc.wrap(addr),
                        },
                        copies.get(&li.dst).clone(),
                        Role::CopyExec { inst: idx },
                    );
                }
                Instruction::Store { addr, value } => {
                    let gate = self.gen.fresh();
                    let done = self.gen.fresh();
                    self.push(
                        li.src.clone(),
                        Instruction::Assert {
                            cond: Expr::bin(
                                BinOp::Le,
                                Expr::Const(ACCESS_LOAD),
                                Expr::mem(enc.hb_of(enc.wrap(addr))),
                            ),
                        },
                        gate.clone(),
                        Role::Glue,
                    );
                    self.push(
                        gate,
                        Instruction::Store {
                            addr: enc.wrap(addr),
                            value: enc.wrap(value),
                        },
                        done.clone(),
                        Role::CopyExec { inst: idx },
                    );
                    self.push(
                        done,
                        Instruction::Store {
                            addr: enc.hb_of(enc.wrap(addr)),
                            value: Expr::Const(ACCESS_STORE),
                        },
                        copies.get(&li.dst).clone(),
                        Role::Glue,
                    );
                }
                Instruction::Cas { addr, .. } => {
                    // A locked operation always loads; entry needs the
                    // strongest justification (a prior store to the
                    // address).
                    let gate = self.gen.fresh();
                    self.push(
                        li.src.clone(),
                        Instruction::Assert {
                            cond: Expr::bin(
                                BinOp::Eq,
                                Expr::mem(enc.hb_of(enc.wrap(addr))),
                                Expr::Const(ACCESS_STORE),
                            ),
                        },
                        gate.clone(),
                        Role::Glue,
                    );
                    self.push(
                        gate,
                        wrap_instruction(enc, &li.inst),
                        copies.get(&li.dst).clone(),
                        Role::CopyExec { inst: idx },
                    );
                }
                _ => {}
            }
        }
    }

    /// Helper code copy: loads and stores keep the access tags up to date.
    /// Stores in one atomic step, loads via an address snapshot in the
    /// scratch register.
    fn helper_copy(&mut self, copies: &CopyLabels, scratch: &str) {
        let enc = self.enc;
        for (idx, li) in self.thread.instructions.iter().enumerate() {
            let src = copies.get(&li.src).clone();
            let dst = copies.get(&li.dst).clone();
            match &li.inst {
                Instruction::Assign { .. } | Instruction::Assert { .. } | Instruction::Mfence => {
                    self.push(
                        src,
                        wrap_instruction(enc, &li.inst),
                        dst,
                        Role::CopyExec { inst: idx },
                    );
                }
                Instruction::Store { addr, value } => {
                    let done = self.gen.fresh();
                    self.push(
                        src,
                        Instruction::Store {
                            addr: enc.wrap(addr),
                            value: enc.wrap(value),
                        },
                        done.clone(),
                        Role::CopyExec { inst: idx },
                    );
                    self.push(
                        done,
                        Instruction::Store {
                            addr: enc.hb_of(enc.wrap(addr)),
                            value: Expr::Const(ACCESS_STORE),
                        },
                        dst,
                        Role::Glue,
                    );
                }
                Instruction::Load { reg, addr } => {
                    let snapped = self.gen.fresh();
                    let loaded = self.gen.fresh();
                    self.push(
                        src,
                        Instruction::Assign {
                            reg: scratch.to_string(),
                            expr: enc.wrap(addr),
                        },
                        snapped.clone(),
                        Role::Glue,
                    );
                    self.push(
                        snapped,
                        Instruction::Load {
                            reg: reg.clone(),
                            addr: Expr::reg(scratch),
                        },
                        loaded.clone(),
                        Role::CopyExec { inst: idx },
                    );
                    let hb_cell = enc.hb_of(Expr::reg(scratch));
                    self.push(
                        loaded,
                        Instruction::Store {
                            addr: hb_cell.clone(),
                            value: raise_to_load(hb_cell),
                        },
                        dst,
                        Role::Glue,
                    );
                }
                Instruction::Cas {
                    addr,
                    expect,
                    new,
                    result,
                } => {
                    let snapped = self.gen.fresh();
                    let done = self.gen.fresh();
                    self.push(
                        src,
                        Instruction::Assign {
                            reg: scratch.to_string(),
                            expr: enc.wrap(addr),
                        },
                        snapped.clone(),
                        Role::Glue,
                    );
                    self.push(
                        snapped,
                        Instruction::Cas {
                            addr: Expr::reg(scratch),
                            expect: enc.wrap(expect),
                            new: enc.wrap(new),
                            result: result.clone(),
                        },
                        done.clone(),
                        Role::CopyExec { inst: idx },
                    );
                    let hb_cell = enc.hb_of(Expr::reg(scratch));
                    self.push(
                        done,
                        Instruction::Store {
                            addr: hb_cell.clone(),
                            value: raise_to_load(hb_cell),
                        },
                        dst,
                        Role::Glue,
                    );
                }
            }
        }
    }

    /// At every copy label: fetch the attack store's address, and raise the
    /// success flag if its tag shows an access on the happens-before path.
    fn success_checks(&mut self, copies: &CopyLabels, scratch: &str) {
        let enc = self.enc;
        for orig in copies.originals().cloned().collect::<Vec<_>>() {
            let s1 = self.gen.fresh();
            let s2 = self.gen.fresh();
            let s3 = self.gen.fresh();
            let end = self.gen.fresh();
            self.push(
                copies.get(&orig).clone(),
                Instruction::Load {
                    reg: scratch.to_string(),
                    addr: Expr::Const(enc.attack_store_cell()),
                },
                s1.clone(),
                Role::Glue,
            );
            self.push(
                s1,
                Instruction::Load {
                    reg: scratch.to_string(),
                    addr: enc.hb_of(Expr::reg(scratch)),
                },
                s2.clone(),
                Role::Glue,
            );
            self.push(s2, assert_ne0(Expr::reg(scratch)), s3.clone(), Role::Glue);
            self.push(
                s3,
                Instruction::Store {
                    addr: Expr::Const(enc.success_cell()),
                    value: Expr::Const(1),
                },
                end,
                Role::Glue,
            );
        }
    }

    fn finish(self, registers: Vec<String>) -> (Thread, Vec<Role>) {
        (
            Thread {
                id: self.thread.id.clone(),
                registers,
                init: self.thread.init.clone(),
                instructions: self.out,
            },
            self.roles,
        )
    }
}

fn fresh_register(thread: &Thread) -> String {
    let mut name = "rt".to_string();
    while thread.registers.iter().any(|r| *r == name) {
        name.push('_');
    }
    name
}

/// Instruments the attacker thread: original code, attack entry, attack
/// load, and the delayed-store code copy.
pub fn instrument_attacker(
    enc: &AddressEncoding,
    thread: &Thread,
    attack: &Attack,
) -> Result<(Thread, Vec<Role>), InstrumentError> {
    let mut e = Emitter::new(enc, thread);
    let copies = CopyLabels::build(thread, &mut e.gen, "_c");
    e.originals_plain();
    e.attacker_entry(&copies, attack, None)?;
    e.attacker_copy(&copies);
    Ok(e.finish(thread.registers.clone()))
}

/// Instruments a helper thread: gated originals, copy entries, the
/// tag-maintaining code copy, and success checks at every copy label.
pub fn instrument_helper(enc: &AddressEncoding, thread: &Thread) -> (Thread, Vec<Role>) {
    let mut e = Emitter::new(enc, thread);
    let copies = CopyLabels::build(thread, &mut e.gen, "_c");
    let scratch = fresh_register(thread);
    e.originals_guarded();
    e.helper_entries(&copies);
    e.helper_copy(&copies, &scratch);
    e.success_checks(&copies, &scratch);
    let mut registers = vec![scratch];
    registers.extend(thread.registers.iter().cloned());
    e.finish(registers)
}

/// Instruments a thread template that may both help and attack: the full
/// helper instrumentation plus an election-guarded attack entry and a
/// separate attacker code copy. Exactly one replica can win the election
/// and delay stores; the others behave as helpers.
pub fn instrument_template(
    enc: &AddressEncoding,
    thread: &Thread,
    attack: &Attack,
) -> Result<(Thread, Vec<Role>), InstrumentError> {
    let mut e = Emitter::new(enc, thread);
    let helper_copies = CopyLabels::build(thread, &mut e.gen, "_c");
    let attacker_copies = CopyLabels::build(thread, &mut e.gen, "_a");
    let scratch = fresh_register(thread);
    e.originals_guarded();
    e.helper_entries(&helper_copies);
    e.helper_copy(&helper_copies, &scratch);
    e.success_checks(&helper_copies, &scratch);
    e.attacker_entry(&attacker_copies, attack, Some(&scratch))?;
    e.attacker_copy(&attacker_copies);
    let mut registers = vec![scratch];
    registers.extend(thread.registers.iter().cloned());
    Ok(e.finish(registers))
}

/// Builds the instrumented program for an attack: the attacker thread gets
/// the attack instrumentation, every other thread the helper
/// instrumentation. Reaching a state with the success flag set is
/// equivalent to the attack having a TSO witness.
pub fn instrument(p: &Program, a: &Attack) -> Result<InstrumentedProgram, InstrumentError> {
    let enc = AddressEncoding::new(p.domain_size);
    let mut threads = Vec::with_capacity(p.threads.len());
    let mut roles = Vec::with_capacity(p.threads.len());
    for (ti, t) in p.threads.iter().enumerate() {
        let (thread, role) = if ti == a.attacker {
            instrument_attacker(&enc, t, a)?
        } else {
            instrument_helper(&enc, t)
        };
        threads.push(thread);
        roles.push(role);
    }
    let program = Program {
        name: format!(
            "{}_q_{}_{}_{}",
            p.name,
            a.attacker_id(p),
            a.store_label(p),
            a.load_label(p)
        ),
        domain_size: enc.domain,
        base_domain: Some(enc.base),
        threads,
    };
    debug_assert!(program.validate().is_ok(), "{:?}", program.validate());
    Ok(InstrumentedProgram {
        program,
        attack: *a,
        encoding: enc,
        roles,
    })
}

/// Instruments a thread-replicated (parameterized) program for an attack:
/// every template is helper-instrumented, and the attacked template
/// additionally carries the election-guarded attacker sections. Goal:
/// success flag raised in some instance.
pub fn instrument_parameterized(
    p: &Program,
    a: &Attack,
) -> Result<InstrumentedProgram, InstrumentError> {
    let enc = AddressEncoding::with_election(p.domain_size);
    let mut threads = Vec::with_capacity(p.threads.len());
    let mut roles = Vec::with_capacity(p.threads.len());
    for (ti, t) in p.threads.iter().enumerate() {
        let (thread, role) = if ti == a.attacker {
            instrument_template(&enc, t, a)?
        } else {
            instrument_helper(&enc, t)
        };
        threads.push(thread);
        roles.push(role);
    }
    let program = Program {
        name: format!(
            "{}_pq_{}_{}_{}",
            p.name,
            a.attacker_id(p),
            a.store_label(p),
            a.load_label(p)
        ),
        domain_size: enc.domain,
        base_domain: Some(enc.base),
        threads,
    };
    debug_assert!(program.validate().is_ok(), "{:?}", program.validate());
    Ok(InstrumentedProgram {
        program,
        attack: *a,
        encoding: enc,
        roles,
    })
}

/// Convenience: the goal closure for the SC search on an instrumented
/// program.
pub fn goal_of(ip: &InstrumentedProgram) -> impl Fn(&ExecProgram, &ScState) -> bool {
    let cell = ip.encoding.success_cell() as usize;
    move |_, s: &ScState| s.mem[cell] == 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::enumerate_attacks;
    use crate::exec::ExecProgram;
    use crate::parser::parse_program;
    use crate::semantics::{sc_reachable, Reachability};

    fn dekker() -> Program {
        parse_program(crate::corpus::DEKKER).unwrap()
    }

    #[test]
    fn encoding_layout_matches_contract() {
        let enc = AddressEncoding::new(2);
        assert_eq!(enc.delay_addr(0), 2);
        assert_eq!(enc.delay_addr(1), 3);
        assert_eq!(enc.hb_addr(0), 4);
        assert_eq!(enc.hb_flag(), 6);
        assert_eq!(enc.attack_store_cell(), 7);
        assert_eq!(enc.success_cell(), 8);
        // Padded to a multiple of the base so copied arithmetic reduces
        // exactly.
        assert_eq!(enc.domain, 10);
        assert_eq!(AddressEncoding::new(3).domain, 12);
    }

    #[test]
    fn attacker_instrumentation_has_expected_sections() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let enc = AddressEncoding::new(p.domain_size);
        let (t, roles) = instrument_attacker(&enc, &p.threads[0], &a).unwrap();
        // Originals (2) + attack store (2) + attack load (3) + copy store
        // (1) + copy load (4).
        assert_eq!(t.instructions.len(), 12);
        assert_eq!(
            roles
                .iter()
                .filter(|r| matches!(r, Role::Original { .. }))
                .count(),
            2
        );
        assert_eq!(
            roles
                .iter()
                .filter(|r| matches!(r, Role::AttackStoreIssue { .. }))
                .count(),
            1
        );
        assert_eq!(
            roles
                .iter()
                .filter(|r| matches!(r, Role::AttackLoadMark { .. }))
                .count(),
            1
        );
        assert_eq!(
            roles
                .iter()
                .filter(|r| matches!(r, Role::CopyStoreIssue { .. }))
                .count(),
            1
        );
        // The copy load contributes two executable branches.
        assert_eq!(
            roles
                .iter()
                .filter(|r| matches!(r, Role::CopyExec { .. }))
                .count(),
            2
        );
    }

    #[test]
    fn attacker_copy_drops_fences() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: mfence; goto l2;\n l2: r <- mem[1]; goto l3;\nend\n\
                    thread u regs s init m0 begin\n m0: s <- mem[0]; goto m1;\nend";
        let p = parse_program(text).unwrap();
        // Attack pairing the store with the load; the fence sits between, so
        // this attack is syntactically dead, but instrumentation must still
        // drop the fence from the copy.
        let a = enumerate_attacks(&p)[0];
        let enc = AddressEncoding::new(p.domain_size);
        let (t, _) = instrument_attacker(&enc, &p.threads[0], &a).unwrap();
        let copy_fences = t
            .instructions
            .iter()
            .filter(|li| li.inst == Instruction::Mfence)
            .count();
        // Only the original fence remains.
        assert_eq!(copy_fences, 1);
    }

    #[test]
    fn helper_instrumentation_sections_and_registers() {
        let p = dekker();
        let enc = AddressEncoding::new(p.domain_size);
        let (t, roles) = instrument_helper(&enc, &p.threads[1]);
        // Originals 2×2 + entries (store 3 + load 2) + copies (store 2 +
        // load 3) + success checks 4 per label (3 labels).
        assert_eq!(t.instructions.len(), 4 + 5 + 5 + 12);
        assert_eq!(roles.len(), t.instructions.len());
        assert!(t.registers[0].starts_with("rt"));
        // Store entry guard requires at least load access on the address.
        let guard = t
            .instructions
            .iter()
            .find(|li| {
                matches!(&li.inst, Instruction::Assert { cond: Expr::Bin(BinOp::Le, a, _) }
                    if **a == Expr::Const(ACCESS_LOAD))
            })
            .expect("store entry guard");
        assert_eq!(guard.src, Label::new("l0'"));
    }

    #[test]
    fn instrumented_dekker_reaches_goal_under_sc() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument(&p, &a).unwrap();
        let xp = ExecProgram::compile(&ip.program);
        let goal = goal_of(&ip);
        match sc_reachable(&xp, goal, 1_000_000) {
            Reachability::Reachable { states, .. } => {
                assert!(states < 10_000, "states: {states}");
            }
            other => panic!("expected reachable, got {other:?}"),
        }
    }

    #[test]
    fn fenced_dekker_instrumentation_cannot_reach_goal() {
        let p = parse_program(crate::corpus::DEKKER_FENCED).unwrap();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument(&p, &a).unwrap();
        let xp = ExecProgram::compile(&ip.program);
        let goal = goal_of(&ip);
        assert!(matches!(
            sc_reachable(&xp, goal, 1_000_000),
            Reachability::NotReachable { .. }
        ));
    }

    #[test]
    fn single_thread_program_has_unreachable_goal() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: r <- mem[1]; goto l2;\nend";
        let p = parse_program(text).unwrap();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument(&p, &a).unwrap();
        let xp = ExecProgram::compile(&ip.program);
        let goal = goal_of(&ip);
        assert!(matches!(
            sc_reachable(&xp, goal, 1_000_000),
            Reachability::NotReachable { .. }
        ));
    }

    #[test]
    fn instrumented_program_round_trips_through_text() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument(&p, &a).unwrap();
        let text = crate::pretty::pretty(&ip.program);
        assert!(text.contains("base 2"));
        assert!(text.contains("d("));
        assert!(text.contains("hb("));
        assert!(text.contains("HB"));
        assert!(text.contains("AST"));
        assert!(text.contains("SUC"));
        let back = parse_program(&text).unwrap();
        assert_eq!(back, ip.program);
    }

    #[test]
    fn size_bound_holds_on_bundled_programs() {
        for (name, text) in crate::corpus::ALL {
            let p = parse_program(text).unwrap();
            for a in enumerate_attacks(&p) {
                let ip = match instrument(&p, &a) {
                    Ok(ip) => ip,
                    Err(_) => continue,
                };
                let bound = 7 * p.instruction_count() + 4 * p.label_count();
                let actual = ip.program.instruction_count();
                assert!(
                    actual <= bound,
                    "{name}: {actual} instructions exceeds bound {bound}"
                );
            }
        }
    }

    #[test]
    fn buffered_value_is_untagged_on_copy_load() {
        // Attacker-only snippet: store then load of the same address through
        // the copy must leave the untagged value in the register.
        let text = "program P domain 2\nthread t regs r init l0 begin\n\
                    l0: mem[0] <- 1; goto l1;\n l1: r <- mem[0]; goto l2;\nend\n\
                    thread u regs s init m0 begin\n m0: s <- mem[1]; goto m1;\nend";
        let p = parse_program(text).unwrap();
        let a = enumerate_attacks(&p)[0];
        let ip = instrument(&p, &a).unwrap();
        let xp = ExecProgram::compile(&ip.program);
        let r = xp.reg_index(0, "r").unwrap();
        let l2c = xp.threads[0].label_id(&Label::new("l2_c"));
        let l2c = l2c.expect("copy label exists");
        // Reach the end of the attacker copy with r holding the buffered 1.
        let reached = sc_reachable(
            &xp,
            move |_, s| s.pcs[0] == l2c && s.regs[r] == 1,
            100_000,
        );
        assert!(matches!(reached, Reachability::Reachable { .. }));
    }

    #[test]
    fn template_instrumentation_elects_a_single_attacker() {
        let p = dekker();
        let a = enumerate_attacks(&p)[0];
        let enc = AddressEncoding::with_election(p.domain_size);
        let (t, _) = instrument_template(&enc, &p.threads[0], &a).unwrap();
        // Carries the helper sections plus an election-guarded attack entry.
        let cas_count = t
            .instructions
            .iter()
            .filter(|li| matches!(li.inst, Instruction::Cas { .. }))
            .count();
        assert_eq!(cas_count, 1);
        // Both copy namespaces exist.
        assert!(t.instructions.iter().any(|li| li.src.as_str() == "l1_c"));
        assert!(t.instructions.iter().any(|li| li.src.as_str() == "l1_a"));
    }
}
