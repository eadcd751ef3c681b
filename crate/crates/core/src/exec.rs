//! Compiled program form used by the interpreters and searches.
//!
//! Labels and registers are resolved to dense indices so that states can be
//! stored as flat integer vectors.

use std::collections::HashMap;

use crate::ast::{BinOp, Expr, Instruction, Label, Program};

/// Expression with registers resolved to thread-local indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CExpr {
    Const(u64),
    Reg(usize),
    Not(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Mem(Box<CExpr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ExecInstKind {
    Load { reg: usize, addr: CExpr },
    Store { addr: CExpr, value: CExpr },
    Mfence,
    Assign { reg: usize, expr: CExpr },
    Assert { cond: CExpr },
    Cas { addr: CExpr, expect: CExpr, new: CExpr, result: usize },
}

#[derive(Debug, Clone)]
pub struct ExecInst {
    pub src: u32,
    pub dst: u32,
    pub kind: ExecInstKind,
}

#[derive(Debug, Clone)]
pub struct ExecThread {
    pub id: String,
    pub init: u32,
    /// Label names indexed by label id.
    pub labels: Vec<Label>,
    /// Instruction indices grouped by source label id, in declaration order.
    pub by_label: Vec<Vec<u32>>,
    /// Instructions in declaration order.
    pub insts: Vec<ExecInst>,
    pub reg_names: Vec<String>,
}

impl ExecThread {
    pub fn label_id(&self, l: &Label) -> Option<u32> {
        self.labels.iter().position(|x| x == l).map(|i| i as u32)
    }
}

/// A program compiled for execution.
#[derive(Debug, Clone)]
pub struct ExecProgram {
    /// Domain size; also the modulus of expression arithmetic and the number
    /// of memory cells.
    pub domain: u64,
    pub threads: Vec<ExecThread>,
    /// Start of each thread's register block in the flat register vector.
    pub reg_base: Vec<usize>,
    pub total_regs: usize,
}

impl ExecProgram {
    pub fn compile(p: &Program) -> ExecProgram {
        let mut threads = Vec::with_capacity(p.threads.len());
        for t in &p.threads {
            let mut labels: Vec<Label> = Vec::new();
            let get_id = |l: &Label, labels: &mut Vec<Label>| -> u32 {
                if let Some(i) = labels.iter().position(|x| x == l) {
                    i as u32
                } else {
                    labels.push(l.clone());
                    (labels.len() - 1) as u32
                }
            };
            let init = get_id(&t.init, &mut labels);
            let regs: HashMap<&str, usize> = t
                .registers
                .iter()
                .enumerate()
                .map(|(i, r)| (r.as_str(), i))
                .collect();
            let mut insts = Vec::with_capacity(t.instructions.len());
            for li in &t.instructions {
                let src = get_id(&li.src, &mut labels);
                let dst = get_id(&li.dst, &mut labels);
                let kind = compile_inst(&li.inst, &regs);
                insts.push(ExecInst { src, dst, kind });
            }
            let mut by_label = vec![Vec::new(); labels.len()];
            for (i, inst) in insts.iter().enumerate() {
                by_label[inst.src as usize].push(i as u32);
            }
            threads.push(ExecThread {
                id: t.id.clone(),
                init,
                labels,
                by_label,
                insts,
                reg_names: t.registers.clone(),
            });
        }
        let mut reg_base = Vec::with_capacity(threads.len());
        let mut total = 0usize;
        for t in &threads {
            reg_base.push(total);
            total += t.reg_names.len();
        }
        ExecProgram {
            domain: p.domain_size,
            threads,
            reg_base,
            total_regs: total,
        }
    }

    pub fn thread_index(&self, id: &str) -> Option<usize> {
        self.threads.iter().position(|t| t.id == id)
    }

    /// Flat register index of `reg` in `thread`.
    pub fn reg_index(&self, thread: usize, reg: &str) -> Option<usize> {
        let t = &self.threads[thread];
        t.reg_names
            .iter()
            .position(|r| r == reg)
            .map(|i| self.reg_base[thread] + i)
    }
}

fn compile_expr(e: &Expr, regs: &HashMap<&str, usize>) -> CExpr {
    match e {
        Expr::Const(c) => CExpr::Const(*c),
        Expr::Reg(r) => CExpr::Reg(*regs.get(r.as_str()).expect("validated register")),
        Expr::Not(inner) => CExpr::Not(Box::new(compile_expr(inner, regs))),
        Expr::Bin(op, a, b) => CExpr::Bin(
            *op,
            Box::new(compile_expr(a, regs)),
            Box::new(compile_expr(b, regs)),
        ),
        Expr::Mem(a) => CExpr::Mem(Box::new(compile_expr(a, regs))),
    }
}

fn compile_inst(inst: &Instruction, regs: &HashMap<&str, usize>) -> ExecInstKind {
    match inst {
        Instruction::Load { reg, addr } => ExecInstKind::Load {
            reg: regs[reg.as_str()],
            addr: compile_expr(addr, regs),
        },
        Instruction::Store { addr, value } => ExecInstKind::Store {
            addr: compile_expr(addr, regs),
            value: compile_expr(value, regs),
        },
        Instruction::Mfence => ExecInstKind::Mfence,
        Instruction::Assign { reg, expr } => ExecInstKind::Assign {
            reg: regs[reg.as_str()],
            expr: compile_expr(expr, regs),
        },
        Instruction::Assert { cond } => ExecInstKind::Assert {
            cond: compile_expr(cond, regs),
        },
        Instruction::Cas {
            addr,
            expect,
            new,
            result,
        } => ExecInstKind::Cas {
            addr: compile_expr(addr, regs),
            expect: compile_expr(expect, regs),
            new: compile_expr(new, regs),
            result: regs[result.as_str()],
        },
    }
}

/// Evaluates an expression. `regs` is the owning thread's register block,
/// `mem` resolves memory reads (under TSO it must apply buffer forwarding),
/// `modulus` is the program's domain size.
///
/// Arithmetic wraps modulo `modulus`; comparisons and logic produce 0/1;
/// `x % 0` is `x`.
pub fn eval(e: &CExpr, regs: &[u32], mem: &mut impl FnMut(u32) -> u32, modulus: u64) -> u32 {
    match e {
        CExpr::Const(c) => *c as u32,
        CExpr::Reg(r) => regs[*r],
        CExpr::Not(inner) => {
            if eval(inner, regs, mem, modulus) == 0 {
                1
            } else {
                0
            }
        }
        CExpr::Mem(a) => {
            let addr = eval(a, regs, mem, modulus);
            mem(addr)
        }
        CExpr::Bin(op, a, b) => {
            let x = eval(a, regs, mem, modulus) as u64;
            let y = eval(b, regs, mem, modulus) as u64;
            let v = match op {
                BinOp::Add => (x + y) % modulus,
                BinOp::Sub => (x + modulus - y) % modulus,
                BinOp::Mul => (x * y) % modulus,
                BinOp::Mod => {
                    if y == 0 {
                        x
                    } else {
                        x % y
                    }
                }
                BinOp::Eq => (x == y) as u64,
                BinOp::Ne => (x != y) as u64,
                BinOp::Lt => (x < y) as u64,
                BinOp::Le => (x <= y) as u64,
                BinOp::And => (x != 0 && y != 0) as u64,
                BinOp::Or => (x != 0 || y != 0) as u64,
            };
            v as u32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_program;

    #[test]
    fn eval_wraps_modulo_domain() {
        let regs = [1u32, 3];
        let mut mem = |_| 0;
        let e = CExpr::Bin(
            BinOp::Add,
            Box::new(CExpr::Reg(0)),
            Box::new(CExpr::Const(1)),
        );
        assert_eq!(eval(&e, &regs, &mut mem, 2), 0);
        assert_eq!(eval(&e, &regs, &mut mem, 4), 2);
        let sub = CExpr::Bin(
            BinOp::Sub,
            Box::new(CExpr::Const(0)),
            Box::new(CExpr::Const(1)),
        );
        assert_eq!(eval(&sub, &regs, &mut mem, 2), 1);
        assert_eq!(eval(&sub, &regs, &mut mem, 10), 9);
    }

    #[test]
    fn compile_resolves_labels_and_registers() {
        let p = parse_program(crate::corpus::DEKKER).unwrap();
        let xp = ExecProgram::compile(&p);
        assert_eq!(xp.threads.len(), 2);
        assert_eq!(xp.total_regs, 2);
        let t1 = &xp.threads[0];
        assert_eq!(t1.init, 0);
        assert_eq!(t1.insts.len(), 2);
        assert_eq!(t1.by_label[t1.init as usize], vec![0]);
    }
}
