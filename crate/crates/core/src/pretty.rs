//! Canonical text rendering of programs. `parse_program(pretty(p)) == p`.

use std::fmt::Write;

use crate::ast::{BinOp, Expr, Instruction, Program, Thread};

fn prec(op: BinOp) -> u8 {
    match op {
        BinOp::Or => 1,
        BinOp::And => 2,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le => 3,
        BinOp::Add | BinOp::Sub => 4,
        BinOp::Mul | BinOp::Mod => 5,
    }
}

struct Renderer {
    /// Base domain of an instrumented program; enables address sugar.
    base: Option<u64>,
}

impl Renderer {
    fn sugar_const(&self, c: u64) -> Option<&'static str> {
        let b = self.base?;
        if c == 3 * b {
            Some("HB")
        } else if c == 3 * b + 1 {
            Some("AST")
        } else if c == 3 * b + 2 {
            Some("SUC")
        } else if c == 3 * b + 3 {
            Some("ELECT")
        } else {
            None
        }
    }

    /// `B + e` and `2B + e` render as `d(e)` and `hb(e)`.
    fn sugar_tag<'a>(&self, e: &'a Expr) -> Option<(&'static str, &'a Expr)> {
        let b = self.base?;
        if let Expr::Bin(BinOp::Add, lhs, rhs) = e {
            if let Expr::Const(c) = **lhs {
                if c == b {
                    return Some(("d", rhs));
                }
                if c == 2 * b {
                    return Some(("hb", rhs));
                }
            }
        }
        None
    }

    fn expr(&self, out: &mut String, e: &Expr, parent: u8) {
        if let Some((tag, inner)) = self.sugar_tag(e) {
            out.push_str(tag);
            out.push('(');
            self.expr(out, inner, 0);
            out.push(')');
            return;
        }
        match e {
            Expr::Const(c) => {
                if let Some(s) = self.sugar_const(*c) {
                    out.push_str(s);
                } else {
                    let _ = write!(out, "{c}");
                }
            }
            Expr::Reg(r) => out.push_str(r),
            Expr::Mem(a) => {
                out.push_str("mem[");
                self.expr(out, a, 0);
                out.push(']');
            }
            Expr::Not(inner) => {
                out.push('!');
                let needs = !matches!(
                    **inner,
                    Expr::Const(_) | Expr::Reg(_) | Expr::Mem(_) | Expr::Not(_)
                ) && self.sugar_tag(inner).is_none();
                if needs {
                    out.push('(');
                    self.expr(out, inner, 0);
                    out.push(')');
                } else {
                    self.expr(out, inner, 6);
                }
            }
            Expr::Bin(op, a, b) => {
                let p = prec(*op);
                if p < parent {
                    out.push('(');
                }
                self.expr(out, a, p);
                let _ = write!(out, " {} ", op.symbol());
                self.expr(out, b, p + 1);
                if p < parent {
                    out.push(')');
                }
            }
        }
    }

    fn expr_str(&self, e: &Expr) -> String {
        let mut s = String::new();
        self.expr(&mut s, e, 0);
        s
    }

    fn instruction(&self, inst: &Instruction) -> String {
        match inst {
            Instruction::Load { reg, addr } => format!("{reg} <- mem[{}]", self.expr_str(addr)),
            Instruction::Store { addr, value } => {
                format!("mem[{}] <- {}", self.expr_str(addr), self.expr_str(value))
            }
            Instruction::Mfence => "mfence".to_string(),
            Instruction::Assign { reg, expr } => format!("{reg} <- {}", self.expr_str(expr)),
            Instruction::Assert { cond } => format!("assert {}", self.expr_str(cond)),
            Instruction::Cas {
                addr,
                expect,
                new,
                result,
            } => format!(
                "cas mem[{}], {}, {} -> {result}",
                self.expr_str(addr),
                self.expr_str(expect),
                self.expr_str(new)
            ),
        }
    }

    fn thread(&self, out: &mut String, t: &Thread) {
        let _ = writeln!(out, "thread {}", t.id);
        out.push_str("regs");
        for r in &t.registers {
            let _ = write!(out, " {r}");
        }
        out.push('\n');
        let _ = writeln!(out, "init {}", t.init);
        out.push_str("begin\n");
        for li in &t.instructions {
            let _ = writeln!(
                out,
                "  {}: {}; goto {};",
                li.src,
                self.instruction(&li.inst),
                li.dst
            );
        }
        out.push_str("end\n");
    }
}

/// Renders a program in the text format. Instrumented programs (those with a
/// base domain) use the `d(..)`/`hb(..)`/`HB`/`AST`/`SUC`/`ELECT` sugar for
/// their auxiliary addresses.
pub fn pretty(p: &Program) -> String {
    let r = Renderer { base: p.base_domain };
    let mut out = String::new();
    let _ = write!(out, "program {} domain {}", p.name, p.domain_size);
    if let Some(b) = p.base_domain {
        let _ = write!(out, " base {b}");
    }
    out.push('\n');
    for t in &p.threads {
        out.push('\n');
        r.thread(&mut out, t);
    }
    out
}

/// Renders a single expression (used by reports and debugging output).
pub fn pretty_expr(e: &Expr, base: Option<u64>) -> String {
    Renderer { base }.expr_str(e)
}
