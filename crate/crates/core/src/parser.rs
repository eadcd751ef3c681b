//! Text format parser.
//!
//! ```text
//! program NAME domain N [base B]
//! thread TID
//! regs R*
//! init LABEL
//! begin
//!   LABEL: INST; goto LABEL;
//!   ...
//! end
//! ```
//!
//! Instructions: `r <- mem[e]`, `mem[e] <- e`, `mfence`, `r <- e`,
//! `assert e`, `cas mem[e], e, e -> r`. `#` starts a line comment.
//!
//! When the header carries `base B`, the address sugar of instrumented
//! programs is accepted: `d(e)`, `hb(e)`, `HB`, `AST`, `SUC`, `ELECT`.

use std::fmt;

use thiserror::Error;

use crate::ast::{BinOp, Expr, Instruction, Label, LabeledInstruction, Program, Thread};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("{line}:{col}: {msg}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub msg: String,
}

const RESERVED: &[&str] = &[
    "program", "thread", "regs", "init", "begin", "end", "goto", "mem", "mfence", "assert", "cas",
    "domain", "base", "HB", "AST", "SUC", "ELECT",
];

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Arrow,
    RArrow,
    Colon,
    Semi,
    Comma,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Or,
    And,
    EqEq,
    Ne,
    Le,
    Lt,
    Plus,
    Minus,
    Star,
    Percent,
    Not,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(n) => write!(f, "`{n}`"),
            Tok::Arrow => write!(f, "`<-`"),
            Tok::RArrow => write!(f, "`->`"),
            Tok::Colon => write!(f, "`:`"),
            Tok::Semi => write!(f, "`;`"),
            Tok::Comma => write!(f, "`,`"),
            Tok::LParen => write!(f, "`(`"),
            Tok::RParen => write!(f, "`)`"),
            Tok::LBracket => write!(f, "`[`"),
            Tok::RBracket => write!(f, "`]`"),
            Tok::Or => write!(f, "`||`"),
            Tok::And => write!(f, "`&&`"),
            Tok::EqEq => write!(f, "`==`"),
            Tok::Ne => write!(f, "`!=`"),
            Tok::Le => write!(f, "`<=`"),
            Tok::Lt => write!(f, "`<`"),
            Tok::Plus => write!(f, "`+`"),
            Tok::Minus => write!(f, "`-`"),
            Tok::Star => write!(f, "`*`"),
            Tok::Percent => write!(f, "`%`"),
            Tok::Not => write!(f, "`!`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: usize,
    col: usize,
}

type Spanned = (Tok, usize, usize);

impl<'a> Lexer<'a> {
    fn new(src: &'a str) -> Self {
        Lexer {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
        }
    }

    fn bump(&mut self) -> Option<u8> {
        let c = *self.src.get(self.pos)?;
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn error(&self, msg: impl Into<String>) -> ParseError {
        ParseError {
            line: self.line,
            col: self.col,
            msg: msg.into(),
        }
    }

    fn tokens(mut self) -> Result<Vec<Spanned>, ParseError> {
        let mut out = Vec::new();
        loop {
            while let Some(c) = self.peek() {
                if c == b'#' {
                    while let Some(c) = self.peek() {
                        if c == b'\n' {
                            break;
                        }
                        self.bump();
                    }
                } else if c.is_ascii_whitespace() {
                    self.bump();
                } else {
                    break;
                }
            }
            let (line, col) = (self.line, self.col);
            let Some(c) = self.peek() else {
                out.push((Tok::Eof, line, col));
                return Ok(out);
            };
            let tok = match c {
                b':' => {
                    self.bump();
                    Tok::Colon
                }
                b';' => {
                    self.bump();
                    Tok::Semi
                }
                b',' => {
                    self.bump();
                    Tok::Comma
                }
                b'(' => {
                    self.bump();
                    Tok::LParen
                }
                b')' => {
                    self.bump();
                    Tok::RParen
                }
                b'[' => {
                    self.bump();
                    Tok::LBracket
                }
                b']' => {
                    self.bump();
                    Tok::RBracket
                }
                b'+' => {
                    self.bump();
                    Tok::Plus
                }
                b'*' => {
                    self.bump();
                    Tok::Star
                }
                b'%' => {
                    self.bump();
                    Tok::Percent
                }
                b'-' => {
                    self.bump();
                    if self.peek() == Some(b'>') {
                        self.bump();
                        Tok::RArrow
                    } else {
                        Tok::Minus
                    }
                }
                b'<' => {
                    self.bump();
                    match self.peek() {
                        Some(b'-') => {
                            self.bump();
                            Tok::Arrow
                        }
                        Some(b'=') => {
                            self.bump();
                            Tok::Le
                        }
                        _ => Tok::Lt,
                    }
                }
                b'=' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::EqEq
                    } else {
                        return Err(self.error("expected `==`"));
                    }
                }
                b'!' => {
                    self.bump();
                    if self.peek() == Some(b'=') {
                        self.bump();
                        Tok::Ne
                    } else {
                        Tok::Not
                    }
                }
                b'|' => {
                    self.bump();
                    if self.peek() == Some(b'|') {
                        self.bump();
                        Tok::Or
                    } else {
                        return Err(self.error("expected `||`"));
                    }
                }
                b'&' => {
                    self.bump();
                    if self.peek() == Some(b'&') {
                        self.bump();
                        Tok::And
                    } else {
                        return Err(self.error("expected `&&`"));
                    }
                }
                b'0'..=b'9' => {
                    let mut n: u64 = 0;
                    while let Some(c) = self.peek() {
                        if !c.is_ascii_digit() {
                            break;
                        }
                        n = n
                            .checked_mul(10)
                            .and_then(|n| n.checked_add((c - b'0') as u64))
                            .ok_or_else(|| self.error("integer literal too large"))?;
                        self.bump();
                    }
                    Tok::Int(n)
                }
                c if c.is_ascii_alphabetic() || c == b'_' => {
                    let start = self.pos;
                    while let Some(c) = self.peek() {
                        if c.is_ascii_alphanumeric() || c == b'_' || c == b'\'' {
                            self.bump();
                        } else {
                            break;
                        }
                    }
                    Tok::Ident(String::from_utf8_lossy(&self.src[start..self.pos]).into_owned())
                }
                c => return Err(self.error(format!("unexpected character `{}`", c as char))),
            };
            out.push((tok, line, col));
        }
    }
}

struct Parser {
    toks: Vec<Spanned>,
    at: usize,
    domain: u64,
    base: Option<u64>,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn pos(&self) -> (usize, usize) {
        let (_, l, c) = self.toks[self.at];
        (l, c)
    }

    fn error_here(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.pos();
        ParseError {
            line,
            col,
            msg: msg.into(),
        }
    }

    fn next(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn expect(&mut self, tok: Tok) -> Result<(), ParseError> {
        if *self.peek() == tok {
            self.next();
            Ok(())
        } else {
            Err(self.error_here(format!("expected {tok}, found {}", self.peek())))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == kw => {
                self.next();
                Ok(())
            }
            other => Err(self.error_here(format!("expected `{kw}`, found {other}"))),
        }
    }

    fn at_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                if RESERVED.contains(&s.as_str()) {
                    return Err(self.error_here(format!("`{s}` is reserved and cannot name a {what}")));
                }
                self.next();
                Ok(s)
            }
            other => Err(self.error_here(format!("expected {what} name, found {other}"))),
        }
    }

    fn int(&mut self) -> Result<u64, ParseError> {
        match *self.peek() {
            Tok::Int(n) => {
                self.next();
                Ok(n)
            }
            _ => Err(self.error_here(format!("expected integer, found {}", self.peek()))),
        }
    }

    fn program(&mut self) -> Result<Program, ParseError> {
        self.expect_keyword("program")?;
        let name = self.ident("program")?;
        self.expect_keyword("domain")?;
        let domain_size = self.int()?;
        if domain_size == 0 {
            return Err(self.error_here("domain size must be positive"));
        }
        self.domain = domain_size;
        let mut base_domain = None;
        if self.at_keyword("base") {
            self.next();
            let b = self.int()?;
            if b == 0 || 3 * b + 2 >= domain_size {
                return Err(self.error_here("base domain does not fit in the declared domain"));
            }
            base_domain = Some(b);
        }
        self.base = base_domain;
        let mut threads = Vec::new();
        while self.at_keyword("thread") {
            threads.push(self.thread()?);
        }
        self.expect(Tok::Eof)?;
        let program = Program {
            name,
            domain_size,
            base_domain,
            threads,
        };
        Ok(program)
    }

    fn thread(&mut self) -> Result<Thread, ParseError> {
        self.expect_keyword("thread")?;
        let id = self.ident("thread")?;
        self.expect_keyword("regs")?;
        let mut registers = Vec::new();
        while !self.at_keyword("init") {
            registers.push(self.ident("register")?);
        }
        self.expect_keyword("init")?;
        let init = Label(self.ident("label")?);
        self.expect_keyword("begin")?;
        let mut instructions = Vec::new();
        while !self.at_keyword("end") {
            instructions.push(self.labeled_instruction(&registers)?);
        }
        self.expect_keyword("end")?;
        Ok(Thread {
            id,
            registers,
            init,
            instructions,
        })
    }

    fn labeled_instruction(&mut self, regs: &[String]) -> Result<LabeledInstruction, ParseError> {
        let pos = self.pos();
        let src = Label(self.ident("label")?);
        self.expect(Tok::Colon)?;
        let inst = self.instruction()?;
        self.expect(Tok::Semi)?;
        self.expect_keyword("goto")?;
        let dst = Label(self.ident("label")?);
        self.expect(Tok::Semi)?;

        let mut used = Vec::new();
        inst.registers(&mut used);
        for r in used {
            if !regs.iter().any(|d| d == r) {
                return Err(ParseError {
                    line: pos.0,
                    col: pos.1,
                    msg: format!("register `{r}` is not declared"),
                });
            }
        }
        if let Some(c) = inst.max_constant() {
            if c >= self.domain {
                return Err(ParseError {
                    line: pos.0,
                    col: pos.1,
                    msg: format!("constant {c} outside the data domain of size {}", self.domain),
                });
            }
        }
        Ok(LabeledInstruction { src, inst, dst })
    }

    fn instruction(&mut self) -> Result<Instruction, ParseError> {
        if self.at_keyword("mfence") {
            self.next();
            return Ok(Instruction::Mfence);
        }
        if self.at_keyword("assert") {
            self.next();
            let cond = self.expr()?;
            return Ok(Instruction::Assert { cond });
        }
        if self.at_keyword("cas") {
            self.next();
            self.expect_keyword("mem")?;
            self.expect(Tok::LBracket)?;
            let addr = self.expr()?;
            self.expect(Tok::RBracket)?;
            self.expect(Tok::Comma)?;
            let expect = self.expr()?;
            self.expect(Tok::Comma)?;
            let new = self.expr()?;
            self.expect(Tok::RArrow)?;
            let result = self.ident("register")?;
            return Ok(Instruction::Cas {
                addr,
                expect,
                new,
                result,
            });
        }
        if self.at_keyword("mem") {
            self.next();
            self.expect(Tok::LBracket)?;
            let addr = self.expr()?;
            self.expect(Tok::RBracket)?;
            self.expect(Tok::Arrow)?;
            let value = self.expr()?;
            return Ok(Instruction::Store { addr, value });
        }
        let reg = self.ident("register")?;
        self.expect(Tok::Arrow)?;
        let expr = self.expr()?;
        // `r <- mem[e]` is a load; any other right-hand side is a local
        // assignment.
        if let Expr::Mem(addr) = expr {
            Ok(Instruction::Load { reg, addr: *addr })
        } else {
            Ok(Instruction::Assign { reg, expr })
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.or_expr()
    }

    fn or_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.and_expr()?;
        while *self.peek() == Tok::Or {
            self.next();
            let rhs = self.and_expr()?;
            lhs = Expr::bin(BinOp::Or, lhs, rhs);
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.cmp_expr()?;
        while *self.peek() == Tok::And {
            self.next();
            let rhs = self.cmp_expr()?;
            lhs = Expr::bin(BinOp::And, lhs, rhs);
        }
        Ok(lhs)
    }

    fn cmp_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.add_expr()?;
        loop {
            let op = match self.peek() {
                Tok::EqEq => BinOp::Eq,
                Tok::Ne => BinOp::Ne,
                Tok::Lt => BinOp::Lt,
                Tok::Le => BinOp::Le,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.add_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn add_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.mul_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn mul_expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Percent => BinOp::Mod,
                _ => return Ok(lhs),
            };
            self.next();
            let rhs = self.unary_expr()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Not {
            self.next();
            let e = self.unary_expr()?;
            return Ok(Expr::Not(Box::new(e)));
        }
        self.atom()
    }

    fn sugar_base(&self) -> Result<u64, ParseError> {
        self.base.ok_or_else(|| {
            self.error_here("address sugar requires a `base` clause in the program header")
        })
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(n) => {
                self.next();
                Ok(Expr::Const(n))
            }
            Tok::LParen => {
                self.next();
                let e = self.expr()?;
                self.expect(Tok::RParen)?;
                Ok(e)
            }
            Tok::Ident(s) => match s.as_str() {
                "mem" => {
                    self.next();
                    self.expect(Tok::LBracket)?;
                    let e = self.expr()?;
                    self.expect(Tok::RBracket)?;
                    Ok(Expr::mem(e))
                }
                "HB" => {
                    let b = self.sugar_base()?;
                    self.next();
                    Ok(Expr::Const(3 * b))
                }
                "AST" => {
                    let b = self.sugar_base()?;
                    self.next();
                    Ok(Expr::Const(3 * b + 1))
                }
                "SUC" => {
                    let b = self.sugar_base()?;
                    self.next();
                    Ok(Expr::Const(3 * b + 2))
                }
                "ELECT" => {
                    let b = self.sugar_base()?;
                    self.next();
                    Ok(Expr::Const(3 * b + 3))
                }
                "d" | "hb" if self.toks[self.at + 1].0 == Tok::LParen => {
                    let b = self.sugar_base()?;
                    let mult = if s == "d" { 1 } else { 2 };
                    self.next();
                    self.expect(Tok::LParen)?;
                    let e = self.expr()?;
                    self.expect(Tok::RParen)?;
                    Ok(Expr::bin(BinOp::Add, Expr::Const(mult * b), e))
                }
                _ => {
                    let name = self.ident("register")?;
                    Ok(Expr::Reg(name))
                }
            },
            other => Err(self.error_here(format!("expected expression, found {other}"))),
        }
    }
}

/// Parses a program from its text form. Returns a diagnostic with line and
/// column on malformed input, undeclared registers, or constants outside the
/// data domain.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let toks = Lexer::new(text).tokens()?;
    let mut parser = Parser {
        toks,
        at: 0,
        domain: 1,
        base: None,
    };
    let program = parser.program()?;
    // Duplicate thread/register checks live in the structural validator.
    if let Err(e) = program.validate() {
        return Err(ParseError {
            line: 1,
            col: 1,
            msg: e.to_string(),
        });
    }
    Ok(program)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus;

    #[test]
    fn parses_dekker() {
        let p = parse_program(corpus::DEKKER).unwrap();
        assert_eq!(p.name, "Dekker");
        assert_eq!(p.domain_size, 2);
        assert_eq!(p.threads.len(), 2);
        let t1 = &p.threads[0];
        assert_eq!(t1.id, "t1");
        assert_eq!(t1.registers, vec!["r1".to_string()]);
        assert_eq!(t1.init, Label::new("l0"));
        assert_eq!(t1.instructions.len(), 2);
        assert_eq!(
            t1.instructions[0].inst,
            Instruction::Store {
                addr: Expr::Const(0),
                value: Expr::Const(1)
            }
        );
        assert_eq!(
            t1.instructions[1].inst,
            Instruction::Load {
                reg: "r1".into(),
                addr: Expr::Const(1)
            }
        );
        let t2 = &p.threads[1];
        assert_eq!(t2.id, "t2");
        assert_eq!(t2.registers, vec!["r2".to_string()]);
        assert_eq!(t2.init, Label::new("l0'"));
        assert_eq!(t2.instructions.len(), 2);
    }

    #[test]
    fn parses_empty_program() {
        let p = parse_program("program Empty domain 2").unwrap();
        assert_eq!(p.name, "Empty");
        assert!(p.threads.is_empty());
    }

    #[test]
    fn rejects_undeclared_register() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n l0: q <- mem[0]; goto l1;\nend";
        let err = parse_program(text).unwrap_err();
        assert!(err.msg.contains("`q`"), "{err}");
        assert_eq!(err.line, 3);
    }

    #[test]
    fn rejects_constant_outside_domain() {
        let text = "program P domain 2\nthread t regs r init l0 begin\n l0: mem[0] <- 5; goto l1;\nend";
        let err = parse_program(text).unwrap_err();
        assert!(err.msg.contains("constant 5"), "{err}");
    }

    #[test]
    fn parses_cas_and_expressions() {
        let text = "program P domain 4\n\
                    thread t regs a b init l0 begin\n\
                    l0: cas mem[a + 1], 0, b * 2 -> a; goto l1;\n\
                    l1: a <- !(a == b) && 1 || b <= 2; goto l2;\n\
                    l2: assert a != 0; goto l0;\n\
                    end";
        let p = parse_program(text).unwrap();
        let t = &p.threads[0];
        assert!(matches!(t.instructions[0].inst, Instruction::Cas { .. }));
        assert!(matches!(t.instructions[1].inst, Instruction::Assign { .. }));
        assert!(matches!(t.instructions[2].inst, Instruction::Assert { .. }));
    }

    #[test]
    fn sugar_requires_base_header() {
        let text = "program P domain 10\nthread t regs r init l0 begin\n l0: mem[HB] <- 1; goto l1;\nend";
        let err = parse_program(text).unwrap_err();
        assert!(err.msg.contains("base"), "{err}");
        let text = "program P domain 10 base 2\nthread t regs r init l0 begin\n l0: mem[HB] <- 1; goto l1;\nend";
        let p = parse_program(text).unwrap();
        assert_eq!(
            p.threads[0].instructions[0].inst,
            Instruction::Store {
                addr: Expr::Const(6),
                value: Expr::Const(1)
            }
        );
    }

    #[test]
    fn sugar_tags_desugar_to_offsets() {
        let text = "program P domain 10 base 2\n\
                    thread t regs r init l0 begin\n\
                    l0: r <- mem[d(1)]; goto l1;\n\
                    l1: mem[hb(r)] <- 2; goto l2;\n\
                    end";
        let p = parse_program(text).unwrap();
        assert_eq!(
            p.threads[0].instructions[0].inst,
            Instruction::Load {
                reg: "r".into(),
                addr: Expr::bin(BinOp::Add, Expr::Const(2), Expr::Const(1)),
            }
        );
        assert_eq!(
            p.threads[0].instructions[1].inst,
            Instruction::Store {
                addr: Expr::bin(BinOp::Add, Expr::Const(4), Expr::reg("r")),
                value: Expr::Const(2),
            }
        );
    }

    #[test]
    fn syntax_error_has_position() {
        let err = parse_program("program P domain 2\nthread t regs r init l0 begin\n l0 mem[0] <- 1; goto l1;\nend").unwrap_err();
        assert_eq!(err.line, 3);
        assert!(err.msg.contains("expected"));
    }
}
