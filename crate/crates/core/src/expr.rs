//! Arithmetic expression language used for payoff definitions.
//!
//! Grammar, lowest to highest precedence:
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?          // right-associative
//! atom   := number | name | name "(" args ")" | "(" expr ")"
//! ```
//!
//! Functions: `sqrt exp log abs` (one argument) and `min max` (two).

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Abs,
    Min,
    Max,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "abs" => Func::Abs,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Abs => "abs",
            Func::Min => "min",
            Func::Max => "max",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Min | Func::Max => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at byte {offset}")]
pub struct ParseError {
    pub offset: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("domain error in `{subexpr}`: {reason}")]
    Domain { subexpr: String, reason: String },
}

pub type EvalContext = HashMap<String, f64>;

pub fn is_valid_name(name: &str) -> bool {
    let mut chars = name.chars();
    matches!(chars.next(), Some('a'..='z'))
        && chars.all(|c| matches!(c, 'a'..='z' | '0'..='9' | '_'))
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Name(String),
    Op(char),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<(usize, Tok)>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => i += 1,
            b'0'..=b'9' | b'.' => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                if i < bytes.len() && bytes[i] == b'.' {
                    i += 1;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
                let mantissa = &src[start..i];
                if !mantissa.bytes().any(|b| b.is_ascii_digit()) {
                    return Err(ParseError {
                        offset: start,
                        message: "malformed number".into(),
                    });
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    let digits = j;
                    while j < bytes.len() && bytes[j].is_ascii_digit() {
                        j += 1;
                    }
                    if j == digits {
                        return Err(ParseError {
                            offset: i,
                            message: "malformed exponent".into(),
                        });
                    }
                    i = j;
                }
                let value: f64 = src[start..i].parse().map_err(|_| ParseError {
                    offset: start,
                    message: "malformed number".into(),
                })?;
                if !value.is_finite() {
                    return Err(ParseError {
                        offset: start,
                        message: "number literal out of range".into(),
                    });
                }
                out.push((start, Tok::Num(value)));
            }
            b'a'..=b'z' | b'A'..=b'Z' | b'_' => {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let name = &src[start..i];
                if !is_valid_name(name) {
                    return Err(ParseError {
                        offset: start,
                        message: format!("invalid identifier `{name}`"),
                    });
                }
                out.push((start, Tok::Name(name.to_string())));
            }
            b'+' | b'-' | b'*' | b'/' | b'^' => {
                out.push((i, Tok::Op(c as char)));
                i += 1;
            }
            b'(' => {
                out.push((i, Tok::LParen));
                i += 1;
            }
            b')' => {
                out.push((i, Tok::RParen));
                i += 1;
            }
            b',' => {
                out.push((i, Tok::Comma));
                i += 1;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(ParseError {
                    offset: i,
                    message: format!("unexpected character `{ch}`"),
                });
            }
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(o, _)| *o).unwrap_or(self.end)
    }

    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            offset: self.offset(),
            message: message.into(),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(Tok::Op(c @ ('+' | '-'))) = self.peek() {
            let op = if *c == '+' { BinOp::Add } else { BinOp::Sub };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(Tok::Op(c @ ('*' | '/'))) = self.peek() {
            let op = if *c == '*' { BinOp::Mul } else { BinOp::Div };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if let Some(Tok::Op('-')) = self.peek() {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(Expr::Neg(Box::new(inner)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if let Some(Tok::Op('^')) = self.peek() {
            self.pos += 1;
            let exponent = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let start = self.offset();
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Expr::Num(v))
            }
            Some(Tok::Name(name)) => {
                self.pos += 1;
                if let Some(Tok::LParen) = self.peek() {
                    let func = match Func::from_name(&name) {
                        Some(f) => f,
                        None => {
                            return Err(ParseError {
                                offset: start,
                                message: format!("unknown function `{name}`"),
                            })
                        }
                    };
                    self.pos += 1;
                    let mut args = vec![self.expr()?];
                    while let Some(Tok::Comma) = self.peek() {
                        self.pos += 1;
                        args.push(self.expr()?);
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("expected `)`");
                    }
                    self.pos += 1;
                    if args.len() != func.arity() {
                        return Err(ParseError {
                            offset: start,
                            message: format!(
                                "`{}` takes {} argument(s), got {}",
                                func.name(),
                                func.arity(),
                                args.len()
                            ),
                        });
                    }
                    Ok(Expr::Call(func, args))
                } else {
                    Ok(Expr::Var(name))
                }
            }
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.expr()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("expected `)`");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(_) => self.err("unexpected token"),
            None => self.err("unexpected end of input"),
        }
    }
}

pub fn parse(src: &str) -> Result<Expr, ParseError> {
    let toks = tokenize(src)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: src.len(),
    };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return p.err("unexpected trailing input");
    }
    Ok(e)
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v:?}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Bin(op, a, b) => write!(f, "({a} {} {b})", op.symbol()),
            Expr::Call(func, args) => {
                write!(f, "{}(", func.name())?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{a}")?;
                }
                f.write_str(")")
            }
        }
    }
}

fn domain(e: &Expr, reason: &str) -> EvalError {
    EvalError::Domain {
        subexpr: e.to_string(),
        reason: reason.to_string(),
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> Result<f64, &'static str> {
    let r = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => {
            if b == 0.0 {
                return Err("division by zero");
            }
            a / b
        }
        BinOp::Pow => a.powf(b),
    };
    if r.is_nan() {
        Err("result is not a number")
    } else {
        Ok(r)
    }
}

fn apply_func(func: Func, args: &[f64]) -> Result<f64, &'static str> {
    Ok(match func {
        Func::Sqrt => {
            if args[0] < 0.0 {
                return Err("sqrt of a negative number");
            }
            args[0].sqrt()
        }
        Func::Exp => args[0].exp(),
        Func::Log => {
            if args[0] <= 0.0 {
                return Err("log of a nonpositive number");
            }
            args[0].ln()
        }
        Func::Abs => args[0].abs(),
        Func::Min => args[0].min(args[1]),
        Func::Max => args[0].max(args[1]),
    })
}

impl Expr {
    pub fn evaluate(&self, ctx: &EvalContext) -> Result<f64, EvalError> {
        match self {
            Expr::Num(v) => Ok(*v),
            Expr::Var(name) => ctx
                .get(name)
                .copied()
                .ok_or_else(|| EvalError::Unbound(name.clone())),
            Expr::Neg(inner) => Ok(-inner.evaluate(ctx)?),
            Expr::Bin(op, a, b) => {
                let (x, y) = (a.evaluate(ctx)?, b.evaluate(ctx)?);
                apply_bin(*op, x, y).map_err(|r| domain(self, r))
            }
            Expr::Call(func, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.evaluate(ctx))
                    .collect::<Result<Vec<_>, _>>()?;
                apply_func(*func, &vals).map_err(|r| domain(self, r))
            }
        }
    }

    /// Replaces every occurrence of the variable `name` by a constant.
    pub fn substitute(&self, name: &str, value: f64) -> Expr {
        match self {
            Expr::Var(n) if n == name => Expr::Num(value),
            Expr::Num(_) | Expr::Var(_) => self.clone(),
            Expr::Neg(e) => Expr::Neg(Box::new(e.substitute(name, value))),
            Expr::Bin(op, a, b) => Expr::Bin(*op, Box::new(a.substitute(name, value)), Box::new(b.substitute(name, value))),
            Expr::Call(f, args) => Expr::Call(*f, args.iter().map(|a| a.substitute(name, value)).collect()),
        }
    }

    pub fn free_vars(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_vars(&mut out);
        out
    }

    fn collect_vars(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(n) => {
                out.insert(n.clone());
            }
            Expr::Neg(e) => e.collect_vars(out),
            Expr::Bin(_, a, b) => {
                a.collect_vars(out);
                b.collect_vars(out);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.collect_vars(out)),
        }
    }

    /// Lowers the tree to a postfix program over a fixed variable layout.
    pub fn compile(&self, layout: &[&str]) -> Result<Compiled, EvalError> {
        let mut c = Compiled {
            code: Vec::new(),
            origin: Vec::new(),
            depth: 0,
        };
        let mut depth = 0usize;
        self.lower(layout, &mut c, &mut depth)?;
        Ok(c)
    }

    fn lower(&self, layout: &[&str], c: &mut Compiled, depth: &mut usize) -> Result<(), EvalError> {
        match self {
            Expr::Num(v) => {
                c.push(Op::Const(*v), self);
                *depth += 1;
            }
            Expr::Var(name) => {
                let slot = layout
                    .iter()
                    .position(|n| n == name)
                    .ok_or_else(|| EvalError::Unbound(name.clone()))?;
                c.push(Op::Load(slot), self);
                *depth += 1;
            }
            Expr::Neg(inner) => {
                inner.lower(layout, c, depth)?;
                c.push(Op::Neg, self);
            }
            Expr::Bin(op, a, b) => {
                a.lower(layout, c, depth)?;
                b.lower(layout, c, depth)?;
                c.push(Op::Bin(*op), self);
                *depth -= 1;
            }
            Expr::Call(func, args) => {
                for a in args {
                    a.lower(layout, c, depth)?;
                }
                c.push(Op::Call(*func), self);
                *depth -= args.len() - 1;
            }
        }
        c.depth = c.depth.max(*depth);
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Const(f64),
    Load(usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// An expression bound to a slot layout; evaluation takes a slice of values.
#[derive(Debug, Clone)]
pub struct Compiled {
    code: Vec<Op>,
    origin: Vec<Expr>,
    depth: usize,
}

impl Compiled {
    fn push(&mut self, op: Op, src: &Expr) {
        self.code.push(op);
        // Only operations that can fail need their source kept around.
        match op {
            Op::Bin(_) | Op::Call(_) => self.origin.push(src.clone()),
            _ => self.origin.push(Expr::Num(0.0)),
        }
    }

    pub fn eval(&self, slots: &[f64]) -> Result<f64, EvalError> {
        const INLINE: usize = 32;
        if self.depth <= INLINE {
            self.run(slots, &mut [0.0; INLINE])
        } else {
            self.run(slots, &mut vec![0.0; self.depth])
        }
    }

    fn run(&self, slots: &[f64], stack: &mut [f64]) -> Result<f64, EvalError> {
        let mut sp = 0usize;
        for (i, op) in self.code.iter().enumerate() {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(s) => {
                    stack[sp] = slots[s];
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Bin(b) => {
                    sp -= 1;
                    stack[sp - 1] = apply_bin(b, stack[sp - 1], stack[sp]).map_err(|r| domain(&self.origin[i], r))?;
                }
                Op::Call(f) => {
                    let n = f.arity();
                    sp -= n - 1;
                    stack[sp - 1] = apply_func(f, &stack[sp - 1..sp - 1 + n]).map_err(|r| domain(&self.origin[i], r))?;
                }
            }
        }
        Ok(stack[0])
    }
}
