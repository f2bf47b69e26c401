//! Kernel IR and the parser for the kernel DSL.
//!
//! ```text
//! array A: u32[4000]
//! array C: u32[4000]
//! scalar s: u32
//! for i in 0..500 lanes 8 {
//!     t = A[i] * A[i]
//!     C[i] = select(t > A[i], t, A[i])
//!     s += C[i]
//! }
//! ```

use std::collections::{BTreeMap, BTreeSet};

use mimdram_core::isa::ArithOp;

use crate::error::{CompileError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArrayDecl {
    pub name: String,
    pub bits: u32,
    pub len: usize,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScalarDecl {
    pub name: String,
    pub bits: u32,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    /// `A[i]`
    Elem(String),
    /// A loop-local temporary.
    Temp(String),
    Unary(ArithOp, Box<Expr>),
    Binary(ArithOp, Box<Expr>, Box<Expr>),
    /// `select(cond, then, else)`; bit 0 of `cond` picks `then`.
    Select(Box<Expr>, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Stmt {
    Store { array: String, expr: Expr, line: usize },
    Let { name: String, expr: Expr, line: usize },
    Reduce { scalar: String, op: ArithOp, expr: Expr, line: usize },
}

impl Stmt {
    pub fn line(&self) -> usize {
        match self {
            Stmt::Store { line, .. } | Stmt::Let { line, .. } | Stmt::Reduce { line, .. } => *line,
        }
    }

    pub fn expr(&self) -> &Expr {
        match self {
            Stmt::Store { expr, .. } | Stmt::Let { expr, .. } | Stmt::Reduce { expr, .. } => expr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Loop {
    pub var: String,
    pub trip: usize,
    pub lanes: usize,
    /// Element width shared by every operand of the loop.
    pub bits: u32,
    pub body: Vec<Stmt>,
    pub line: usize,
}

impl Loop {
    /// Arrays read or written by the loop, in first-use order.
    pub fn arrays(&self) -> Vec<String> {
        let mut seen = Vec::new();
        let mut push = |n: &str| {
            if !seen.iter().any(|s| s == n) {
                seen.push(n.to_string());
            }
        };
        for st in &self.body {
            let mut reads = Vec::new();
            st.expr().elems(&mut reads);
            for r in reads {
                push(r);
            }
            if let Stmt::Store { array, .. } = st {
                push(array);
            }
        }
        seen
    }
}

impl Expr {
    pub fn elems<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Elem(a) => out.push(a),
            Expr::Temp(_) => {}
            Expr::Unary(_, a) => a.elems(out),
            Expr::Binary(_, a, b) => {
                a.elems(out);
                b.elems(out);
            }
            Expr::Select(c, a, b) => {
                c.elems(out);
                a.elems(out);
                b.elems(out);
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KernelIr {
    pub arrays: Vec<ArrayDecl>,
    pub scalars: Vec<ScalarDecl>,
    pub loops: Vec<Loop>,
}

impl KernelIr {
    pub fn array(&self, name: &str) -> Option<&ArrayDecl> {
        self.arrays.iter().find(|a| a.name == name)
    }

    pub fn scalar(&self, name: &str) -> Option<&ScalarDecl> {
        self.scalars.iter().find(|s| s.name == name)
    }
}

/// Per-iteration lanes times trip count.
pub fn compute_max_vf(l: &Loop) -> usize {
    l.trip * l.lanes
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Punct(&'static str),
}

const PUNCT: [&str; 26] = [
    "..", "+=", "&=", "|=", "^=", "==", ">=", "<=", "[", "]", "(", ")", "{", "}", ":", ",", ";", "=", "+", "-", "*",
    "/", "&", "|", "^", "~",
];

fn lex(text: &str) -> Result<Vec<(Tok, usize)>> {
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let code = raw.split('#').next().unwrap_or("");
        let bytes = code.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_whitespace() {
                i += 1;
            } else if c.is_ascii_alphabetic() || c == '_' {
                let start = i;
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                out.push((Tok::Ident(code[start..i].to_string()), line));
            } else if c.is_ascii_digit() {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let v = code[start..i].parse().map_err(|_| CompileError::Syntax {
                    line,
                    msg: format!("integer `{}` too large", &code[start..i]),
                })?;
                out.push((Tok::Int(v), line));
            } else if c == '<' || c == '>' {
                let two = code.get(i..i + 2);
                let p = match (c, two) {
                    ('<', Some("<=")) => "<=",
                    ('>', Some(">=")) => ">=",
                    ('<', _) => "<",
                    _ => ">",
                };
                i += p.len();
                out.push((Tok::Punct(p), line));
            } else if let Some(p) = PUNCT.iter().find(|p| code[i..].starts_with(**p)) {
                i += p.len();
                out.push((Tok::Punct(p), line));
            } else {
                return Err(CompileError::Syntax { line, msg: format!("unexpected character `{c}`") });
            }
        }
    }
    Ok(out)
}

struct LoopCtx {
    var: String,
    temps: BTreeSet<String>,
    widths: BTreeSet<u32>,
    stored: BTreeSet<String>,
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    ir: KernelIr,
    reduced: BTreeMap<String, usize>,
}

fn is_reserved(name: &str) -> bool {
    matches!(name, "array" | "scalar" | "for" | "in" | "lanes" | "max" | "min" | "abs" | "relu" | "popcount" | "select")
}

impl Parser {
    fn line(&self) -> usize {
        self.toks.get(self.pos).or(self.toks.last()).map(|t| t.1).unwrap_or(1)
    }

    fn syntax<T>(&self, msg: impl Into<String>) -> Result<T> {
        Err(CompileError::Syntax { line: self.line(), msg: msg.into() })
    }

    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Some(Tok::Punct(q)) if *q == p)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, p: &str) -> Result<()> {
        if self.eat(p) {
            Ok(())
        } else {
            let got = self.describe();
            self.syntax(format!("expected `{p}`, found {got}"))
        }
    }

    fn describe(&self) -> String {
        match self.peek() {
            Some(Tok::Ident(s)) => format!("`{s}`"),
            Some(Tok::Int(v)) => format!("`{v}`"),
            Some(Tok::Punct(p)) => format!("`{p}`"),
            None => "end of input".into(),
        }
    }

    fn ident(&mut self) -> Result<String> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                let s = s.clone();
                self.pos += 1;
                Ok(s)
            }
            _ => {
                let got = self.describe();
                self.syntax(format!("expected identifier, found {got}"))
            }
        }
    }

    fn keyword(&mut self, kw: &str) -> Result<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.pos += 1;
                Ok(())
            }
            _ => {
                let got = self.describe();
                self.syntax(format!("expected `{kw}`, found {got}"))
            }
        }
    }

    fn int(&mut self) -> Result<u64> {
        match self.peek() {
            Some(Tok::Int(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => {
                let got = self.describe();
                self.syntax(format!("expected integer, found {got}"))
            }
        }
    }

    fn new_name(&self, name: &str, line: usize) -> Result<()> {
        if name.starts_with('_') {
            return Err(CompileError::Semantic {
                line,
                msg: format!("`{name}`: names starting with `_` are reserved"),
            });
        }
        if is_reserved(name) {
            return Err(CompileError::Semantic { line, msg: format!("`{name}` is a keyword") });
        }
        if self.ir.array(name).is_some() || self.ir.scalar(name).is_some() {
            return Err(CompileError::Semantic { line, msg: format!("`{name}` is already declared") });
        }
        Ok(())
    }

    fn ty(&mut self) -> Result<u32> {
        let line = self.line();
        let t = self.ident()?;
        match t.strip_prefix('u').and_then(|w| w.parse::<u32>().ok()) {
            Some(w) if (1..=64).contains(&w) => Ok(w),
            _ => Err(CompileError::Semantic { line, msg: format!("unknown type `{t}`; expected u1..u64") }),
        }
    }

    fn kernel(mut self) -> Result<KernelIr> {
        while let Some(tok) = self.peek() {
            let line = self.line();
            match tok {
                Tok::Ident(k) if k == "array" => {
                    self.pos += 1;
                    let name = self.ident()?;
                    self.new_name(&name, line)?;
                    self.expect(":")?;
                    let bits = self.ty()?;
                    self.expect("[")?;
                    let len = self.int()? as usize;
                    self.expect("]")?;
                    if len == 0 {
                        return Err(CompileError::Semantic { line, msg: format!("array `{name}` is empty") });
                    }
                    self.ir.arrays.push(ArrayDecl { name, bits, len, line });
                }
                Tok::Ident(k) if k == "scalar" => {
                    self.pos += 1;
                    let name = self.ident()?;
                    self.new_name(&name, line)?;
                    self.expect(":")?;
                    let bits = self.ty()?;
                    self.ir.scalars.push(ScalarDecl { name, bits, line });
                }
                Tok::Ident(k) if k == "for" => {
                    let l = self.for_loop()?;
                    self.ir.loops.push(l);
                }
                Tok::Punct(";") => self.pos += 1,
                _ => {
                    let got = self.describe();
                    return self.syntax(format!("expected `array`, `scalar` or `for`, found {got}"));
                }
            }
        }
        Ok(self.ir)
    }

    fn for_loop(&mut self) -> Result<Loop> {
        let line = self.line();
        self.keyword("for")?;
        let var = self.ident()?;
        if self.ir.array(&var).is_some() || self.ir.scalar(&var).is_some() || is_reserved(&var) {
            return Err(CompileError::Semantic { line, msg: format!("loop index `{var}` shadows a declaration") });
        }
        self.keyword("in")?;
        let lo = self.int()?;
        self.expect("..")?;
        let hi = self.int()?;
        if lo != 0 {
            return Err(CompileError::NotVectorizable { line, msg: "loops must start at 0".into() });
        }
        if hi == 0 {
            return Err(CompileError::Semantic { line, msg: "loop has no iterations".into() });
        }
        let lanes = if matches!(self.peek(), Some(Tok::Ident(s)) if s == "lanes") {
            self.pos += 1;
            let k = self.int()? as usize;
            if k == 0 {
                return Err(CompileError::Semantic { line, msg: "lanes must be at least 1".into() });
            }
            k
        } else {
            1
        };
        self.expect("{")?;
        let mut ctx =
            LoopCtx { var: var.clone(), temps: BTreeSet::new(), widths: BTreeSet::new(), stored: BTreeSet::new() };
        let mut body = Vec::new();
        while !self.eat("}") {
            if self.peek().is_none() {
                return self.syntax("unterminated loop body");
            }
            if self.eat(";") {
                continue;
            }
            body.push(self.stmt(&mut ctx)?);
        }
        if body.is_empty() {
            return Err(CompileError::Semantic { line, msg: "empty loop body".into() });
        }
        if ctx.widths.len() > 1 {
            return Err(CompileError::Semantic { line, msg: format!("loop mixes element widths {:?}", ctx.widths) });
        }
        let bits = ctx.widths.first().copied().unwrap_or(1);
        let l = Loop { var, trip: hi as usize, lanes, bits, body, line };
        let vf = compute_max_vf(&l);
        for name in l.arrays() {
            let Some(a) = self.ir.array(&name) else { continue };
            if a.len < vf {
                return Err(CompileError::Semantic {
                    line,
                    msg: format!("array `{name}` has {} elements but the loop touches {vf}", a.len),
                });
            }
            if ctx.stored.contains(&name) && a.len != vf {
                return Err(CompileError::NotVectorizable {
                    line,
                    msg: format!("partial store: loop writes {vf} of the {} elements of `{name}`", a.len),
                });
            }
        }
        Ok(l)
    }

    fn stmt(&mut self, ctx: &mut LoopCtx) -> Result<Stmt> {
        let line = self.line();
        let name = self.ident()?;
        if self.ir.array(&name).is_some() {
            let bits = self.ir.array(&name).map(|a| a.bits).unwrap_or(1);
            self.expect("[")?;
            self.subscript(ctx, line)?;
            self.expect("]")?;
            self.expect("=")?;
            let expr = self.expr(ctx)?;
            ctx.widths.insert(bits);
            if !ctx.stored.insert(name.clone()) {
                return Err(CompileError::NotVectorizable {
                    line,
                    msg: format!("`{name}` is written twice in one loop (loop-carried dependence)"),
                });
            }
            return Ok(Stmt::Store { array: name, expr, line });
        }
        if let Some(s) = self.ir.scalar(&name) {
            let bits = s.bits;
            let op = match self.peek() {
                Some(Tok::Punct("+=")) => ArithOp::RedSum,
                Some(Tok::Punct("&=")) => ArithOp::RedAnd,
                Some(Tok::Punct("|=")) => ArithOp::RedOr,
                Some(Tok::Punct("^=")) => ArithOp::RedXor,
                _ => {
                    return Err(CompileError::Semantic {
                        line,
                        msg: format!("scalar `{name}` can only be updated with +=, &=, |= or ^="),
                    })
                }
            };
            self.pos += 1;
            let expr = self.expr(ctx)?;
            ctx.widths.insert(bits);
            if let Some(prev) = self.reduced.insert(name.clone(), line) {
                return Err(CompileError::Semantic {
                    line,
                    msg: format!("scalar `{name}` is already reduced on line {prev}"),
                });
            }
            return Ok(Stmt::Reduce { scalar: name, op, expr, line });
        }
        if name == ctx.var {
            return Err(CompileError::Semantic { line, msg: format!("cannot assign the loop index `{name}`") });
        }
        if !self.is_punct("=") {
            return Err(CompileError::Semantic { line, msg: format!("undeclared name `{name}`") });
        }
        self.new_name(&name, line)?;
        self.pos += 1;
        let expr = self.expr(ctx)?;
        if !ctx.temps.insert(name.clone()) {
            return Err(CompileError::Semantic { line, msg: format!("temporary `{name}` is assigned twice") });
        }
        Ok(Stmt::Let { name, expr, line })
    }

    fn subscript(&mut self, ctx: &LoopCtx, line: usize) -> Result<()> {
        let start = self.pos;
        let mut depth = 0usize;
        while let Some(t) = self.peek() {
            match t {
                Tok::Punct("[") => depth += 1,
                Tok::Punct("]") if depth == 0 => break,
                Tok::Punct("]") => depth -= 1,
                _ => {}
            }
            self.pos += 1;
        }
        let toks: Vec<&Tok> = self.toks[start..self.pos].iter().map(|t| &t.0).collect();
        match toks.as_slice() {
            [Tok::Ident(v)] if *v == ctx.var => Ok(()),
            t if t.iter().any(|t| matches!(t, Tok::Punct("["))) => {
                Err(CompileError::NotVectorizable { line, msg: "indirect subscript (gather) is not supported".into() })
            }
            t if t.iter().any(|t| matches!(t, Tok::Ident(v) if *v == ctx.var)) => Err(CompileError::NotVectorizable {
                line,
                msg: format!("only unit-stride subscripts `[{}]` are supported", ctx.var),
            }),
            [] => Err(CompileError::Syntax { line, msg: "empty subscript".into() }),
            _ => Err(CompileError::NotVectorizable {
                line,
                msg: format!("subscript does not depend on the loop index `{}`", ctx.var),
            }),
        }
    }

    fn expr(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        let a = self.bor(ctx)?;
        let op = match self.peek() {
            Some(Tok::Punct(p @ ("==" | ">" | ">=" | "<" | "<="))) => *p,
            _ => return Ok(a),
        };
        self.pos += 1;
        let b = self.bor(ctx)?;
        let (a, b) = (Box::new(a), Box::new(b));
        Ok(match op {
            "==" => Expr::Binary(ArithOp::Eq, a, b),
            ">" => Expr::Binary(ArithOp::Gt, a, b),
            ">=" => Expr::Binary(ArithOp::Ge, a, b),
            "<" => Expr::Binary(ArithOp::Gt, b, a),
            _ => Expr::Binary(ArithOp::Ge, b, a),
        })
    }

    fn chain(
        &mut self,
        ctx: &mut LoopCtx,
        ops: &[(&str, ArithOp)],
        next: fn(&mut Self, &mut LoopCtx) -> Result<Expr>,
    ) -> Result<Expr> {
        let mut a = next(self, ctx)?;
        'outer: loop {
            for (p, op) in ops {
                if self.eat(p) {
                    let b = next(self, ctx)?;
                    a = Expr::Binary(*op, Box::new(a), Box::new(b));
                    continue 'outer;
                }
            }
            return Ok(a);
        }
    }

    fn bor(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        self.chain(ctx, &[("|", ArithOp::Or)], Self::bxor)
    }

    fn bxor(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        self.chain(ctx, &[("^", ArithOp::Xor)], Self::band)
    }

    fn band(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        self.chain(ctx, &[("&", ArithOp::And)], Self::sum)
    }

    fn sum(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        self.chain(ctx, &[("+", ArithOp::Add), ("-", ArithOp::Sub)], Self::product)
    }

    fn product(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        self.chain(ctx, &[("*", ArithOp::Mul), ("/", ArithOp::Div)], Self::unary)
    }

    fn unary(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        if self.eat("~") {
            return Ok(Expr::Unary(ArithOp::Not, Box::new(self.unary(ctx)?)));
        }
        self.primary(ctx)
    }

    fn args(&mut self, ctx: &mut LoopCtx, f: &str, count: usize) -> Result<Vec<Expr>> {
        self.expect("(")?;
        let mut out = vec![self.expr(ctx)?];
        while self.eat(",") {
            out.push(self.expr(ctx)?);
        }
        self.expect(")")?;
        if out.len() != count {
            return self.syntax(format!("`{f}` takes {count} argument(s), got {}", out.len()));
        }
        Ok(out)
    }

    fn primary(&mut self, ctx: &mut LoopCtx) -> Result<Expr> {
        let line = self.line();
        if self.eat("(") {
            let e = self.expr(ctx)?;
            self.expect(")")?;
            return Ok(e);
        }
        if let Some(Tok::Int(_)) = self.peek() {
            return Err(CompileError::Semantic {
                line,
                msg: "constants are not supported; pass them in an input array".into(),
            });
        }
        if self.is_punct("-") {
            return self.syntax("unary minus is not supported; use `abs`, `relu` or subtraction");
        }
        let name = self.ident()?;
        let call = matches!(self.peek(), Some(Tok::Punct("(")));
        let unary = |op: ArithOp, mut a: Vec<Expr>| Expr::Unary(op, Box::new(a.remove(0)));
        let binary = |op: ArithOp, mut a: Vec<Expr>| {
            let b = a.remove(1);
            Expr::Binary(op, Box::new(a.remove(0)), Box::new(b))
        };
        match name.as_str() {
            "max" if call => return Ok(binary(ArithOp::Max, self.args(ctx, "max", 2)?)),
            "min" if call => return Ok(binary(ArithOp::Min, self.args(ctx, "min", 2)?)),
            "abs" if call => return Ok(unary(ArithOp::Abs, self.args(ctx, "abs", 1)?)),
            "relu" if call => return Ok(unary(ArithOp::Relu, self.args(ctx, "relu", 1)?)),
            "popcount" if call => return Ok(unary(ArithOp::Bitcount, self.args(ctx, "popcount", 1)?)),
            "select" if call => {
                let mut a = self.args(ctx, "select", 3)?;
                let e = a.remove(2);
                let t = a.remove(1);
                return Ok(Expr::Select(Box::new(a.remove(0)), Box::new(t), Box::new(e)));
            }
            _ if call => return Err(CompileError::Semantic { line, msg: format!("unknown function `{name}`") }),
            _ => {}
        }
        if let Some(a) = self.ir.array(&name) {
            let bits = a.bits;
            if !self.eat("[") {
                return Err(CompileError::Semantic { line, msg: format!("array `{name}` needs a subscript") });
            }
            self.subscript(ctx, line)?;
            self.expect("]")?;
            ctx.widths.insert(bits);
            return Ok(Expr::Elem(name));
        }
        if self.is_punct("[") {
            let declared = self.ir.scalar(&name).is_some() || ctx.temps.contains(&name) || name == ctx.var;
            let msg = if declared { format!("`{name}` is not an array") } else { format!("undefined array `{name}`") };
            return Err(CompileError::Semantic { line, msg });
        }
        if self.ir.scalar(&name).is_some() {
            return Err(CompileError::Semantic {
                line,
                msg: format!("scalar `{name}` can only be a reduction target"),
            });
        }
        if name == ctx.var {
            return Err(CompileError::NotVectorizable { line, msg: format!("loop index `{name}` used as a value") });
        }
        if ctx.temps.contains(&name) {
            return Ok(Expr::Temp(name));
        }
        Err(CompileError::Semantic { line, msg: format!("undefined name `{name}`") })
    }
}

pub fn parse_kernel(text: &str) -> Result<KernelIr> {
    let toks = lex(text)?;
    Parser { toks, pos: 0, ir: KernelIr::default(), reduced: BTreeMap::new() }.kernel()
}
