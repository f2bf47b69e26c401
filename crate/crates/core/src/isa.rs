//! bbop instruction set, mat-range encoding and the textual assembly format.
//!
//! One instruction per line:
//!
//! ```text
//! # alloc A 4000 L0
//! bbop_trsp_init A, size=4000, n=32
//! bbop_add C, A, B, size=4000, n=32, ml=L0, vf=4000
//! bbop_mov T, 0, F, 0, size=4000, n=32
//! ```
//!
//! Lines starting with `#` are comments. `# alloc name size label` and
//! `# combine dst op part...` are directives; see [`Directive`].

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use crate::dram::VerticalLayout;
use crate::error::{Error, Result};

/// Bits used for each of `begin` and `end` in the encoded range.
pub const MAT_ID_BITS: u32 = 7;
pub const MAX_MAT_ID: usize = (1 << MAT_ID_BITS) - 1;

/// Contiguous span of logical mats, inclusive on both ends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatRange {
    begin: u8,
    end: u8,
}

impl MatRange {
    pub fn new(begin: usize, end: usize) -> Result<Self> {
        if begin > end || end > MAX_MAT_ID {
            return Err(Error::InvalidMatRange { begin, end });
        }
        Ok(Self { begin: begin as u8, end: end as u8 })
    }

    pub fn single(mat: usize) -> Result<Self> {
        Self::new(mat, mat)
    }

    pub fn begin(&self) -> usize {
        self.begin as usize
    }

    pub fn end(&self) -> usize {
        self.end as usize
    }

    pub fn len(&self) -> usize {
        self.end() - self.begin() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, mat: usize) -> bool {
        mat >= self.begin() && mat <= self.end()
    }

    pub fn mats(&self) -> Range<usize> {
        self.begin()..self.end() + 1
    }

    pub fn overlaps(&self, other: &MatRange) -> bool {
        self.begin <= other.end && other.begin <= self.end
    }

    /// Smallest range covering both.
    pub fn hull(&self, other: &MatRange) -> MatRange {
        MatRange { begin: self.begin.min(other.begin), end: self.end.max(other.end) }
    }

    pub fn encode(&self) -> EncodedMatRange {
        EncodedMatRange(((self.begin as u16) << MAT_ID_BITS) | self.end as u16)
    }
}

impl fmt::Display for MatRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{},{}]", self.begin, self.end)
    }
}

impl FromStr for MatRange {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse { line: 0, msg: format!("bad mat range `{s}`") };
        let inner = s.trim().strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or_else(bad)?;
        let (b, e) = inner.split_once(',').ok_or_else(bad)?;
        let b = b.trim().parse().map_err(|_| bad())?;
        let e = e.trim().parse().map_err(|_| bad())?;
        MatRange::new(b, e)
    }
}

/// 14-bit wire form: 7-bit begin followed by 7-bit end.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncodedMatRange(pub u16);

impl EncodedMatRange {
    pub fn bits(&self) -> u16 {
        self.0
    }

    pub fn decode(&self) -> Result<MatRange> {
        if self.0 >> (2 * MAT_ID_BITS) != 0 {
            return Err(Error::InvalidMatRange { begin: (self.0 >> MAT_ID_BITS) as usize, end: 0 });
        }
        let mask = MAX_MAT_ID as u16;
        MatRange::new(((self.0 >> MAT_ID_BITS) & mask) as usize, (self.0 & mask) as usize)
    }
}

pub fn encode_mat_range(r: MatRange) -> EncodedMatRange {
    r.encode()
}

/// Chip-select plus mat-identifier logic: the in-chip physical span of `r`
/// on `chip_id`, if any of the chip's mats fall inside it.
pub fn chip_select(r: MatRange, chip_id: usize, mats_per_chip: usize) -> Option<(usize, usize)> {
    let lo = chip_id * mats_per_chip;
    let hi = lo + mats_per_chip - 1;
    if r.end() < lo || r.begin() > hi {
        return None;
    }
    Some((r.begin().max(lo) - lo, r.end().min(hi) - lo))
}

/// Compiler-assigned symbolic mat location.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MatLabel(pub u32);

impl fmt::Display for MatLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "L{}", self.0)
    }
}

impl FromStr for MatLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.strip_prefix('L')
            .and_then(|d| d.parse().ok())
            .map(MatLabel)
            .ok_or_else(|| Error::Parse { line: 0, msg: format!("bad mat label `{s}`") })
    }
}

/// Mat placement of a bbop, before or after label translation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Ml {
    Label(MatLabel),
    Range(MatRange),
}

impl fmt::Display for Ml {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ml::Label(l) => write!(f, "{l}"),
            Ml::Range(r) => write!(f, "{r}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    And,
    Or,
    Xor,
    Not,
    Abs,
    Relu,
    Bitcount,
    Max,
    Min,
    Eq,
    Gt,
    Ge,
    RedSum,
    RedAnd,
    RedOr,
    RedXor,
}

impl ArithOp {
    pub const ALL: [ArithOp; 20] = [
        ArithOp::Add,
        ArithOp::Sub,
        ArithOp::Mul,
        ArithOp::Div,
        ArithOp::And,
        ArithOp::Or,
        ArithOp::Xor,
        ArithOp::Not,
        ArithOp::Abs,
        ArithOp::Relu,
        ArithOp::Bitcount,
        ArithOp::Max,
        ArithOp::Min,
        ArithOp::Eq,
        ArithOp::Gt,
        ArithOp::Ge,
        ArithOp::RedSum,
        ArithOp::RedAnd,
        ArithOp::RedOr,
        ArithOp::RedXor,
    ];

    /// Element-wise operations executed purely with AAP/AP.
    pub const ELEMENTWISE: [ArithOp; 16] = [
        ArithOp::Add,
        ArithOp::Sub,
        ArithOp::Mul,
        ArithOp::Div,
        ArithOp::And,
        ArithOp::Or,
        ArithOp::Xor,
        ArithOp::Not,
        ArithOp::Abs,
        ArithOp::Relu,
        ArithOp::Bitcount,
        ArithOp::Max,
        ArithOp::Min,
        ArithOp::Eq,
        ArithOp::Gt,
        ArithOp::Ge,
    ];

    pub fn is_unary(self) -> bool {
        matches!(
            self,
            ArithOp::Not
                | ArithOp::Abs
                | ArithOp::Relu
                | ArithOp::Bitcount
                | ArithOp::RedSum
                | ArithOp::RedAnd
                | ArithOp::RedOr
                | ArithOp::RedXor
        )
    }

    pub fn is_reduction(self) -> bool {
        matches!(self, ArithOp::RedSum | ArithOp::RedAnd | ArithOp::RedOr | ArithOp::RedXor)
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            ArithOp::Add => "add",
            ArithOp::Sub => "sub",
            ArithOp::Mul => "mul",
            ArithOp::Div => "div",
            ArithOp::And => "and",
            ArithOp::Or => "or",
            ArithOp::Xor => "xor",
            ArithOp::Not => "not",
            ArithOp::Abs => "abs",
            ArithOp::Relu => "relu",
            ArithOp::Bitcount => "bitcount",
            ArithOp::Max => "max",
            ArithOp::Min => "min",
            ArithOp::Eq => "eq",
            ArithOp::Gt => "gt",
            ArithOp::Ge => "ge",
            ArithOp::RedSum => "red_sum",
            ArithOp::RedAnd => "red_and",
            ArithOp::RedOr => "red_or",
            ArithOp::RedXor => "red_xor",
        }
    }

    pub fn from_mnemonic(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|op| op.mnemonic() == s)
    }

    /// Scalar reference semantics on `n`-bit lanes.
    ///
    /// Values are unsigned except for `abs` and `relu`, which read the lane as
    /// two's complement. Comparisons yield 0 or 1. Division by zero saturates
    /// to all ones.
    pub fn eval(self, a: u64, b: u64, n: u32) -> u64 {
        let mask = lane_mask(n);
        let (a, b) = (a & mask, b & mask);
        let sign = 1u64 << (n - 1);
        let r = match self {
            ArithOp::Add | ArithOp::RedSum => a.wrapping_add(b),
            ArithOp::Sub => a.wrapping_sub(b),
            ArithOp::Mul => a.wrapping_mul(b),
            ArithOp::Div => a.checked_div(b).unwrap_or(mask),
            ArithOp::And | ArithOp::RedAnd => a & b,
            ArithOp::Or | ArithOp::RedOr => a | b,
            ArithOp::Xor | ArithOp::RedXor => a ^ b,
            ArithOp::Not => !a,
            ArithOp::Abs => {
                if a & sign != 0 {
                    (!a).wrapping_add(1)
                } else {
                    a
                }
            }
            ArithOp::Relu => {
                if a & sign != 0 {
                    0
                } else {
                    a
                }
            }
            ArithOp::Bitcount => a.count_ones() as u64,
            ArithOp::Max => a.max(b),
            ArithOp::Min => a.min(b),
            ArithOp::Eq => (a == b) as u64,
            ArithOp::Gt => (a > b) as u64,
            ArithOp::Ge => (a >= b) as u64,
        };
        r & mask
    }

    /// Identity element for reductions.
    pub fn identity(self, n: u32) -> u64 {
        match self {
            ArithOp::RedAnd => lane_mask(n),
            _ => 0,
        }
    }

    /// Element-wise counterpart used for each folding step of a reduction.
    pub fn fold_op(self) -> ArithOp {
        match self {
            ArithOp::RedSum => ArithOp::Add,
            ArithOp::RedAnd => ArithOp::And,
            ArithOp::RedOr => ArithOp::Or,
            ArithOp::RedXor => ArithOp::Xor,
            other => other,
        }
    }
}

pub fn lane_mask(n: u32) -> u64 {
    if n >= 64 {
        u64::MAX
    } else {
        (1u64 << n) - 1
    }
}

/// Opaque operand handle; bound to allocator regions by name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Operand(pub String);

impl Operand {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Operand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BbopKind {
    TrspInit,
    UnaryArith(ArithOp),
    BinaryArith(ArithOp),
    IfElse,
    Mov,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bbop {
    pub kind: BbopKind,
    pub dst: Operand,
    pub src1: Option<Operand>,
    pub src2: Option<Operand>,
    /// Predicate operand of `if_else`; one bit per element (bit 0 of the lane).
    pub sel: Option<Operand>,
    pub size: usize,
    pub n: u32,
    pub ml: Option<Ml>,
    pub vf: Option<usize>,
    pub dst_idx: usize,
    pub src_idx: usize,
}

impl Bbop {
    fn base(kind: BbopKind, dst: Operand, size: usize, n: u32) -> Self {
        Self { kind, dst, src1: None, src2: None, sel: None, size, n, ml: None, vf: None, dst_idx: 0, src_idx: 0 }
    }

    pub fn trsp_init(dst: Operand, size: usize, n: u32) -> Self {
        Self::base(BbopKind::TrspInit, dst, size, n)
    }

    pub fn arith(op: ArithOp, dst: Operand, srcs: &[Operand], size: usize, n: u32, ml: Ml, vf: usize) -> Self {
        let kind = if op.is_unary() { BbopKind::UnaryArith(op) } else { BbopKind::BinaryArith(op) };
        let mut b = Self::base(kind, dst, size, n);
        b.src1 = srcs.first().cloned();
        b.src2 = srcs.get(1).cloned();
        b.ml = Some(ml);
        b.vf = Some(vf);
        b
    }

    #[allow(clippy::too_many_arguments)]
    pub fn if_else(
        dst: Operand,
        src1: Operand,
        src2: Operand,
        sel: Operand,
        size: usize,
        n: u32,
        ml: Ml,
        vf: usize,
    ) -> Self {
        let mut b = Self::base(BbopKind::IfElse, dst, size, n);
        b.src1 = Some(src1);
        b.src2 = Some(src2);
        b.sel = Some(sel);
        b.ml = Some(ml);
        b.vf = Some(vf);
        b
    }

    pub fn mov(dst: Operand, dst_idx: usize, src: Operand, src_idx: usize, size: usize, n: u32) -> Self {
        let mut b = Self::base(BbopKind::Mov, dst, size, n);
        b.src1 = Some(src);
        b.dst_idx = dst_idx;
        b.src_idx = src_idx;
        b
    }

    pub fn op(&self) -> Option<ArithOp> {
        match self.kind {
            BbopKind::UnaryArith(op) | BbopKind::BinaryArith(op) => Some(op),
            _ => None,
        }
    }

    /// Operands read by this instruction, in operand order.
    pub fn sources(&self) -> Vec<&Operand> {
        [&self.src1, &self.src2, &self.sel].into_iter().flatten().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Parse { line: 0, msg });
        if self.n == 0 || self.n > 64 {
            return fail(format!("bitwidth n={} outside 1..=64", self.n));
        }
        if self.size == 0 {
            return fail("size must be positive".into());
        }
        match self.kind {
            BbopKind::TrspInit => {}
            BbopKind::UnaryArith(op) | BbopKind::BinaryArith(op) => {
                let want_binary = !op.is_unary();
                if matches!(self.kind, BbopKind::BinaryArith(_)) != want_binary {
                    return fail(format!("{} arity mismatch", op.mnemonic()));
                }
                if self.src1.is_none() || (want_binary && self.src2.is_none()) {
                    return fail(format!("{} is missing operands", op.mnemonic()));
                }
                self.check_ml_vf()?;
            }
            BbopKind::IfElse => {
                if self.src1.is_none() || self.src2.is_none() || self.sel.is_none() {
                    return fail("if_else needs src1, src2 and sel".into());
                }
                self.check_ml_vf()?;
            }
            BbopKind::Mov => {
                if self.src1.is_none() {
                    return fail("mov needs a source".into());
                }
                if self.ml.is_some() || self.vf.is_some() {
                    return fail("mov carries no ml/vf".into());
                }
            }
        }
        Ok(())
    }

    fn check_ml_vf(&self) -> Result<()> {
        match (self.ml, self.vf) {
            (Some(_), Some(vf)) if vf <= self.size && vf > 0 => Ok(()),
            (Some(_), Some(vf)) => {
                Err(Error::Parse { line: 0, msg: format!("vf={vf} must be in 1..=size ({})", self.size) })
            }
            _ => Err(Error::Parse { line: 0, msg: "arithmetic bbop needs ml and vf".into() }),
        }
    }

    pub fn mnemonic(&self) -> String {
        match self.kind {
            BbopKind::TrspInit => "bbop_trsp_init".into(),
            BbopKind::UnaryArith(op) | BbopKind::BinaryArith(op) => format!("bbop_{}", op.mnemonic()),
            BbopKind::IfElse => "bbop_if_else".into(),
            BbopKind::Mov => "bbop_mov".into(),
        }
    }
}

impl fmt::Display for Bbop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.mnemonic(), self.dst)?;
        if self.kind == BbopKind::Mov {
            let src = self.src1.as_ref().map(|s| s.name()).unwrap_or("?");
            return write!(f, ", {}, {}, {}, size={}, n={}", self.dst_idx, src, self.src_idx, self.size, self.n);
        }
        for s in self.sources() {
            write!(f, ", {s}")?;
        }
        write!(f, ", size={}, n={}", self.size, self.n)?;
        if let Some(ml) = self.ml {
            write!(f, ", ml={ml}")?;
        }
        if let Some(vf) = self.vf {
            write!(f, ", vf={vf}")?;
        }
        Ok(())
    }
}

/// Non-instruction lines that carry meaning.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Directive {
    /// `# alloc name size label`
    Alloc { name: Operand, size: usize, label: MatLabel },
    /// `# combine dst op part...`: host-side fold of strip-mined partial reductions.
    Combine { dst: Operand, op: ArithOp, parts: Vec<Operand> },
    /// `# part name array offset`: `name` holds a strip-mined slice of `array`
    /// starting at element `offset`.
    Part { name: Operand, array: Operand, offset: usize },
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Directive::Alloc { name, size, label } => write!(f, "# alloc {name} {size} {label}"),
            Directive::Combine { dst, op, parts } => {
                write!(f, "# combine {dst} {}", op.mnemonic())?;
                for p in parts {
                    write!(f, " {p}")?;
                }
                Ok(())
            }
            Directive::Part { name, array, offset } => write!(f, "# part {name} {array} {offset}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Line {
    Instr(Bbop),
    Directive(Directive),
}

/// Parsed assembly file, in source order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Program {
    pub lines: Vec<Line>,
}

impl Program {
    pub fn instructions(&self) -> impl Iterator<Item = &Bbop> {
        self.lines.iter().filter_map(|l| match l {
            Line::Instr(b) => Some(b),
            Line::Directive(_) => None,
        })
    }

    pub fn directives(&self) -> impl Iterator<Item = &Directive> {
        self.lines.iter().filter_map(|l| match l {
            Line::Directive(d) => Some(d),
            Line::Instr(_) => None,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let relabel = |e: Error| match e {
                Error::Parse { msg, .. } => Error::Parse { line: lineno, msg },
                Error::InvalidMatRange { begin, end } => {
                    Error::Parse { line: lineno, msg: format!("invalid mat range [{begin},{end}]") }
                }
                other => other,
            };
            let trimmed = raw.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(d) = parse_directive(comment).map_err(relabel)? {
                    lines.push(Line::Directive(d));
                }
                continue;
            }
            let code = trimmed.split('#').next().unwrap_or("").trim();
            if code.is_empty() {
                continue;
            }
            let b = parse_instr(code).map_err(relabel)?;
            b.validate().map_err(relabel)?;
            lines.push(Line::Instr(b));
        }
        Ok(Self { lines })
    }
}

impl fmt::Display for Program {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for l in &self.lines {
            match l {
                Line::Instr(b) => writeln!(f, "{b}")?,
                Line::Directive(d) => writeln!(f, "{d}")?,
            }
        }
        Ok(())
    }
}

fn perr(msg: impl Into<String>) -> Error {
    Error::Parse { line: 0, msg: msg.into() }
}

fn parse_directive(comment: &str) -> Result<Option<Directive>> {
    let mut words = comment.split_whitespace();
    match words.next() {
        Some("alloc") => {
            let parts: Vec<&str> = words.collect();
            if parts.len() != 3 {
                return Err(perr("`# alloc` expects: name size label"));
            }
            let size = parts[1].parse().map_err(|_| perr(format!("bad alloc size `{}`", parts[1])))?;
            Ok(Some(Directive::Alloc { name: Operand::new(parts[0]), size, label: parts[2].parse()? }))
        }
        Some("combine") => {
            let parts: Vec<&str> = words.collect();
            if parts.len() < 3 {
                return Err(perr("`# combine` expects: dst op part..."));
            }
            let op = ArithOp::from_mnemonic(parts[1])
                .filter(|op| op.is_reduction())
                .ok_or_else(|| perr(format!("`{}` is not a reduction", parts[1])))?;
            Ok(Some(Directive::Combine {
                dst: Operand::new(parts[0]),
                op,
                parts: parts[2..].iter().map(|p| Operand::new(*p)).collect(),
            }))
        }
        Some("part") => {
            let parts: Vec<&str> = words.collect();
            if parts.len() != 3 {
                return Err(perr("`# part` expects: name array offset"));
            }
            let offset = parts[2].parse().map_err(|_| perr(format!("bad part offset `{}`", parts[2])))?;
            Ok(Some(Directive::Part { name: Operand::new(parts[0]), array: Operand::new(parts[1]), offset }))
        }
        _ => Ok(None),
    }
}

fn parse_instr(code: &str) -> Result<Bbop> {
    let (mnemonic, rest) = code.split_once(char::is_whitespace).unwrap_or((code, ""));
    let name = mnemonic.strip_prefix("bbop_").ok_or_else(|| perr(format!("unknown instruction `{mnemonic}`")))?;
    let mut positional = Vec::new();
    let mut size = None;
    let mut n = None;
    let mut ml = None;
    let mut vf = None;
    for field in split_fields(rest) {
        if let Some((k, v)) = field.split_once('=') {
            let v = v.trim();
            let num = |v: &str| v.parse::<usize>().map_err(|_| perr(format!("`{k}` needs an integer, got `{v}`")));
            match k.trim() {
                "size" => size = Some(num(v)?),
                "n" => n = Some(num(v)? as u32),
                "vf" => vf = Some(num(v)?),
                "ml" => {
                    ml = Some(if v.starts_with('[') { Ml::Range(v.parse()?) } else { Ml::Label(v.parse()?) });
                }
                other => return Err(perr(format!("unknown field `{other}`"))),
            }
        } else {
            positional.push(field.trim().to_string());
        }
    }
    let size = size.ok_or_else(|| perr("missing size="))?;
    let n = n.ok_or_else(|| perr("missing n="))?;
    let ops = |count: usize| -> Result<Vec<Operand>> {
        if positional.len() != count {
            return Err(perr(format!("{mnemonic} takes {count} operands, got {}", positional.len())));
        }
        Ok(positional.iter().map(Operand::new).collect())
    };
    let need = |x: Option<Ml>| x.ok_or_else(|| perr("missing ml="));
    let need_vf = |x: Option<usize>| x.ok_or_else(|| perr("missing vf="));
    let b = match name {
        "trsp_init" => {
            let o = ops(1)?;
            Bbop::trsp_init(o[0].clone(), size, n)
        }
        "mov" => {
            let o = ops(4)?;
            let idx = |s: &Operand| s.0.parse::<usize>().map_err(|_| perr(format!("bad element index `{s}`")));
            let mut b = Bbop::mov(o[0].clone(), idx(&o[1])?, o[2].clone(), idx(&o[3])?, size, n);
            b.ml = ml;
            b.vf = vf;
            b
        }
        "if_else" => {
            let o = ops(4)?;
            Bbop::if_else(o[0].clone(), o[1].clone(), o[2].clone(), o[3].clone(), size, n, need(ml)?, need_vf(vf)?)
        }
        other => {
            let op = ArithOp::from_mnemonic(other).ok_or_else(|| perr(format!("unknown instruction `{mnemonic}`")))?;
            let o = ops(if op.is_unary() { 2 } else { 3 })?;
            Bbop::arith(op, o[0].clone(), &o[1..], size, n, need(ml)?, need_vf(vf)?)
        }
    };
    Ok(b)
}

/// Splits on commas that are not inside `[...]`.
fn split_fields(s: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => depth -= 1,
            ',' if depth == 0 => {
                out.push(&s[start..i]);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !s[start..].trim().is_empty() {
        out.push(&s[start..]);
    }
    out.into_iter().filter(|f| !f.trim().is_empty()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MovRoute {
    /// Same source and destination mat: LC-MOV through helper flip-flops.
    IntraMat,
    /// Different mats: GB-MOV through the global row buffer.
    InterMat,
}

/// Elements of a move that share a (source mat, destination mat) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovSegment {
    /// Offsets relative to the start of the move (0..size).
    pub elements: Range<usize>,
    pub src_mat: usize,
    pub dst_mat: usize,
    pub route: MovRoute,
}

/// Routes every element of a `bbop_mov` given where its operands live.
pub fn mov_route(
    b: &Bbop,
    src: &VerticalLayout,
    dst: &VerticalLayout,
    columns_per_mat: usize,
) -> Result<Vec<MovSegment>> {
    if b.kind != BbopKind::Mov {
        return Err(Error::Unsupported(format!("{} is not a move", b.mnemonic())));
    }
    if b.src_idx + b.size > src.elements || b.dst_idx + b.size > dst.elements {
        return Err(Error::Placement(format!("move of {} elements exceeds operand bounds", b.size)));
    }
    let mut segs: Vec<MovSegment> = Vec::new();
    for e in 0..b.size {
        let s = (b.src_idx + e) / columns_per_mat + src.mat_span.begin();
        let d = (b.dst_idx + e) / columns_per_mat + dst.mat_span.begin();
        match segs.last_mut() {
            Some(seg) if seg.src_mat == s && seg.dst_mat == d => seg.elements.end = e + 1,
            _ => segs.push(MovSegment {
                elements: e..e + 1,
                src_mat: s,
                dst_mat: d,
                route: if s == d { MovRoute::IntraMat } else { MovRoute::InterMat },
            }),
        }
    }
    Ok(segs)
}
