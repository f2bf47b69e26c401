//! Microprograms: ordered AAP/AP/move command lists that realize one bbop
//! bit-serially with majority and NOT, plus their functional execution.

use std::fmt;

use crate::dram::{DramModule, RowGroups, Wordline};
use crate::error::{Error, Result};
use crate::geometry::COMPUTE_ROWS;
use crate::interconnect::{self, MoveDescriptor};
use crate::isa::{ArithOp, Bbop, BbopKind, MatRange};

/// Column-wise majority of three bits.
pub fn tra_majority(a: bool, b: bool, c: bool) -> bool {
    (a as u8 + b as u8 + c as u8) >= 2
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandKind {
    /// Row copy. A destination holding more than one wordline is a compute-row
    /// group written in a single second activation.
    Aap {
        src: Wordline,
        dst: Vec<Wordline>,
    },
    /// Triple-row activation followed by precharge.
    Ap {
        rows: [Wordline; 3],
    },
    GbMov(MoveDescriptor),
    LcMov(MoveDescriptor),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Command {
    pub kind: CommandKind,
    pub mats: MatRange,
}

impl Command {
    pub fn aap(src: Wordline, dst: &[Wordline], mats: MatRange) -> Self {
        Self { kind: CommandKind::Aap { src, dst: dst.to_vec() }, mats }
    }

    pub fn ap(rows: [Wordline; 3], mats: MatRange) -> Self {
        Self { kind: CommandKind::Ap { rows }, mats }
    }

    pub fn gb_mov(d: MoveDescriptor) -> Result<Self> {
        let mats = MatRange::new(d.src.mat.min(d.dst.mat), d.src.mat.max(d.dst.mat))?;
        Ok(Self { kind: CommandKind::GbMov(d), mats })
    }

    pub fn lc_mov(d: MoveDescriptor) -> Result<Self> {
        Ok(Self { kind: CommandKind::LcMov(d), mats: MatRange::single(d.src.mat)? })
    }

    /// Short name used in event traces.
    pub fn name(&self) -> &'static str {
        match self.kind {
            CommandKind::Aap { .. } => "AAP",
            CommandKind::Ap { .. } => "AP",
            CommandKind::GbMov(_) => "GB-MOV",
            CommandKind::LcMov(_) => "LC-MOV",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let compute = |wl: &Wordline| wl.row < COMPUTE_ROWS;
        match &self.kind {
            CommandKind::Aap { dst, .. } => {
                if dst.is_empty() || dst.len() > 3 {
                    return Err(Error::Protocol(format!("AAP needs 1..=3 destination rows, got {}", dst.len())));
                }
                if dst.len() > 1 && !dst.iter().all(compute) {
                    return Err(Error::Protocol("multi-row AAP destinations must be compute rows".into()));
                }
            }
            CommandKind::Ap { rows } => {
                if !rows.iter().all(compute) {
                    return Err(Error::Protocol("AP rows must be compute rows".into()));
                }
                if rows[0].row == rows[1].row || rows[1].row == rows[2].row || rows[0].row == rows[2].row {
                    return Err(Error::Protocol("AP rows must be distinct".into()));
                }
            }
            CommandKind::GbMov(d) => {
                if d.src.mat == d.dst.mat {
                    return Err(Error::SameMatGlobalMove(d.src.mat));
                }
            }
            CommandKind::LcMov(d) => {
                if d.src.mat != d.dst.mat {
                    return Err(Error::CrossMatLocalMove { src: d.src.mat, dst: d.dst.mat });
                }
            }
        }
        Ok(())
    }
}

/// Name of a row as printed in microprogram traces.
pub fn row_name(wl: Wordline) -> String {
    const NAMES: [&str; COMPUTE_ROWS] = ["C0", "C1", "T0", "T1", "T2", "T3", "DCC0", "DCC1"];
    let base = if wl.row < COMPUTE_ROWS { NAMES[wl.row].to_string() } else { format!("r{}", wl.row) };
    if wl.negated {
        format!("!{base}")
    } else {
        base
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mats = format!("mats[{}..{}]", self.mats.begin(), self.mats.end());
        match &self.kind {
            CommandKind::Aap { src, dst } => {
                let dst: Vec<String> = dst.iter().map(|&w| row_name(w)).collect();
                write!(f, "AAP {} -> {} @ {mats}", row_name(*src), dst.join(","))
            }
            CommandKind::Ap { rows } => {
                let rows: Vec<String> = rows.iter().map(|&w| row_name(w)).collect();
                write!(f, "AP {} @ {mats}", rows.join(","))
            }
            CommandKind::GbMov(d) => write!(f, "GB-MOV {d}"),
            CommandKind::LcMov(d) => write!(f, "LC-MOV {d}"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UprogStats {
    pub aap_count: usize,
    pub ap_count: usize,
    pub gbmov_count: usize,
    pub lcmov_count: usize,
}

impl UprogStats {
    pub fn record(&mut self, cmd: &Command) {
        match cmd.kind {
            CommandKind::Aap { .. } => self.aap_count += 1,
            CommandKind::Ap { .. } => self.ap_count += 1,
            CommandKind::GbMov(_) => self.gbmov_count += 1,
            CommandKind::LcMov(_) => self.lcmov_count += 1,
        }
    }

    pub fn total(&self) -> usize {
        self.aap_count + self.ap_count + self.gbmov_count + self.lcmov_count
    }

    pub fn merge(&mut self, other: &UprogStats) {
        self.aap_count += other.aap_count;
        self.ap_count += other.ap_count;
        self.gbmov_count += other.gbmov_count;
        self.lcmov_count += other.lcmov_count;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MicroProgram {
    commands: Vec<Command>,
    pub kind: Option<BbopKind>,
    pub n: u32,
    stats: UprogStats,
    /// Row holding the final carry of an addition.
    pub carry_row: Option<usize>,
    /// Row flagging lanes whose divisor was zero.
    pub poison_row: Option<usize>,
}

impl MicroProgram {
    pub fn new(kind: Option<BbopKind>, n: u32) -> Self {
        Self { commands: Vec::new(), kind, n, stats: UprogStats::default(), carry_row: None, poison_row: None }
    }

    pub fn push(&mut self, cmd: Command) {
        self.stats.record(&cmd);
        self.commands.push(cmd);
    }

    pub fn extend(&mut self, other: MicroProgram) {
        for c in other.commands {
            self.push(c);
        }
    }

    pub fn commands(&self) -> &[Command] {
        &self.commands
    }

    pub fn stats(&self) -> &UprogStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.commands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.commands.is_empty()
    }

    /// Hull of every command's mat range.
    pub fn mat_span(&self) -> Option<MatRange> {
        self.commands.iter().map(|c| c.mats).reduce(|a, b| a.hull(&b))
    }

    /// One command per line, in execution order.
    pub fn trace(&self) -> String {
        let mut out = String::new();
        for c in &self.commands {
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }
}

/// Row bases of the operands of one bbop inside its mat range.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UprogPlacement {
    pub mats: MatRange,
    pub dst: usize,
    pub src1: Option<usize>,
    pub src2: Option<usize>,
    pub sel: Option<usize>,
    /// First row of the microprogram's temporary rows.
    pub scratch_base: usize,
    /// One past the last temporary row.
    pub scratch_end: usize,
}

pub fn execute_aap(dram: &mut DramModule, src: Wordline, dst: &[Wordline], mats: MatRange) -> Result<()> {
    dram.activate_wordlines(mats, &[src])?;
    dram.activate_copy(mats, dst)?;
    dram.precharge(mats)
}

pub fn execute_ap(dram: &mut DramModule, rows: [Wordline; 3], mats: MatRange) -> Result<()> {
    dram.activate_wordlines(mats, &rows)?;
    dram.precharge(mats)
}

pub fn execute_command(dram: &mut DramModule, cmd: &Command) -> Result<()> {
    cmd.validate()?;
    match &cmd.kind {
        CommandKind::Aap { src, dst } => execute_aap(dram, *src, dst, cmd.mats),
        CommandKind::Ap { rows } => execute_ap(dram, *rows, cmd.mats),
        CommandKind::GbMov(d) => interconnect::gb_mov(dram, d),
        CommandKind::LcMov(d) => interconnect::lc_mov(dram, d),
    }
}

/// Runs every command in order.
pub fn execute_uprog(dram: &mut DramModule, p: &MicroProgram) -> Result<()> {
    if let Some(span) = p.mat_span() {
        if span.end() >= dram.mats().len() {
            return Err(Error::Placement(format!("microprogram span {span} exceeds the module")));
        }
    }
    for c in &p.commands {
        execute_command(dram, c)?;
    }
    Ok(())
}

/// Builds the microprogram of an arithmetic or predication bbop for the given
/// placement. Reductions are planned by the interconnect instead.
pub fn build_uprog(b: &Bbop, pl: &UprogPlacement) -> Result<MicroProgram> {
    let n = b.n as usize;
    let mut bld = Builder::new(b.kind, b.n, pl)?;
    let rows = |base: Option<usize>, what: &str| -> Result<Vec<Wordline>> {
        let base = base.ok_or_else(|| Error::Placement(format!("{} has no {what} placement", b.mnemonic())))?;
        Ok((0..n).map(|k| Wordline::plain(base + k)).collect())
    };
    let dst = rows(Some(pl.dst), "dst")?;
    match b.kind {
        BbopKind::BinaryArith(op) | BbopKind::UnaryArith(op) => {
            let a = rows(pl.src1, "src1")?;
            let bb = if op.is_unary() { Vec::new() } else { rows(pl.src2, "src2")? };
            if bld.needs_private_result(op, &dst, &a, &bb) {
                let tmp = bld.take_n(n)?;
                bld.arith(op, &a, &bb, &tmp)?;
                for (&t, &d) in tmp.iter().zip(&dst) {
                    bld.copy(t, d);
                }
            } else {
                bld.arith(op, &a, &bb, &dst)?;
            }
        }
        BbopKind::IfElse => {
            let a = rows(pl.src1, "src1")?;
            let bb = rows(pl.src2, "src2")?;
            let sel = pl.sel.ok_or_else(|| Error::Placement("if_else has no sel placement".into()))?;
            let g = bld.g;
            bld.aap(Wordline::plain(sel), &[Wordline::plain(g.dcc_rows[0])]);
            for k in 0..n {
                bld.mux_d0(a[k], bb[k], dst[k]);
            }
        }
        BbopKind::TrspInit | BbopKind::Mov => {
            return Err(Error::Unsupported(format!("{} has no AAP/AP microprogram", b.mnemonic())))
        }
    }
    Ok(bld.prog)
}

/// Adds `a` and `b` into `out` (all `n` rows from the given bases).
pub fn build_add(n: u32, a: usize, b: usize, out: usize, pl: &UprogPlacement) -> Result<MicroProgram> {
    let bb = Bbop::arith(
        ArithOp::Add,
        crate::isa::Operand::new("_"),
        &[crate::isa::Operand::new("_"), crate::isa::Operand::new("_")],
        1,
        n,
        crate::isa::Ml::Range(pl.mats),
        1,
    );
    build_uprog(&bb, &UprogPlacement { dst: out, src1: Some(a), src2: Some(b), sel: None, ..*pl })
}

struct Builder {
    prog: MicroProgram,
    mats: MatRange,
    g: RowGroups,
    /// Free temporary rows, highest first so `pop` yields the lowest.
    free: Vec<usize>,
    scratch: std::ops::Range<usize>,
}

impl Builder {
    fn new(kind: BbopKind, n: u32, pl: &UprogPlacement) -> Result<Self> {
        if pl.scratch_base < COMPUTE_ROWS || pl.scratch_end < pl.scratch_base {
            return Err(Error::Placement("invalid scratch rows".into()));
        }
        Ok(Self {
            prog: MicroProgram::new(Some(kind), n),
            mats: pl.mats,
            g: RowGroups::STANDARD,
            free: (pl.scratch_base..pl.scratch_end).rev().collect(),
            scratch: pl.scratch_base..pl.scratch_end,
        })
    }

    fn c0(&self) -> Wordline {
        Wordline::plain(self.g.c0)
    }

    fn c1(&self) -> Wordline {
        Wordline::plain(self.g.c1)
    }

    fn t(&self, i: usize) -> Wordline {
        Wordline::plain(self.g.t_rows[i])
    }

    fn d(&self, i: usize) -> Wordline {
        Wordline::plain(self.g.dcc_rows[i])
    }

    fn nd(&self, i: usize) -> Wordline {
        Wordline::negated(self.g.dcc_rows[i])
    }

    fn take(&mut self) -> Result<Wordline> {
        let have = self.scratch.len();
        self.free.pop().map(Wordline::plain).ok_or(Error::ScratchExhausted { need: have + 1, have })
    }

    fn take_n(&mut self, k: usize) -> Result<Vec<Wordline>> {
        if self.free.len() < k {
            let have = self.scratch.len();
            return Err(Error::ScratchExhausted { need: have - self.free.len() + k, have });
        }
        (0..k).map(|_| self.take()).collect()
    }

    fn release(&mut self, rows: &[Wordline]) {
        for wl in rows {
            if self.scratch.contains(&wl.row) && !wl.negated && !self.free.contains(&wl.row) {
                self.free.push(wl.row);
            }
        }
        self.free.sort_unstable_by(|a, b| b.cmp(a));
    }

    fn aap(&mut self, src: Wordline, dst: &[Wordline]) {
        self.prog.push(Command::aap(src, dst, self.mats));
    }

    fn ap(&mut self, rows: [Wordline; 3]) {
        self.prog.push(Command::ap(rows, self.mats));
    }

    fn copy(&mut self, src: Wordline, dst: Wordline) {
        self.aap(src, &[dst]);
    }

    /// `dst = MAJ(x, y, z)`; clobbers T0..T2.
    fn maj3(&mut self, x: Wordline, y: Wordline, z: Wordline, dst: Wordline) {
        let (t0, t1, t2) = (self.t(0), self.t(1), self.t(2));
        self.copy(x, t0);
        self.copy(y, t1);
        self.copy(z, t2);
        self.ap([t0, t1, t2]);
        self.copy(t0, dst);
    }

    fn and(&mut self, x: Wordline, y: Wordline, dst: Wordline) {
        let c0 = self.c0();
        self.maj3(x, y, c0, dst);
    }

    fn or(&mut self, x: Wordline, y: Wordline, dst: Wordline) {
        let c1 = self.c1();
        self.maj3(x, y, c1, dst);
    }

    /// Clobbers DCC0.
    fn not(&mut self, x: Wordline, dst: Wordline) {
        let (d0, nd0) = (self.d(0), self.nd(0));
        self.copy(x, d0);
        self.copy(nd0, dst);
    }

    /// Clobbers T0..T3 and DCC0.
    fn xor(&mut self, x: Wordline, y: Wordline, dst: Wordline) {
        let (c0, c1, t3, d0, nd0) = (self.c0(), self.c1(), self.t(3), self.d(0), self.nd(0));
        self.maj3(x, y, c0, d0);
        self.maj3(x, y, c1, t3);
        self.maj3(t3, nd0, c0, dst);
    }

    /// `dst = DCC0 ? x : y` with the selector held in DCC0; clobbers T0..T3 and
    /// DCC1 but leaves DCC0 intact.
    fn mux_d0(&mut self, x: Wordline, y: Wordline, dst: Wordline) {
        let (c0, c1, t3, d0, nd0, d1) = (self.c0(), self.c1(), self.t(3), self.d(0), self.nd(0), self.d(1));
        self.maj3(d0, x, c0, t3);
        self.maj3(nd0, y, c0, d1);
        self.maj3(t3, d1, c1, dst);
    }

    /// Ripple-carry addition of `out.len()` bits. Operands shorter than the
    /// output are zero-extended. Every bit costs five AAPs and three APs; the
    /// carry lives in both DCC rows between bits, so after the last bit DCC0
    /// holds the carry-out. With `cout` set the carry-out is also copied there.
    fn add_core(&mut self, a: &[Wordline], b: &[Wordline], out: &[Wordline], cin: Wordline, cout: Option<Wordline>) {
        let (c0, d0, d1, nd0, nd1) = (self.c0(), self.d(0), self.d(1), self.nd(0), self.nd(1));
        let [t0, t1, t2, t3] = [self.t(0), self.t(1), self.t(2), self.t(3)];
        self.aap(cin, &[d0, d1]);
        for (i, &o) in out.iter().enumerate() {
            let ai = a.get(i).copied().unwrap_or(c0);
            let bi = b.get(i).copied().unwrap_or(c0);
            self.aap(ai, &[t0, t1]);
            self.aap(bi, &[t2, t3]);
            // T0 = T2 = MAJ(a, b, !c); DCC1 is consumed
            self.ap([t0, t2, nd1]);
            self.aap(d0, &[t0]);
            // T1 = T3 = DCC0 = carry out
            self.ap([t1, t3, d0]);
            // sum = MAJ(!cout, MAJ(a, b, !c), c)
            self.ap([nd0, t2, t0]);
            self.aap(t2, &[o]);
            self.aap(t1, &[d0, d1]);
        }
        if let Some(c) = cout {
            self.aap(d0, &[c]);
        }
    }

    /// Leaves `a >= b` (unsigned) in DCC0.
    fn ge_into_d0(&mut self, a: &[Wordline], b: &[Wordline]) -> Result<()> {
        let nb = self.take_n(b.len())?;
        for (&x, &y) in b.iter().zip(&nb) {
            self.not(x, y);
        }
        let junk = self.take()?;
        let c1 = self.c1();
        self.add_core(a, &nb, &vec![junk; a.len()], c1, None);
        self.release(&nb);
        self.release(&[junk]);
        Ok(())
    }

    fn needs_private_result(&self, op: ArithOp, dst: &[Wordline], a: &[Wordline], b: &[Wordline]) -> bool {
        let clobbers = matches!(op, ArithOp::Mul | ArithOp::Div | ArithOp::Bitcount | ArithOp::Abs);
        clobbers && dst.iter().any(|d| a.contains(d) || b.contains(d))
    }

    fn zero_fill(&mut self, rows: &[Wordline]) {
        let c0 = self.c0();
        for &r in rows {
            self.copy(c0, r);
        }
    }

    fn arith(&mut self, op: ArithOp, a: &[Wordline], b: &[Wordline], dst: &[Wordline]) -> Result<()> {
        let n = dst.len();
        let (c0, c1) = (self.c0(), self.c1());
        match op {
            ArithOp::Add | ArithOp::RedSum => {
                let carry = self.take()?;
                self.add_core(a, b, dst, c0, Some(carry));
                self.prog.carry_row = Some(carry.row);
            }
            ArithOp::Sub => {
                let nb = self.take_n(n)?;
                for k in 0..n {
                    self.not(b[k], nb[k]);
                }
                self.add_core(a, &nb, dst, c1, None);
                self.release(&nb);
            }
            ArithOp::And | ArithOp::RedAnd => (0..n).for_each(|k| self.and(a[k], b[k], dst[k])),
            ArithOp::Or | ArithOp::RedOr => (0..n).for_each(|k| self.or(a[k], b[k], dst[k])),
            ArithOp::Xor | ArithOp::RedXor => (0..n).for_each(|k| self.xor(a[k], b[k], dst[k])),
            ArithOp::Not => (0..n).for_each(|k| self.not(a[k], dst[k])),
            ArithOp::Relu => {
                let (d1, nd1) = (self.d(1), self.nd(1));
                self.copy(a[n - 1], d1);
                for k in 0..n {
                    self.maj3(a[k], nd1, c0, dst[k]);
                }
            }
            ArithOp::Abs => {
                // (a ^ s) + s with s the sign bit
                let sign = a[n - 1];
                let x = self.take_n(n)?;
                for k in 0..n {
                    self.xor(a[k], sign, x[k]);
                }
                self.add_core(&x, &[], dst, sign, None);
                self.release(&x);
            }
            ArithOp::Ge | ArithOp::Gt | ArithOp::Eq => {
                let nd0 = self.nd(0);
                let d0 = self.d(0);
                match op {
                    ArithOp::Ge => {
                        self.ge_into_d0(a, b)?;
                        self.copy(d0, dst[0]);
                    }
                    ArithOp::Gt => {
                        self.ge_into_d0(b, a)?;
                        self.copy(nd0, dst[0]);
                    }
                    _ => {
                        self.ge_into_d0(a, b)?;
                        let f = self.take()?;
                        self.copy(d0, f);
                        self.ge_into_d0(b, a)?;
                        self.and(f, d0, dst[0]);
                        self.release(&[f]);
                    }
                }
                self.zero_fill(&dst[1..]);
            }
            ArithOp::Max | ArithOp::Min => {
                self.ge_into_d0(a, b)?;
                for k in 0..n {
                    if op == ArithOp::Max {
                        self.mux_d0(a[k], b[k], dst[k]);
                    } else {
                        self.mux_d0(b[k], a[k], dst[k]);
                    }
                }
            }
            ArithOp::Mul => {
                for k in 0..n {
                    self.and(a[k], b[0], dst[k]);
                }
                let pp = self.take_n(n)?;
                for j in 1..n {
                    for i in j..n {
                        self.and(a[i - j], b[j], pp[i]);
                    }
                    let acc = dst[j..].to_vec();
                    self.add_core(&acc, &pp[j..], &acc, c0, None);
                }
                self.release(&pp);
            }
            ArithOp::Div => self.restoring_div(a, b, dst)?,
            ArithOp::Bitcount => {
                let mut nums: Vec<Vec<Wordline>> = a.iter().map(|&r| vec![r]).collect();
                while nums.len() > 1 {
                    let mut next = Vec::with_capacity(nums.len().div_ceil(2));
                    let mut it = nums.into_iter();
                    while let Some(x) = it.next() {
                        match it.next() {
                            Some(y) => {
                                let w = x.len().max(y.len());
                                let out = self.take_n(w + 1)?;
                                self.add_core(&x, &y, &out[..w], c0, Some(out[w]));
                                self.release(&x);
                                self.release(&y);
                                next.push(out);
                            }
                            None => next.push(x),
                        }
                    }
                    nums = next;
                }
                let total = nums.pop().unwrap_or_default();
                for (k, &d) in dst.iter().enumerate().take(n) {
                    self.copy(total.get(k).copied().unwrap_or(c0), d);
                }
                self.release(&total);
            }
        }
        Ok(())
    }

    /// Unsigned restoring division. The partial remainder is a list of rows,
    /// so shifting it left is a relabeling rather than a copy.
    fn restoring_div(&mut self, a: &[Wordline], b: &[Wordline], q: &[Wordline]) -> Result<()> {
        let n = q.len();
        let (c0, c1, d0) = (self.c0(), self.c1(), self.d(0));

        let poison = self.take()?;
        self.copy(b[0], poison);
        for &bk in &b[1..] {
            self.or(poison, bk, poison);
        }
        self.not(poison, poison);
        self.prog.poison_row = Some(poison.row);

        let mut nd = self.take_n(n)?;
        for k in 0..n {
            self.not(b[k], nd[k]);
        }
        nd.push(c1);

        let mut r: Vec<Wordline> = vec![c0; n];
        for i in (0..n).rev() {
            let mut shifted = Vec::with_capacity(n + 1);
            shifted.push(a[i]);
            shifted.extend_from_slice(&r);
            let t = self.take_n(n + 1)?;
            self.add_core(&shifted, &nd, &t, c1, None);
            self.copy(d0, q[i]);
            for j in 0..n {
                self.mux_d0(t[j], shifted[j], t[j]);
            }
            self.release(&r);
            self.release(&t[n..]);
            r = t[..n].to_vec();
        }
        self.release(&r);
        self.release(&nd);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::VerticalLayout;
    use crate::geometry::DramGeometry;
    use crate::isa::{Ml, Operand};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geom() -> DramGeometry {
        DramGeometry { chips: 1, mats_per_subarray_per_chip: 4, columns_per_mat: 128, ..Default::default() }
    }

    fn placement(mats: MatRange, n: usize) -> UprogPlacement {
        let g = geom();
        UprogPlacement {
            mats,
            dst: 8,
            src1: Some(8 + n),
            src2: Some(8 + 2 * n),
            sel: Some(8 + 3 * n),
            scratch_base: g.scratch_base(),
            scratch_end: g.rows_per_mat,
        }
    }

    fn layout(base: usize, n: u32, elements: usize, mats: MatRange) -> VerticalLayout {
        VerticalLayout { base_row: base, bitwidth: n, elements, mat_span: mats }
    }

    fn run(op: ArithOp, n: u32, a: &[u64], b: &[u64]) -> (Vec<u64>, MicroProgram, DramModule) {
        let mats = MatRange::new(0, 1).unwrap();
        let pl = placement(mats, n as usize);
        let mut d = DramModule::new(geom()).unwrap();
        let e = a.len();
        d.transpose_h2v(a, &layout(pl.src1.unwrap(), n, e, mats)).unwrap();
        d.transpose_h2v(b, &layout(pl.src2.unwrap(), n, e, mats)).unwrap();
        let srcs = [Operand::new("a"), Operand::new("b")];
        let srcs = if op.is_unary() { &srcs[..1] } else { &srcs[..] };
        let bb = Bbop::arith(op, Operand::new("c"), srcs, e, n, Ml::Range(mats), e);
        let p = build_uprog(&bb, &pl).unwrap();
        execute_uprog(&mut d, &p).unwrap();
        assert!(d.constant_rows_intact());
        (d.transpose_v2h(&layout(pl.dst, n, e, mats)).unwrap(), p, d)
    }

    #[test]
    fn majority_truth_table() {
        for i in 0..8u8 {
            let (a, b, c) = (i & 4 != 0, i & 2 != 0, i & 1 != 0);
            assert_eq!(tra_majority(a, b, c), (i.count_ones()) >= 2);
        }
        assert!(tra_majority(true, true, false));
        assert!(!tra_majority(false, false, true));
    }

    #[test]
    fn add_small_vectors() {
        let a: Vec<u64> = (1..=200).collect();
        let b = vec![1; 200];
        let (out, p, _) = run(ArithOp::Add, 16, &a, &b);
        assert_eq!(out, (2..=201).collect::<Vec<_>>());
        assert_eq!(p.stats().aap_count + p.stats().ap_count, 8 * 16 + 2);
    }

    #[test]
    fn add_counts_follow_8n_plus_2() {
        let mats = MatRange::single(0).unwrap();
        for n in 1..=64u32 {
            let p = build_add(n, 100, 200, 300, &placement(mats, 64)).unwrap();
            assert_eq!(p.stats().aap_count, 5 * n as usize + 2);
            assert_eq!(p.stats().ap_count, 3 * n as usize);
            assert_eq!(p.len(), 8 * n as usize + 2);
        }
    }

    #[test]
    fn every_elementwise_op_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1u32, 3, 8] {
            let mask = crate::isa::lane_mask(n);
            let a: Vec<u64> = (0..256).map(|_| rng.gen::<u64>() & mask).collect();
            let mut b: Vec<u64> = (0..256).map(|_| rng.gen::<u64>() & mask).collect();
            b[0] = 0;
            b[1] = a[1];
            for op in ArithOp::ELEMENTWISE {
                let (out, _, _) = run(op, n, &a, &b);
                for j in 0..a.len() {
                    assert_eq!(out[j], op.eval(a[j], b[j], n), "{op:?} n={n} a={} b={}", a[j], b[j]);
                }
            }
        }
    }

    #[test]
    fn division_by_zero_saturates_and_poisons() {
        let (out, p, d) = run(ArithOp::Div, 8, &[9, 200, 7], &[0, 10, 0]);
        assert_eq!(out, vec![255, 20, 255]);
        let poison = p.poison_row.unwrap();
        let flags: Vec<bool> = (0..3).map(|c| d.mat(0).get_bit(poison, c)).collect();
        assert_eq!(flags, vec![true, false, true]);
    }

    #[test]
    fn if_else_selects_per_lane() {
        let mats = MatRange::single(0).unwrap();
        let n = 8;
        let pl = placement(mats, n);
        let mut d = DramModule::new(geom()).unwrap();
        d.transpose_h2v(&[10, 20, 30], &layout(pl.src1.unwrap(), 8, 3, mats)).unwrap();
        d.transpose_h2v(&[1, 2, 3], &layout(pl.src2.unwrap(), 8, 3, mats)).unwrap();
        d.transpose_h2v(&[1, 0, 1], &layout(pl.sel.unwrap(), 1, 3, mats)).unwrap();
        let o = |s: &str| Operand::new(s);
        let b = Bbop::if_else(o("d"), o("a"), o("b"), o("s"), 3, 8, Ml::Range(mats), 3);
        execute_uprog(&mut d, &build_uprog(&b, &pl).unwrap()).unwrap();
        assert_eq!(d.transpose_v2h(&layout(pl.dst, 8, 3, mats)).unwrap(), vec![10, 2, 30]);
    }

    #[test]
    fn aliased_destination_is_safe() {
        let mats = MatRange::single(0).unwrap();
        let mut pl = placement(mats, 8);
        pl.dst = pl.src1.unwrap();
        let mut d = DramModule::new(geom()).unwrap();
        d.transpose_h2v(&[7, 12], &layout(pl.src1.unwrap(), 8, 2, mats)).unwrap();
        d.transpose_h2v(&[6, 3], &layout(pl.src2.unwrap(), 8, 2, mats)).unwrap();
        for (op, want) in [(ArithOp::Mul, vec![42u64, 36]), (ArithOp::Add, vec![48, 39])] {
            let o = |s: &str| Operand::new(s);
            let b = Bbop::arith(op, o("a"), &[o("a"), o("b")], 2, 8, Ml::Range(mats), 2);
            execute_uprog(&mut d, &build_uprog(&b, &pl).unwrap()).unwrap();
            assert_eq!(d.transpose_v2h(&layout(pl.dst, 8, 2, mats)).unwrap(), want);
        }
    }

    #[test]
    fn trace_format() {
        let mats = MatRange::new(3, 5).unwrap();
        let c = Command::aap(Wordline::plain(12), &[Wordline::plain(9)], mats);
        assert_eq!(c.to_string(), "AAP r12 -> r9 @ mats[3..5]");
        let c = Command::ap([Wordline::plain(2), Wordline::plain(4), Wordline::negated(7)], mats);
        assert_eq!(c.to_string(), "AP T0,T2,!DCC1 @ mats[3..5]");
    }

    #[test]
    fn command_validation() {
        let m = MatRange::single(0).unwrap();
        let bad = Command::aap(Wordline::plain(9), &[Wordline::plain(10), Wordline::plain(11)], m);
        assert!(bad.validate().is_err());
        let bad = Command::ap([Wordline::plain(2), Wordline::plain(2), Wordline::plain(3)], m);
        assert!(bad.validate().is_err());
        let bad = Command::ap([Wordline::plain(2), Wordline::plain(3), Wordline::plain(9)], m);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn scratch_exhaustion_is_reported() {
        let mats = MatRange::single(0).unwrap();
        let mut pl = placement(mats, 8);
        pl.scratch_end = pl.scratch_base + 3;
        let o = |s: &str| Operand::new(s);
        let b = Bbop::arith(ArithOp::Div, o("c"), &[o("a"), o("b")], 1, 8, Ml::Range(mats), 1);
        assert!(matches!(build_uprog(&b, &pl), Err(Error::ScratchExhausted { .. })));
    }
}
