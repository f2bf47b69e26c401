//! Inter-mat (GB-MOV) and intra-mat (LC-MOV) data movement, command latency,
//! and vector reduction built on top of them.

use std::fmt;
use std::ops::Range;

use crate::config::KvConfig;
use crate::dram::{DramModule, VerticalLayout, Wordline};
use crate::error::{Error, Result};
use crate::geometry::DramGeometry;
use crate::isa::{lane_mask, ArithOp, MatRange};
use crate::scalar::Scalar;
use crate::uprog::{build_uprog, execute_uprog, Command, CommandKind, MicroProgram, UprogPlacement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CellAddr {
    pub mat: usize,
    pub row: usize,
    pub column: usize,
}

impl fmt::Display for CellAddr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "mat{}:r{}:c{}", self.mat, self.row, self.column)
    }
}

/// One 4-bit (helper flip-flop wide) transfer between two cell windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MoveDescriptor {
    pub src: CellAddr,
    pub dst: CellAddr,
    pub width: usize,
}

impl fmt::Display for MoveDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.src, self.dst)
    }
}

impl MoveDescriptor {
    fn check(&self, dram: &DramModule) -> Result<()> {
        let g = dram.geometry();
        if self.width != g.hffs_per_mat {
            return Err(Error::Protocol(format!("move width {} differs from {} HFFs", self.width, g.hffs_per_mat)));
        }
        for c in [self.src, self.dst] {
            if c.column % self.width != 0 || c.column + self.width > g.columns_per_mat {
                return Err(Error::Unaligned { column: c.column, width: self.width });
            }
            if c.mat >= dram.mats().len() {
                return Err(Error::MatOutOfRange { mat: c.mat, mats: dram.mats().len() });
            }
        }
        Ok(())
    }
}

fn read_window(dram: &DramModule, mat: usize, column: usize, width: usize) -> Vec<bool> {
    let buf = dram.mat(mat).row_buffer();
    (column..column + width).map(|c| buf[c / 64] >> (c % 64) & 1 == 1).collect()
}

fn write_window(dram: &mut DramModule, mat: usize, column: usize, bits: &[bool]) {
    let buf = dram.mat_mut(mat).row_buffer_mut();
    for (i, &b) in bits.iter().enumerate() {
        let c = column + i;
        let m = 1u64 << (c % 64);
        if b {
            buf[c / 64] |= m;
        } else {
            buf[c / 64] &= !m;
        }
    }
}

/// Source row and destination row are open at once in their own mats; the
/// selected bits cross the global row buffer.
pub fn gb_mov(dram: &mut DramModule, d: &MoveDescriptor) -> Result<()> {
    if d.src.mat == d.dst.mat {
        return Err(Error::SameMatGlobalMove(d.src.mat));
    }
    d.check(dram)?;
    let (s, t) = (MatRange::single(d.src.mat)?, MatRange::single(d.dst.mat)?);
    dram.activate(s, d.src.row)?;
    let bits = read_window(dram, d.src.mat, d.src.column, d.width);
    dram.activate(t, d.dst.row)?;
    write_window(dram, d.dst.mat, d.dst.column, &bits);
    dram.precharge(s)?;
    dram.precharge(t)
}

/// Bits are latched in the helper flip-flops, the source row is closed, and
/// the destination row is opened and overwritten.
pub fn lc_mov(dram: &mut DramModule, d: &MoveDescriptor) -> Result<()> {
    if d.src.mat != d.dst.mat {
        return Err(Error::CrossMatLocalMove { src: d.src.mat, dst: d.dst.mat });
    }
    d.check(dram)?;
    let m = MatRange::single(d.src.mat)?;
    dram.activate(m, d.src.row)?;
    let hff = read_window(dram, d.src.mat, d.src.column, d.width);
    dram.precharge(m)?;
    dram.activate(m, d.dst.row)?;
    write_window(dram, d.dst.mat, d.dst.column, &hff);
    dram.precharge(m)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingParams<T> {
    pub t_ras: T,
    pub t_rp: T,
    pub t_wr: T,
    pub t_reloc: T,
    /// Stretch of tRAS when a row is opened while another is still latched.
    pub act_factor: T,
}

impl<T: Scalar> Default for TimingParams<T> {
    fn default() -> Self {
        Self {
            t_ras: T::from_count(32),
            t_rp: T::from_count(14),
            t_wr: T::from_count(12),
            t_reloc: T::from_count(2),
            act_factor: T::ratio(11, 10),
        }
    }
}

impl<T: Scalar> TimingParams<T> {
    pub fn validate(&self) -> Result<()> {
        let zero = T::zero();
        for (name, v) in [("t_ras", self.t_ras), ("t_rp", self.t_rp), ("t_wr", self.t_wr), ("t_reloc", self.t_reloc)] {
            if v <= zero {
                return Err(Error::Geometry(format!("{name} must be positive")));
            }
        }
        if self.act_factor < T::one() {
            return Err(Error::Geometry("act_factor must be at least 1".into()));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self> {
        let mut t = Self::default();
        let fields: [(&str, &mut T); 5] = [
            ("t_ras", &mut t.t_ras),
            ("t_rp", &mut t.t_rp),
            ("t_wr", &mut t.t_wr),
            ("t_reloc", &mut t.t_reloc),
            ("act_factor", &mut t.act_factor),
        ];
        for (key, slot) in fields {
            if let Some(v) = cfg.scalar(key)? {
                *slot = v;
            }
        }
        t.validate()?;
        Ok(t)
    }

    pub fn ap(&self) -> T {
        self.act_factor * self.t_ras + self.t_rp
    }

    pub fn aap(&self) -> T {
        T::from_count(2) * self.act_factor * self.t_ras + self.t_rp
    }

    pub fn gb_mov(&self) -> T {
        self.t_ras + self.t_reloc + self.t_wr + self.t_rp
    }

    pub fn lc_mov(&self) -> T {
        T::from_count(2) * (self.t_ras + self.t_rp) + self.t_reloc + self.t_wr
    }

    pub fn latency(&self, cmd: &Command) -> T {
        match cmd.kind {
            CommandKind::Aap { .. } => self.aap(),
            CommandKind::Ap { .. } => self.ap(),
            CommandKind::GbMov(_) => self.gb_mov(),
            CommandKind::LcMov(_) => self.lc_mov(),
        }
    }
}

/// Command log of an in-DRAM reduction and where its four survivors live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionPlan {
    pub uprog: MicroProgram,
    pub result: VerticalLayout,
    /// GB-MOVs issued in each cross-mat round.
    pub round_moves: Vec<usize>,
    /// LC-MOVs issued in each intra-mat halving step.
    pub local_moves: Vec<usize>,
}

fn fold_placement(mats: MatRange, base: usize, temp: usize, scratch: &Range<usize>) -> UprogPlacement {
    UprogPlacement {
        mats,
        dst: base,
        src1: Some(base),
        src2: Some(temp),
        sel: None,
        scratch_base: scratch.start,
        scratch_end: scratch.end,
    }
}

fn fold_uprog(op: ArithOp, n: u32, pl: &UprogPlacement) -> Result<MicroProgram> {
    let o = crate::isa::Operand::new;
    let b = crate::isa::Bbop::arith(op.fold_op(), o("_"), &[o("_"), o("_")], 1, n, crate::isa::Ml::Range(pl.mats), 1);
    build_uprog(&b, pl)
}

/// Plans a reduction of every lane of `src.mat_span` (callers pad unused
/// lanes with the identity first; see [`pad_identity`]). The source is
/// copied into `scratch`, which also holds every temporary.
pub fn plan_reduction(
    src: &VerticalLayout,
    op: ArithOp,
    geometry: &DramGeometry,
    scratch: Range<usize>,
) -> Result<ReductionPlan> {
    if !op.is_reduction() {
        return Err(Error::Unsupported(format!("{} is not a reduction", op.mnemonic())));
    }
    let n = src.bitwidth;
    let nu = n as usize;
    if scratch.len() < 2 * nu {
        return Err(Error::ScratchExhausted { need: 2 * nu, have: scratch.len() });
    }
    let base = scratch.start;
    let temp = base + nu;
    let rest = temp + nu..scratch.end;
    let cols = geometry.columns_per_mat;
    let w = geometry.hffs_per_mat;
    let span = src.mat_span;
    let groups = crate::dram::RowGroups::STANDARD;
    let identity = if op == ArithOp::RedAnd { groups.c1 } else { groups.c0 };
    let mut uprog = MicroProgram::new(None, n);
    let mut round_moves = Vec::new();

    // work on a copy so the source operand survives
    for k in 0..nu {
        uprog.push(Command::aap(Wordline::plain(src.base_row + k), &[Wordline::plain(base + k)], span));
    }

    let m = span.len();
    let mut stride = 1;
    while stride < m {
        let receivers: Vec<usize> = (0..m).step_by(2 * stride).collect();
        if receivers.iter().any(|&i| i + stride >= m) {
            for k in 0..n as usize {
                uprog.push(Command::aap(Wordline::plain(identity), &[Wordline::plain(temp + k)], span));
            }
        }
        let mut moves = 0;
        for &i in &receivers {
            let j = i + stride;
            if j >= m {
                continue;
            }
            for k in 0..n as usize {
                for c in (0..cols).step_by(w) {
                    let d = MoveDescriptor {
                        src: CellAddr { mat: span.begin() + j, row: base + k, column: c },
                        dst: CellAddr { mat: span.begin() + i, row: temp + k, column: c },
                        width: w,
                    };
                    uprog.push(Command::gb_mov(d)?);
                    moves += 1;
                }
            }
        }
        round_moves.push(moves);
        uprog.extend(fold_uprog(op, n, &fold_placement(span, base, temp, &rest))?);
        stride *= 2;
    }

    let home = MatRange::single(span.begin())?;
    let mut local_moves = Vec::new();
    let mut width = cols;
    while width > w {
        let half = width / 2;
        let mut moves = 0;
        for k in 0..n as usize {
            for c in (half..width).step_by(w) {
                let d = MoveDescriptor {
                    src: CellAddr { mat: home.begin(), row: base + k, column: c },
                    dst: CellAddr { mat: home.begin(), row: temp + k, column: c - half },
                    width: w,
                };
                uprog.push(Command::lc_mov(d)?);
                moves += 1;
            }
        }
        local_moves.push(moves);
        uprog.extend(fold_uprog(op, n, &fold_placement(home, base, temp, &rest))?);
        width = half;
    }
    let result = VerticalLayout { base_row: base, bitwidth: n, elements: width.min(cols), mat_span: home };
    Ok(ReductionPlan { uprog, result, round_moves, local_moves })
}

/// Writes the reduction identity into every lane of the span past
/// `src.elements`, as the host transposition unit would.
pub fn pad_identity(dram: &mut DramModule, src: &VerticalLayout, op: ArithOp) -> Result<()> {
    let cols = dram.geometry().columns_per_mat;
    let total = src.mat_span.len() * cols;
    let id = op.identity(src.bitwidth);
    for j in src.elements..total {
        let mat = dram.mat_mut(src.mat_span.begin() + j / cols);
        for k in 0..src.bitwidth {
            mat.set_bit(src.base_row + k as usize, j % cols, id >> k & 1 == 1);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReductionOutcome {
    pub value: u64,
    pub plan: ReductionPlan,
}

/// Pads, runs the in-DRAM reduction down to four lanes, and folds those on
/// the host.
pub fn vector_reduce(
    dram: &mut DramModule,
    src: &VerticalLayout,
    op: ArithOp,
    scratch: Range<usize>,
) -> Result<ReductionOutcome> {
    let geometry = *dram.geometry();
    pad_identity(dram, src, op)?;
    let plan = plan_reduction(src, op, &geometry, scratch)?;
    execute_uprog(dram, &plan.uprog)?;
    let value = host_fold(op, src.bitwidth, &dram.transpose_v2h(&plan.result)?);
    Ok(ReductionOutcome { value, plan })
}

pub fn host_fold(op: ArithOp, n: u32, values: &[u64]) -> u64 {
    let f = op.fold_op();
    values.iter().fold(op.identity(n), |acc, &v| f.eval(acc, v, n)) & lane_mask(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> DramModule {
        let g = DramGeometry { chips: 1, mats_per_subarray_per_chip: 8, columns_per_mat: 64, ..Default::default() };
        DramModule::new(g).unwrap()
    }

    fn desc(sm: usize, sr: usize, sc: usize, dm: usize, dr: usize, dc: usize) -> MoveDescriptor {
        MoveDescriptor {
            src: CellAddr { mat: sm, row: sr, column: sc },
            dst: CellAddr { mat: dm, row: dr, column: dc },
            width: 4,
        }
    }

    #[test]
    fn latency_formulas() {
        let t = TimingParams::<crate::scalar::Rational>::default();
        let r = |x: i64, y: i64| crate::scalar::Rational::new(x, y);
        assert_eq!(t.gb_mov(), r(60, 1));
        assert_eq!(t.lc_mov(), r(106, 1));
        assert_eq!(t.ap(), r(492, 10));
        assert_eq!(t.aap(), r(844, 10));
    }

    #[test]
    fn timing_config() {
        let cfg = KvConfig::parse("t_ras = 40\nact_factor = 1.0").unwrap();
        let t = TimingParams::<f64>::from_config(&cfg).unwrap();
        assert_eq!(t.ap(), 54.0);
        let cfg = KvConfig::parse("act_factor = 0.9").unwrap();
        assert!(TimingParams::<f64>::from_config(&cfg).is_err());
    }

    #[test]
    fn gb_mov_copies_four_bits_only() {
        let mut d = small();
        d.mat_mut(0).row_mut(20)[0] = 0xABCD;
        d.mat_mut(1).row_mut(30)[0] = 0xFFFF_0000;
        gb_mov(&mut d, &desc(0, 20, 4, 1, 30, 8)).unwrap();
        assert_eq!(d.mat(1).row(30)[0], 0xFFFF_0C00);
        assert_eq!(d.mat(0).row(20)[0], 0xABCD);
        assert!(!d.mat(0).is_open() && !d.mat(1).is_open());
        assert!(matches!(gb_mov(&mut d, &desc(2, 1, 0, 2, 2, 0)), Err(Error::SameMatGlobalMove(2))));
        assert!(matches!(gb_mov(&mut d, &desc(0, 1, 2, 1, 2, 0)), Err(Error::Unaligned { .. })));
    }

    #[test]
    fn lc_mov_within_a_mat() {
        let mut d = small();
        d.mat_mut(3).row_mut(12)[0] = 0xF;
        lc_mov(&mut d, &desc(3, 12, 0, 3, 12, 60)).unwrap();
        assert_eq!(d.mat(3).row(12)[0], 0xF | 0xF << 60);
        let before = d.clone();
        lc_mov(&mut d, &desc(3, 12, 0, 3, 12, 0)).unwrap();
        assert_eq!(d, before);
        assert!(matches!(lc_mov(&mut d, &desc(3, 1, 0, 4, 1, 0)), Err(Error::CrossMatLocalMove { .. })));
    }

    #[test]
    fn reduction_over_one_mat_has_no_cross_rounds() {
        let mut d = small();
        let src = VerticalLayout { base_row: 8, bitwidth: 8, elements: 50, mat_span: MatRange::single(2).unwrap() };
        let vals: Vec<u64> = (0..50).collect();
        d.transpose_h2v(&vals, &src).unwrap();
        let g = *d.geometry();
        let out = vector_reduce(&mut d, &src, ArithOp::RedSum, g.scratch_base()..g.rows_per_mat).unwrap();
        assert!(out.plan.round_moves.is_empty());
        assert_eq!(out.value, (0..50u64).sum::<u64>() % 256);
        assert_eq!(out.plan.uprog.stats().gbmov_count, 0);
    }

    #[test]
    fn reduction_across_odd_span() {
        let mut d = small();
        let span = MatRange::new(1, 5).unwrap();
        let src = VerticalLayout { base_row: 8, bitwidth: 16, elements: 300, mat_span: span };
        let vals: Vec<u64> = (0..300).map(|v| v * 7 + 3).collect();
        d.transpose_h2v(&vals, &src).unwrap();
        let g = *d.geometry();
        for op in [ArithOp::RedSum, ArithOp::RedXor, ArithOp::RedOr, ArithOp::RedAnd] {
            d.transpose_h2v(&vals, &src).unwrap();
            let out = vector_reduce(&mut d, &src, op, g.scratch_base()..g.rows_per_mat).unwrap();
            assert_eq!(out.value, host_fold(op, 16, &vals), "{op:?}");
            assert_eq!(out.plan.round_moves.len(), 3);
        }
    }
}
