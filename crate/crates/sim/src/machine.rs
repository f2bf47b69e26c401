//! Program loading, operand placement and the dependency-driven frontend
//! that feeds bbops to a control unit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use mimdram_core::alloc::{Allocator, PoolShape, RegionPool};
use mimdram_core::control::{ControlConfig, Job};
use mimdram_core::dram::{DramModule, VerticalLayout};
use mimdram_core::geometry::DramGeometry;
use mimdram_core::interconnect::{host_fold, pad_identity, plan_reduction, CellAddr, MoveDescriptor};
use mimdram_core::isa::{mov_route, ArithOp, Bbop, BbopKind, Directive, Line, MatLabel, MatRange, Ml, Program};
use mimdram_core::uprog::{build_uprog, Command, MicroProgram, UprogPlacement, UprogStats};
use mimdram_core::{Controller, Energy, Error, Result, Timing};

/// Baseline coarse-grained mode or fine-grained mat-level mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Simdram,
    Mimdram,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Simdram => "simdram",
            Mode::Mimdram => "mimdram",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simdram" => Ok(Mode::Simdram),
            "mimdram" => Ok(Mode::Mimdram),
            other => Err(Error::Unsupported(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub geometry: DramGeometry,
    pub timing: Timing,
    pub energy: Energy,
    /// Microprogram engines per instance in mimdram mode; simdram uses one.
    pub engines: usize,
    pub buffer_capacity: usize,
    /// Executes commands on modelled DRAM cells; timing-only otherwise.
    pub functional: bool,
    pub trace: bool,
    pub trace_uprog: bool,
    pub alloc_trace: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            geometry: DramGeometry::default(),
            timing: Timing::default(),
            energy: Energy::default(),
            engines: 8,
            buffer_capacity: 1024,
            functional: true,
            trace: false,
            trace_uprog: false,
            alloc_trace: false,
        }
    }
}

impl SimConfig {
    pub fn engines_for(&self, mode: Mode) -> usize {
        match mode {
            Mode::Simdram => 1,
            Mode::Mimdram => self.engines,
        }
    }

    /// Mats a coarse-grained activation opens at once.
    pub fn window_mats(&self) -> usize {
        self.geometry.mats_per_subarray_per_chip
    }

    fn mat_align(&self, mode: Mode) -> usize {
        match mode {
            Mode::Simdram => self.window_mats(),
            Mode::Mimdram => 1,
        }
    }

    /// Mats a bbop of `vf` lanes runs on.
    pub fn mats_for(&self, vf: usize, mode: Mode) -> usize {
        let mats = vf.div_ceil(self.geometry.columns_per_mat).max(1);
        let align = self.mat_align(mode);
        mats.div_ceil(align) * align
    }
}

/// One program plus the host data its `bbop_trsp_init`s read.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct App {
    pub name: String,
    pub program: Program,
    /// Keyed by operand name, or by array name for strip-mined parts.
    pub inputs: BTreeMap<String, Vec<u64>>,
}

/// (active lanes, provisioned lanes) of one executed bbop.
pub type LaneSample = (usize, usize);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AppOutcome {
    pub name: String,
    pub wall_time: f64,
    pub energy: f64,
    pub commands: UprogStats,
    pub lane_samples: Vec<LaneSample>,
    /// Final contents of every allocated operand, with strip-mined parts
    /// reassembled under their array name. Empty in timing-only runs.
    pub arrays: BTreeMap<String, Vec<u64>>,
    pub scalars: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InstanceOutcome {
    pub apps: Vec<AppOutcome>,
    pub wall_time: f64,
    pub energy: f64,
    pub commands: UprogStats,
    pub trace: String,
    pub uprog_trace: String,
    pub alloc_trace: String,
    pub max_queue_depth: usize,
    pub dram: Option<DramModule>,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    range: MatRange,
    base_row: usize,
    size: usize,
}

#[derive(Debug, Clone)]
enum OpKind {
    Bbop(Bbop),
    Combine { dst: String, op: ArithOp, parts: Vec<String> },
}

#[derive(Debug, Clone)]
struct Op {
    kind: OpKind,
    deps: Vec<usize>,
}

fn op_sets(k: &OpKind) -> (Vec<String>, Vec<String>) {
    match k {
        OpKind::Bbop(b) => (b.sources().iter().map(|s| s.0.clone()).collect(), vec![b.dst.0.clone()]),
        OpKind::Combine { dst, parts, .. } => (parts.clone(), vec![dst.clone()]),
    }
}

/// Orders every pair of operations that share an operand with at least one
/// writer.
fn build_ops(p: &Program) -> Vec<Op> {
    let mut kinds = Vec::new();
    for l in &p.lines {
        match l {
            Line::Instr(b) => kinds.push(OpKind::Bbop(b.clone())),
            Line::Directive(Directive::Combine { dst, op, parts }) => kinds.push(OpKind::Combine {
                dst: dst.0.clone(),
                op: *op,
                parts: parts.iter().map(|p| p.0.clone()).collect(),
            }),
            Line::Directive(_) => {}
        }
    }
    let sets: Vec<_> = kinds.iter().map(op_sets).collect();
    let mut ops = Vec::with_capacity(kinds.len());
    for (i, k) in kinds.into_iter().enumerate() {
        let (ri, wi) = &sets[i];
        let deps = (0..i)
            .filter(|&j| {
                let (rj, wj) = &sets[j];
                wi.iter().any(|w| rj.contains(w) || wj.contains(w)) || ri.iter().any(|r| wj.contains(r))
            })
            .collect();
        ops.push(Op { kind: k, deps });
    }
    ops
}

fn max_bitwidth(p: &Program) -> u32 {
    p.instructions().map(|b| b.n).max().unwrap_or(1)
}

struct AppRun {
    pid: u32,
    ops: Vec<Op>,
    done: Vec<bool>,
    dispatched: Vec<bool>,
    operands: BTreeMap<String, Placed>,
    /// First mat of each label's anchor allocation.
    labels: BTreeMap<MatLabel, usize>,
    parts: BTreeMap<String, (String, usize)>,
    scalars: BTreeMap<String, (u64, u32)>,
    finish: f64,
    samples: Vec<LaneSample>,
}

enum Pending {
    Plain { app: usize, op: usize },
    Reduce { app: usize, op: usize, red: ArithOp, n: u32, dst: String },
}

/// Runs `apps` together on one computation subarray with its own control
/// unit, allocator and (when functional) DRAM cells.
pub fn run_instance(apps: &[App], cfg: &SimConfig, mode: Mode) -> Result<InstanceOutcome> {
    let g = cfg.geometry;
    g.validate()?;
    let region_rows = apps.iter().map(|a| max_bitwidth(&a.program)).max().unwrap_or(1) as usize;
    let data_rows = g.data_row_end() - g.first_data_row();
    let shape = PoolShape { subarrays: 1, mats: g.total_mats(), slots_per_mat: data_rows / region_rows };
    let pool = RegionPool::preallocate(shape, 1, shape.capacity());
    let mut alloc = Allocator::new(pool, g.columns_per_mat, cfg.mat_align(mode));
    if cfg.alloc_trace {
        alloc.enable_trace();
    }

    let mut runs = Vec::with_capacity(apps.len());
    for (i, app) in apps.iter().enumerate() {
        let pid = i as u32;
        let mut operands = BTreeMap::new();
        let mut labels = BTreeMap::new();
        let mut parts = BTreeMap::new();
        for d in app.program.directives() {
            match d {
                Directive::Alloc { name, size, label } => {
                    if operands.contains_key(&name.0) {
                        return Err(Error::Alloc(format!("{}: operand `{name}` allocated twice", app.name)));
                    }
                    let h = if alloc.translate(*label, pid).is_ok() {
                        alloc.pim_alloc_align(*size, *label, pid)?
                    } else {
                        alloc.pim_alloc(*size, *label, pid)?
                    };
                    let a = alloc.get(h).ok_or_else(|| Error::Alloc("allocation vanished".into()))?;
                    let (_, range, slot) = a.placement().ok_or_else(|| {
                        Error::Placement(format!("{}: operand `{name}` has no contiguous mat run", app.name))
                    })?;
                    let base_row = g.first_data_row() + slot * region_rows;
                    labels.entry(*label).or_insert(range.begin());
                    operands.insert(name.0.clone(), Placed { range, base_row, size: *size });
                }
                Directive::Part { name, array, offset } => {
                    parts.insert(name.0.clone(), (array.0.clone(), *offset));
                }
                Directive::Combine { .. } => {}
            }
        }
        let ops = build_ops(&app.program);
        let n = ops.len();
        runs.push(AppRun {
            pid,
            ops,
            done: vec![false; n],
            dispatched: vec![false; n],
            operands,
            labels,
            parts,
            scalars: BTreeMap::new(),
            finish: 0.0,
            samples: Vec::new(),
        });
    }

    let ccfg = ControlConfig {
        engines: cfg.engines_for(mode),
        buffer_capacity: cfg.buffer_capacity,
        mats: g.total_mats(),
        mats_per_chip: g.mats_per_subarray_per_chip,
        mat_queue_depth: 8,
        timing: cfg.timing,
        energy: cfg.energy,
    };
    let mut cu = Controller::new(ccfg)?;
    if cfg.functional {
        cu.attach_dram(DramModule::new(g)?);
    }
    if cfg.trace {
        cu.enable_trace();
    }
    let mut uprog_trace = String::new();
    let mut pending: BTreeMap<u64, Pending> = BTreeMap::new();
    let mut next_job = 0u64;

    loop {
        let mut progress = true;
        while progress {
            progress = false;
            for ai in 0..runs.len() {
                for oi in 0..runs[ai].ops.len() {
                    let r = &runs[ai];
                    if r.dispatched[oi] || !r.ops[oi].deps.iter().all(|&d| r.done[d]) {
                        continue;
                    }
                    let now = cu.now();
                    let kind = runs[ai].ops[oi].kind.clone();
                    match kind {
                        OpKind::Combine { dst, op, parts } => {
                            let r = &mut runs[ai];
                            let mut vals = Vec::new();
                            let mut n = 64;
                            for p in &parts {
                                let (v, w) = r.scalars.get(p).copied().ok_or_else(|| {
                                    Error::Placement(format!("{}: combine reads unset scalar `{p}`", apps[ai].name))
                                })?;
                                vals.push(v);
                                n = w;
                            }
                            r.scalars.insert(dst, (host_fold(op, n, &vals), n));
                            r.dispatched[oi] = true;
                            r.done[oi] = true;
                            r.finish = r.finish.max(now);
                            progress = true;
                        }
                        OpKind::Bbop(b) if b.kind == BbopKind::TrspInit => {
                            if let Some(dram) = cu.dram_mut() {
                                trsp_init(dram, &apps[ai], &runs[ai], &b)?;
                            }
                            let r = &mut runs[ai];
                            r.dispatched[oi] = true;
                            r.done[oi] = true;
                            progress = true;
                        }
                        OpKind::Bbop(b) => {
                            let Built { job, reduce, sample } =
                                build_job(&apps[ai], &runs[ai], &b, cfg, mode, &mut cu, next_job)?;
                            if cfg.trace_uprog {
                                let _ = writeln!(uprog_trace, "# {} job{}: {b}", apps[ai].name, job.id);
                                uprog_trace.push_str(&job.uprog.trace());
                            }
                            let job = Job { app: ai, ..job };
                            if cu.dispatch(job).is_err() {
                                break;
                            }
                            next_job += 1;
                            if let Some(x) = sample {
                                runs[ai].samples.push(x);
                            }
                            let p = match reduce {
                                Some((red, n, dst)) => Pending::Reduce { app: ai, op: oi, red, n, dst },
                                None => Pending::Plain { app: ai, op: oi },
                            };
                            pending.insert(next_job - 1, p);
                            runs[ai].dispatched[oi] = true;
                            progress = true;
                        }
                    }
                }
            }
        }
        if runs.iter().all(|r| r.done.iter().all(|&d| d)) {
            break;
        }
        if cu.is_idle() {
            return Err(Error::Protocol("program cannot make progress (unsatisfiable dependences)".into()));
        }
        for c in cu.step()? {
            let Some(p) = pending.remove(&c.job) else { continue };
            match p {
                Pending::Plain { app, op } => {
                    runs[app].done[op] = true;
                    runs[app].finish = runs[app].finish.max(c.time);
                }
                Pending::Reduce { app, op, red, n, dst } => {
                    let r = &mut runs[app];
                    if let Some(vals) = &c.captured {
                        r.scalars.insert(dst, (host_fold(red, n, vals), n));
                    } else {
                        r.scalars.insert(dst, (0, n));
                    }
                    r.done[op] = true;
                    r.finish = r.finish.max(c.time);
                }
            }
        }
    }

    let mut out = InstanceOutcome {
        wall_time: runs.iter().map(|r| r.finish).fold(0.0, f64::max),
        energy: cu.energy(),
        commands: *cu.command_counts(),
        trace: cu.trace().unwrap_or("").to_string(),
        uprog_trace,
        alloc_trace: alloc.trace().unwrap_or("").to_string(),
        max_queue_depth: cu.mat_queue().max_depth_seen(),
        ..Default::default()
    };
    let dram = cu.take_dram();
    for (ai, r) in runs.into_iter().enumerate() {
        let counters = cu.app_counters(ai);
        let mut arrays = BTreeMap::new();
        if let Some(dram) = &dram {
            let n_of = operand_widths(&apps[ai].program);
            for (name, p) in &r.operands {
                let n = n_of.get(name.as_str()).copied().unwrap_or(region_rows as u32);
                let layout = VerticalLayout { base_row: p.base_row, bitwidth: n, elements: p.size, mat_span: p.range };
                let vals = dram.transpose_v2h(&layout)?;
                match r.parts.get(name) {
                    Some((array, offset)) => {
                        let v: &mut Vec<u64> = arrays.entry(array.clone()).or_default();
                        if v.len() < offset + vals.len() {
                            v.resize(offset + vals.len(), 0);
                        }
                        v[*offset..offset + vals.len()].copy_from_slice(&vals);
                    }
                    None => {
                        arrays.insert(name.clone(), vals);
                    }
                }
            }
        }
        out.apps.push(AppOutcome {
            name: apps[ai].name.clone(),
            wall_time: r.finish,
            energy: counters.energy,
            commands: counters.commands,
            lane_samples: r.samples,
            arrays,
            scalars: r.scalars.into_iter().map(|(k, (v, _))| (k, v)).collect(),
        });
    }
    out.dram = dram;
    Ok(out)
}

/// Element width of each operand, taken from the instructions touching it.
fn operand_widths(p: &Program) -> BTreeMap<&str, u32> {
    let mut m = BTreeMap::new();
    for b in p.instructions() {
        m.insert(b.dst.name(), b.n);
        for s in b.sources() {
            m.entry(s.name()).or_insert(b.n);
        }
    }
    m
}

fn placed<'a>(app: &App, run: &'a AppRun, name: &str) -> Result<&'a Placed> {
    run.operands.get(name).ok_or_else(|| Error::Placement(format!("{}: operand `{name}` has no `# alloc`", app.name)))
}

fn trsp_init(dram: &mut DramModule, app: &App, run: &AppRun, b: &Bbop) -> Result<()> {
    let p = placed(app, run, b.dst.name())?;
    let (key, offset) = match run.parts.get(b.dst.name()) {
        Some((array, offset)) => (array.as_str(), *offset),
        None => (b.dst.name(), 0),
    };
    let len = b.size.min(p.size);
    let mask = mimdram_core::isa::lane_mask(b.n);
    let src = app.inputs.get(key).map(|v| v.as_slice()).unwrap_or(&[]);
    let values: Vec<u64> = (0..len).map(|j| src.get(offset + j).copied().unwrap_or(0) & mask).collect();
    let layout = VerticalLayout { base_row: p.base_row, bitwidth: b.n, elements: p.size, mat_span: p.range };
    dram.transpose_h2v(&values, &layout)
}

/// The mats a labelled bbop computes on.
fn bbop_range(
    app: &App,
    b: &Bbop,
    cfg: &SimConfig,
    mode: Mode,
    table_begin: impl Fn(MatLabel) -> Result<usize>,
) -> Result<MatRange> {
    let vf = b.vf.unwrap_or(b.size);
    match b.ml {
        Some(Ml::Label(l)) => {
            let begin = table_begin(l)?;
            MatRange::new(begin, begin + cfg.mats_for(vf, mode) - 1)
                .map_err(|_| Error::Placement(format!("{}: {} does not fit the module", app.name, b.mnemonic())))
        }
        Some(Ml::Range(r)) => {
            let align = cfg.mat_align(mode);
            let begin = r.begin() / align * align;
            let end = (r.end() / align + 1) * align - 1;
            MatRange::new(begin, end.min(cfg.geometry.total_mats() - 1))
        }
        None => Err(Error::Placement(format!("{}: {} has no mat label", app.name, b.mnemonic()))),
    }
}

fn covers(outer: MatRange, inner: MatRange) -> bool {
    outer.begin() <= inner.begin() && inner.end() <= outer.end()
}

type ReduceInfo = Option<(ArithOp, u32, String)>;

struct Built {
    job: Job,
    reduce: ReduceInfo,
    sample: Option<LaneSample>,
}

fn build_job(
    app: &App,
    run: &AppRun,
    b: &Bbop,
    cfg: &SimConfig,
    mode: Mode,
    cu: &mut Controller,
    id: u64,
) -> Result<Built> {
    let g = cfg.geometry;
    let scratch = g.scratch_base()..g.rows_per_mat;
    if b.kind == BbopKind::Mov {
        let uprog = mov_uprog(app, run, b, &g)?;
        let reserve = uprog.mat_span().ok_or_else(|| Error::Placement(format!("{}: empty move", app.name)))?;
        return Ok(Built { job: Job::new(id, 0, reserve, Arc::new(uprog)), reduce: None, sample: None });
    }
    let pid = run.pid;
    let label_begin = |l: MatLabel| -> Result<usize> {
        run.labels.get(&l).copied().ok_or(Error::UnresolvedLabel { label: l.to_string(), pid })
    };
    let range = bbop_range(app, b, cfg, mode, label_begin)?;
    let vf = b.vf.unwrap_or(b.size);
    let op = b.op();
    let reduction = op.filter(|o| o.is_reduction());
    let sample = Some((vf.min(range.len() * g.columns_per_mat), range.len() * g.columns_per_mat));
    let check = |name: &str| -> Result<Placed> {
        let p = *placed(app, run, name)?;
        if !covers(p.range, range) {
            return Err(Error::Placement(format!(
                "{}: operand `{name}` lives in mats {} but `{}` runs on {range}",
                app.name,
                p.range,
                b.mnemonic()
            )));
        }
        Ok(p)
    };
    if let Some(red) = reduction {
        let src = check(b.src1.as_ref().map(|s| s.name()).unwrap_or(""))?;
        if src.size > vf {
            return Err(Error::Placement(format!(
                "{}: reduction source `{}` holds {} live lanes but vf={vf}",
                app.name,
                b.src1.as_ref().map(|s| s.name()).unwrap_or(""),
                src.size
            )));
        }
        let layout = VerticalLayout { base_row: src.base_row, bitwidth: b.n, elements: vf, mat_span: range };
        if let Some(dram) = cu.dram_mut() {
            pad_identity(dram, &layout, red)?;
        }
        let plan = plan_reduction(&layout, red, &g, scratch)?;
        let mut job = Job::new(id, 0, range, Arc::new(plan.uprog));
        job.capture = Some(plan.result);
        return Ok(Built { job, reduce: Some((red, b.n, b.dst.0.clone())), sample });
    }
    let dst = check(b.dst.name())?;
    if dst.size > vf {
        return Err(Error::Placement(format!(
            "{}: `{}` writes {vf} lanes of `{}`, which holds {} live lanes",
            app.name,
            b.mnemonic(),
            b.dst,
            dst.size
        )));
    }
    let row = |s: &Option<mimdram_core::isa::Operand>| -> Result<Option<usize>> {
        s.as_ref().map(|s| check(s.name()).map(|p| p.base_row)).transpose()
    };
    let pl = UprogPlacement {
        mats: range,
        dst: dst.base_row,
        src1: row(&b.src1)?,
        src2: row(&b.src2)?,
        sel: row(&b.sel)?,
        scratch_base: scratch.start,
        scratch_end: scratch.end,
    };
    Ok(Built { job: Job::new(id, 0, range, Arc::new(build_uprog(b, &pl)?)), reduce: None, sample })
}

/// Expands a `bbop_mov` into one GB-MOV or LC-MOV per helper-flip-flop
/// window per bit row.
fn mov_uprog(app: &App, run: &AppRun, b: &Bbop, g: &DramGeometry) -> Result<MicroProgram> {
    let src_name = b.src1.as_ref().map(|s| s.name()).unwrap_or("");
    let ps = *placed(app, run, src_name)?;
    let pd = *placed(app, run, b.dst.name())?;
    let w = g.hffs_per_mat;
    let cols = g.columns_per_mat;
    if !b.src_idx.is_multiple_of(w)
        || !b.dst_idx.is_multiple_of(w)
        || (!b.size.is_multiple_of(w) && b.dst_idx + b.size < pd.size)
    {
        return Err(Error::Unsupported(format!(
            "{}: move offsets and partial tails must align to {w} lanes",
            app.name
        )));
    }
    let layout =
        |p: &Placed| VerticalLayout { base_row: p.base_row, bitwidth: b.n, elements: p.size, mat_span: p.range };
    let segs = mov_route(b, &layout(&ps), &layout(&pd), cols)?;
    let mut p = MicroProgram::new(Some(BbopKind::Mov), b.n);
    if ps.base_row == pd.base_row && ps.range == pd.range && b.src_idx == b.dst_idx {
        return Ok(p);
    }
    for seg in &segs {
        for k in 0..b.n as usize {
            for e in seg.elements.clone().step_by(w) {
                let d = MoveDescriptor {
                    src: CellAddr { mat: seg.src_mat, row: ps.base_row + k, column: (b.src_idx + e) % cols },
                    dst: CellAddr { mat: seg.dst_mat, row: pd.base_row + k, column: (b.dst_idx + e) % cols },
                    width: w,
                };
                p.push(if seg.src_mat == seg.dst_mat { Command::lc_mov(d)? } else { Command::gb_mov(d)? });
            }
        }
    }
    Ok(p)
}
