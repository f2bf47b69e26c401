//! The fifteen acceptance criteria, one pass/fail line each.

use std::collections::BTreeMap;
use std::io::Write as _;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command as Proc;
use std::sync::Arc;

use mimdram_compiler::random::{random_kernel, KernelShape};
use mimdram_compiler::{compile, interpret, CompileOptions, Compiled, NodeOp, Value};
use mimdram_core::alloc::{Allocator, Handle, PoolShape, RegionId, RegionPool};
use mimdram_core::control::{ControlConfig, Job};
use mimdram_core::dram::{DramModule, VerticalLayout, Wordline};
use mimdram_core::geometry::DramGeometry;
use mimdram_core::interconnect::{vector_reduce, CellAddr, MoveDescriptor, TimingParams};
use mimdram_core::isa::{
    chip_select, lane_mask, ArithOp, Bbop, BbopKind, EncodedMatRange, MatLabel, MatRange, Ml, Operand,
};
use mimdram_core::uprog::{build_uprog, execute_uprog, Command, CommandKind, MicroProgram, UprogPlacement};
use mimdram_core::{ExactController, ExactEnergy, ExactTiming, Rational};
use mimdram_sim::kernels::{app_from_source, bundled_app, KERNELS};
use mimdram_sim::{generate_mixes, run_instance, run_mix, MixFile, Mode, Report, RunStats, SimConfig, System, VfClass};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ELEMENTWISE: [ArithOp; 16] = [
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

fn q(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn range(b: usize, e: usize) -> MatRange {
    MatRange::new(b, e).unwrap()
}

fn o(s: &str) -> Operand {
    Operand::new(s)
}

fn small() -> DramGeometry {
    DramGeometry { chips: 2, ..DramGeometry::default() }
}

fn placement(mats: MatRange, g: &DramGeometry) -> UprogPlacement {
    UprogPlacement {
        mats,
        dst: 8,
        src1: Some(80),
        src2: Some(160),
        sel: Some(240),
        scratch_base: g.scratch_base(),
        scratch_end: g.rows_per_mat,
    }
}

fn layout(base_row: usize, n: u32, elements: usize, mats: MatRange) -> VerticalLayout {
    VerticalLayout { base_row, bitwidth: n, elements, mat_span: mats }
}

fn add_bbop(n: u32, mats: MatRange) -> Bbop {
    Bbop::arith(ArithOp::Add, o("c"), &[o("a"), o("b")], 512, n, Ml::Range(mats), 512)
}

fn is_aap(c: &Command) -> bool {
    matches!(c.kind, CommandKind::Aap { .. })
}

fn is_ap(c: &Command) -> bool {
    matches!(c.kind, CommandKind::Ap { .. })
}

fn random_timing(rng: &mut ChaCha8Rng) -> ExactTiming {
    TimingParams {
        t_ras: q(rng.gen_range(10..80), rng.gen_range(1..5)),
        t_rp: q(rng.gen_range(5..40), rng.gen_range(1..5)),
        t_wr: q(rng.gen_range(5..30), rng.gen_range(1..5)),
        t_reloc: q(rng.gen_range(1..10), rng.gen_range(1..5)),
        act_factor: q(11, 10),
    }
}

fn exact_cu(timing: ExactTiming) -> ExactController {
    ExactController::new(ControlConfig { timing, ..ControlConfig::default() }).unwrap()
}

/// Wall time of one command run alone.
fn elapsed(cmd: Command, timing: ExactTiming) -> Rational {
    let mut cu = exact_cu(timing);
    let reserve = cmd.mats;
    let mut p = MicroProgram::new(None, 1);
    p.push(cmd);
    cu.dispatch(Job::new(0, 0, reserve, Arc::new(p))).unwrap();
    cu.run_to_idle().unwrap()[0].time
}

fn c1_adder_command_count() {
    let g = DramGeometry::default();
    for n in [1u32, 8, 16, 32, 64] {
        let mats = range(0, 0);
        let p = build_uprog(&add_bbop(n, mats), &placement(mats, &g)).unwrap();
        let counted = p.commands().iter().filter(|c| is_aap(c) || is_ap(c)).count();
        assert_eq!((p.len(), counted), (8 * n as usize + 2, 8 * n as usize + 2), "n={n}");
    }
}

fn c2_full_adder_slices() {
    let g = DramGeometry::default();
    for n in [1u32, 8, 16, 32, 64] {
        let mats = range(0, 0);
        let p = build_uprog(&add_bbop(n, mats), &placement(mats, &g)).unwrap();
        let body = &p.commands()[2..];
        assert_eq!(body.len(), 8 * n as usize);
        for slice in body.chunks(8) {
            let aap = slice.iter().filter(|c| is_aap(c)).count();
            let ap = slice.iter().filter(|c| is_ap(c)).count();
            assert_eq!((aap, ap), (5, 3), "n={n}");
        }
    }
}

fn if_else_oracle(a: u64, b: u64, s: u64) -> u64 {
    if s & 1 == 1 {
        a
    } else {
        b
    }
}

fn c3_oracle_equivalence() {
    let g = small();
    let lanes = 1000usize;
    let mats = range(0, lanes.div_ceil(g.columns_per_mat) - 1);
    let pl = placement(mats, &g);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut checked = 0;
    for n in [8u32, 16, 32] {
        let vec = |rng: &mut ChaCha8Rng, m: u64| (0..lanes).map(|_| rng.gen::<u64>() & m).collect::<Vec<u64>>();
        let a = vec(&mut rng, lane_mask(n));
        let b = vec(&mut rng, lane_mask(n));
        let sel = vec(&mut rng, 1);
        let mut ops: Vec<Option<ArithOp>> = ELEMENTWISE.iter().copied().map(Some).collect();
        ops.push(None);
        for op in ops {
            let mut d = DramModule::new(g).unwrap();
            d.transpose_h2v(&a, &layout(80, n, lanes, mats)).unwrap();
            d.transpose_h2v(&b, &layout(160, n, lanes, mats)).unwrap();
            d.transpose_h2v(&sel, &layout(240, 1, lanes, mats)).unwrap();
            let bb = match op {
                Some(op) => Bbop::arith(op, o("d"), &[o("a"), o("b")], lanes, n, Ml::Range(mats), lanes),
                None => Bbop::if_else(o("d"), o("a"), o("b"), o("s"), lanes, n, Ml::Range(mats), lanes),
            };
            execute_uprog(&mut d, &build_uprog(&bb, &pl).unwrap()).unwrap();
            assert!(d.constant_rows_intact());
            let got = d.transpose_v2h(&layout(8, n, lanes, mats)).unwrap();
            for j in 0..lanes {
                let want = match op {
                    Some(op) => op.eval(a[j], b[j], n),
                    None => if_else_oracle(a[j], b[j], sel[j]),
                };
                assert_eq!(got[j], want, "{op:?} n={n} lane {j}");
            }
            // sources survive the operation
            assert_eq!(d.transpose_v2h(&layout(80, n, lanes, mats)).unwrap(), a);
            checked += 1;
        }
    }
    assert_eq!(checked, 17 * 3);
}

fn c4_tra_energy() {
    let e = ExactEnergy::default();
    // one base activation plus 22% for each of the two extra rows
    assert_eq!(e.tra_multiplier(), q(1, 1) + q(2, 1) * q(22, 100));
    assert_eq!(e.ap(16), q(144, 100) * e.e_act);
    assert_eq!(e.ap(1), q(144, 100) / q(16, 1) * e.e_act);
}

fn mv(src_mat: usize, dst_mat: usize) -> MoveDescriptor {
    MoveDescriptor {
        src: CellAddr { mat: src_mat, row: 9, column: 4 },
        dst: CellAddr { mat: dst_mat, row: 20, column: 4 },
        width: 4,
    }
}

fn c5_move_latencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let t = random_timing(&mut rng);
        let gb = t.t_ras + t.t_reloc + t.t_wr + t.t_rp;
        let lc = q(2, 1) * (t.t_ras + t.t_rp) + t.t_reloc + t.t_wr;
        assert_eq!(elapsed(Command::gb_mov(mv(0, 1)).unwrap(), t), gb);
        assert_eq!(elapsed(Command::lc_mov(mv(3, 3)).unwrap(), t), lc);
    }
}

fn c6_ap_aap_timing() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let w = Wordline::plain;
    for _ in 0..10 {
        let t = random_timing(&mut rng);
        assert_eq!(elapsed(Command::ap([w(2), w(3), w(4)], range(0, 0)), t), q(11, 10) * t.t_ras + t.t_rp);
        assert_eq!(elapsed(Command::aap(w(9), &[w(10)], range(0, 15)), t), q(2, 1) * q(11, 10) * t.t_ras + t.t_rp);
    }
}

fn fold(op: ArithOp, n: u32, v: &[u64]) -> u64 {
    let m = lane_mask(n);
    match op {
        ArithOp::RedSum => v.iter().fold(0u64, |a, &x| a.wrapping_add(x)) & m,
        ArithOp::RedAnd => v.iter().fold(m, |a, &x| a & x),
        ArithOp::RedOr => v.iter().fold(0, |a, &x| a | x),
        ArithOp::RedXor => v.iter().fold(0, |a, &x| a ^ x),
        _ => unreachable!(),
    }
}

fn c7_vector_reduction() {
    let g = small();
    let cols = g.columns_per_mat;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for op in [ArithOp::RedSum, ArithOp::RedAnd, ArithOp::RedOr, ArithOp::RedXor] {
        for n in [8u32, 16, 32] {
            for mats in 1..=8usize {
                let elements = (mats - 1) * cols + rng.gen_range(1..=cols);
                let v: Vec<u64> = (0..elements)
                    .map(|_| {
                        let x = rng.gen::<u64>() & lane_mask(n);
                        // keep AND reductions from collapsing to zero
                        if op == ArithOp::RedAnd {
                            x | (lane_mask(n) & !1)
                        } else {
                            x
                        }
                    })
                    .collect();
                let first = rng.gen_range(0..32 - mats);
                let src = layout(40, n, elements, range(first, first + mats - 1));
                let mut d = DramModule::new(g).unwrap();
                d.transpose_h2v(&v, &src).unwrap();
                let out = vector_reduce(&mut d, &src, op, g.scratch_base()..g.rows_per_mat).unwrap();
                assert_eq!(out.value, fold(op, n, &v), "{op:?} n={n} mats={mats}");
                let rounds = (mats as f64).log2().ceil() as usize;
                assert_eq!(out.plan.round_moves.len(), rounds);
                let mut live = mats;
                for &moves in &out.plan.round_moves {
                    let senders = live / 2;
                    assert_eq!(moves, senders * cols * n.div_ceil(4) as usize);
                    live -= senders;
                }
            }
        }
    }
}

fn c8_mat_range_codec() {
    let mut seen = std::collections::HashSet::new();
    for b in 0..128 {
        for e in b..128 {
            let r = range(b, e);
            assert_eq!(r.encode().decode().unwrap(), r);
            assert!(seen.insert(r.encode().bits()));
        }
    }
    // every begin <= end pair, single-mat ranges included
    assert_eq!(seen.len(), 128 * 129 / 2);
    for bits in 0u16..1 << 14 {
        assert_eq!(EncodedMatRange(bits).decode().is_ok(), (bits >> 7) <= (bits & 127));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..1000 {
        let b = rng.gen_range(0..128);
        let r = range(b, rng.gen_range(b..128));
        let mut covered = Vec::new();
        for chip in 0..8 {
            if let Some((lo, hi)) = chip_select(r, chip, 16) {
                assert!(lo <= hi && hi < 16);
                covered.extend(chip * 16 + lo..=chip * 16 + hi);
            }
        }
        assert_eq!(covered, r.mats().collect::<Vec<_>>());
    }
}

fn ap_job(id: u64, r: MatRange, cmds: usize) -> Job {
    let mut p = MicroProgram::new(None, 1);
    for _ in 0..cmds {
        p.push(Command::ap([Wordline::plain(2), Wordline::plain(3), Wordline::plain(4)], r));
    }
    Job::new(id, 0, r, Arc::new(p))
}

fn c9_scheduler() {
    let cu = |engines| ExactController::new(ControlConfig { engines, ..ControlConfig::default() }).unwrap();
    let pairs8: Vec<_> = (0..8).map(|i| (2 * i, 2 * i + 1)).collect();
    let pairs9: Vec<_> = (0..9).map(|i| (2 * i, 2 * i + 1)).collect();
    let cases: Vec<(usize, Vec<(usize, usize)>, Vec<u64>)> = vec![
        (8, vec![(0, 7), (0, 3), (8, 15)], vec![0, 2]),
        (8, pairs8, (0..8).collect()),
        (8, pairs9, (0..8).collect()),
        (8, vec![(0, 0), (0, 0), (0, 0)], vec![0]),
        (8, vec![(0, 127), (5, 5)], vec![0]),
        (8, vec![(5, 5), (0, 127), (6, 6)], vec![0, 2]),
        (2, vec![(0, 0), (1, 1), (2, 2)], vec![0, 1]),
        (8, vec![(0, 3), (3, 6), (7, 9), (6, 8)], vec![0, 2]),
        (8, vec![], vec![]),
        (8, vec![(0, 15), (16, 31), (15, 16)], vec![0, 1]),
        (1, vec![(0, 0), (1, 1)], vec![0]),
        (8, vec![(10, 20), (0, 9), (21, 127), (0, 127)], vec![0, 1, 2]),
    ];
    for (i, (engines, ranges, want)) in cases.into_iter().enumerate() {
        let mut c = cu(engines);
        for (id, &(b, e)) in ranges.iter().enumerate() {
            c.dispatch(ap_job(id as u64, range(b, e), 1)).unwrap();
        }
        assert_eq!(c.schedule_step(), want, "golden case {i}");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut c = cu(8);
    c.record_events();
    let mut waiting: BTreeMap<u64, MatRange> = BTreeMap::new();
    let (mut next, mut events, mut seen) = (0u64, 0usize, 0usize);
    while events < 100_000 {
        for _ in 0..rng.gen_range(0..4) {
            let b = rng.gen_range(0..128);
            let len = if rng.gen_bool(0.1) { rng.gen_range(1..=128) } else { rng.gen_range(1..=8) };
            let r = range(b, (b + len - 1).min(127));
            if c.dispatch(ap_job(next, r, rng.gen_range(1..4))).is_ok() {
                waiting.insert(next, r);
                next += 1;
                events += 1;
            }
        }
        c.step().unwrap();
        for e in &c.events()[seen..] {
            if let mimdram_core::control::Event::Launch { job, .. } = e {
                assert!(waiting.remove(job).is_some());
            }
            events += 1;
        }
        seen = c.events().len();
        let running = c.running_ranges();
        for (i, a) in running.iter().enumerate() {
            assert!(running[i + 1..].iter().all(|b| !a.overlaps(b)), "overlapping reservations");
        }
        if c.in_flight() < 8 {
            assert!(waiting.values().all(|m| !c.scoreboard().is_free(*m)), "idle engine with launchable bbop");
        }
    }
    c.run_to_idle().unwrap();
    assert_eq!(c.in_flight(), 0);
}

fn c10_mimd_overlap() {
    let g = DramGeometry::default();
    let wall = |k: usize| {
        let mut c = exact_cu(ExactTiming::default());
        for i in 0..k {
            let mats = range(2 * i, 2 * i + 1);
            let p = build_uprog(&add_bbop(16, mats), &placement(mats, &g)).unwrap();
            c.dispatch(Job::new(i as u64, i, mats, Arc::new(p))).unwrap();
        }
        c.run_to_idle().unwrap().iter().map(|d| d.time).max().unwrap()
    };
    let single = wall(1);
    for k in 2..=8 {
        assert_eq!(wall(k), single, "k={k}");
    }

    let cfg = SimConfig { trace: true, trace_uprog: true, ..SimConfig::default() };
    let (app, _) = bundled_app("3mm:1000:8", &CompileOptions::default(), 0).unwrap();
    let out = run_instance(&[app], &cfg, Mode::Mimdram).unwrap();
    let mul_jobs: Vec<String> = out
        .uprog_trace
        .lines()
        .filter(|l| l.contains("bbop_mul E,") || l.contains("bbop_mul F,"))
        .map(|l| l.split(' ').nth(2).unwrap().trim_start_matches("job").trim_end_matches(':').to_string())
        .collect();
    assert_eq!(mul_jobs.len(), 2);
    let time_of = |what: &str, job: &str| -> f64 {
        let job = format!("job={job}");
        let line = out
            .trace
            .lines()
            .map(|l| l.split(' ').collect::<Vec<_>>())
            .find(|t| t.len() > 3 && t[2] == what && t[3] == job)
            .unwrap();
        line[0].trim_start_matches("t=").parse().unwrap()
    };
    let (s0, e0) = (time_of("launch", &mul_jobs[0]), time_of("complete", &mul_jobs[0]));
    let (s1, e1) = (time_of("launch", &mul_jobs[1]), time_of("complete", &mul_jobs[1]));
    assert!(s0 < e1 && s1 < e0, "multiplies ran [{s0},{e0}] and [{s1},{e1}]");
}

/// Every cross-label edge carries exactly one move; same-label edges none.
fn mov_edges_ok(c: &Compiled) {
    let lab = &c.labels;
    for node in c.ddg.nodes.iter().filter(|n| n.op != NodeOp::Copy) {
        let here = lab.node_labels[node.id];
        for v in &node.inputs {
            let home = match v {
                Value::Node(p) => lab.node_labels[*p],
                Value::Leaf(a) => lab.homes[a],
            };
            let movs: Vec<_> = lab.movs.iter().filter(|m| &m.value == v && m.consumers.contains(&node.id)).collect();
            if home == here {
                assert!(movs.is_empty(), "same-label edge into node {} moved", node.id);
            } else {
                assert_eq!(movs.len(), 1, "edge {v:?} -> node {}", node.id);
                assert_eq!((movs[0].from, movs[0].to), (home, here));
            }
        }
    }
    for m in &lab.movs {
        let emitted = c.program.instructions().filter(|b| b.kind == BbopKind::Mov && b.dst.name() == m.copy).count();
        assert_eq!(emitted, 1, "move {}", m.copy);
    }
}

fn c11_compiler_end_to_end() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = CompileOptions::default();
    for k in 0..20 {
        let src = random_kernel(&mut rng, &KernelShape::default());
        mov_edges_ok(&compile(&src, &opts).unwrap());
        let (app, ir) = app_from_source("rand", &src, &opts, k).unwrap();
        let want = interpret(&ir, &app.inputs);
        let out = run_instance(std::slice::from_ref(&app), &SimConfig::default(), Mode::Mimdram).unwrap();
        let got = &out.apps[0];
        for (name, v) in &want.arrays {
            // arrays the kernel never touches are not placed in DRAM
            let got_v = got.arrays.get(name).or_else(|| app.inputs.get(name));
            assert_eq!(got_v, Some(v), "kernel {k} array {name}\n{src}");
        }
        for (name, v) in &want.scalars {
            assert_eq!(got.scalars.get(name), Some(v), "kernel {k} scalar {name}\n{src}");
        }
    }
}

fn c12_allocator() {
    const COLS: usize = 512;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let pool = |rng: &mut ChaCha8Rng| {
        let shape = PoolShape {
            subarrays: rng.gen_range(1..=6),
            mats: rng.gen_range(1..=16),
            slots_per_mat: rng.gen_range(1..=6),
        };
        let regions = rng.gen_range(1..=shape.capacity());
        let per_page = rng.gen_range(1..=8);
        (Allocator::new(RegionPool::preallocate(shape, regions.div_ceil(per_page), per_page), COLS, 1), shape.mats)
    };
    for _ in 0..10_000 {
        let (mut a, mats) = pool(&mut rng);
        let total = a.pool().total_regions();
        let mut live: Vec<Handle> = Vec::new();
        for _ in 0..rng.gen_range(1..12) {
            if !live.is_empty() && rng.gen_bool(0.3) {
                a.pim_free(live.swap_remove(rng.gen_range(0..live.len()))).unwrap();
            } else {
                let k = rng.gen_range(1..=mats.min(4));
                let counts = a.pool().free_counts().to_vec();
                let max = *counts.iter().max().unwrap();
                if let Ok(h) = a.pim_alloc(k * COLS, MatLabel(rng.gen_range(0..3)), 0) {
                    let regions = &a.get(h).unwrap().regions;
                    if k <= max {
                        let best = counts.iter().position(|&c| c == max).unwrap();
                        assert!(regions.iter().all(|r| r.subarray == best));
                    }
                    live.push(h);
                }
            }
            assert_eq!(a.pool().free_total() + a.allocated_regions(), total);
        }
    }
    for _ in 0..10_000 {
        let (mut a, mats) = pool(&mut rng);
        let k = rng.gen_range(1..=mats.min(4));
        let Ok(anchor) = a.pim_alloc(k * COLS, MatLabel(7), 3) else { continue };
        let Some((sub, span, _)) = a.get(anchor).unwrap().placement() else { continue };
        for _ in 0..rng.gen_range(0..6) {
            let _ = a.pim_alloc(rng.gen_range(1..=mats) * COLS, MatLabel(1), 3);
        }
        let free_here = (0..a.pool().shape().slots_per_mat)
            .any(|slot| span.mats().all(|mat| a.pool().is_free(RegionId { subarray: sub, mat, slot })));
        let total = a.pool().total_regions();
        match a.pim_alloc_align(k * COLS, MatLabel(7), 3) {
            Ok(h) => {
                let b = a.get(h).unwrap();
                assert_eq!(b.aligned, free_here);
                if free_here {
                    assert_eq!(b.placement().map(|(s, r, _)| (s, r)), Some((sub, span)));
                }
            }
            Err(_) => assert!(!free_here),
        }
        assert_eq!(a.pool().free_total() + a.allocated_regions(), total);
    }
}

/// Lanes a bbop of `vf` lanes provisions in each mode.
fn provisioned(vf: usize, mode: Mode) -> usize {
    match mode {
        Mode::Mimdram => vf.div_ceil(512) * 512,
        Mode::Simdram => vf.div_ceil(8192) * 8192,
    }
}

fn c13_utilization_trend() {
    let cfg = SimConfig { functional: false, ..SimConfig::default() };
    for vf in [512usize, 1000, 4000] {
        for k in KERNELS {
            let (app, _) = bundled_app(&format!("{k}:{vf}:8"), &CompileOptions::default(), 0).unwrap();
            let run =
                |mode| RunStats::from_outcome(&run_instance(std::slice::from_ref(&app), &cfg, mode).unwrap().apps[0]);
            let (mim, sim) = (run(Mode::Mimdram), run(Mode::Simdram));
            let vfs: Vec<usize> = app
                .program
                .instructions()
                .filter(|b| !matches!(b.kind, BbopKind::Mov | BbopKind::TrspInit))
                .map(|b| b.vf.unwrap_or(b.size))
                .collect();
            let lanes = |mode| vfs.iter().map(|&v| provisioned(v, mode)).sum::<usize>() as f64;
            let want = lanes(Mode::Simdram) / lanes(Mode::Mimdram);
            let ratio = mim.utilization() / sim.utilization();
            assert!((ratio - want).abs() < 1e-9, "{k}:{vf} ratio {ratio} want {want}");
            if vfs.iter().all(|&v| v == vf) {
                assert!((ratio - 8192.0 / provisioned(vf, Mode::Mimdram) as f64).abs() < 1e-9);
            }
            assert!(mim.wall_time <= sim.wall_time, "{k}:{vf} {} > {}", mim.wall_time, sim.wall_time);
        }
    }
}

fn c14_mix_metrics() {
    let cfg = SimConfig { functional: false, ..SimConfig::default() };
    let opts = CompileOptions::default();
    let mut cache = BTreeMap::new();
    let systems = [System::Simdram(1), System::Mimdram];
    for class in VfClass::ALL {
        let file = generate_mixes(class, 30, 8, 0);
        assert_eq!(MixFile::parse(&file.to_toml()).unwrap(), file);
        for mix in &file.mixes {
            assert_eq!(mix.apps.len(), 8);
            let r = run_mix(mix, &systems, &cfg, &opts, &mut cache).unwrap();
            for (_, m) in r.shared.values() {
                // arithmetic mean of speedups >= their harmonic mean >= the worst one
                let n = r.alone.len() as f64;
                assert!(m.weighted_speedup / n + 1e-9 >= m.harmonic_speedup, "{} WS/N < HS", mix.name);
                assert!(m.weighted_speedup + 1e-9 >= m.harmonic_speedup);
                assert!(m.harmonic_speedup + 1e-9 >= 1.0 / m.max_slowdown, "{} HS < 1/MS", mix.name);
            }
            let ws = |s| r.shared[&s].1.weighted_speedup;
            assert!(
                ws(System::Mimdram) > ws(System::Simdram(1)),
                "{}: {} vs {}",
                mix.name,
                ws(System::Mimdram),
                ws(System::Simdram(1))
            );
        }
    }
}

fn c15_determinism() {
    let cfg = SimConfig { trace: true, trace_uprog: true, alloc_trace: true, ..SimConfig::default() };
    let apps: Vec<_> = ["3mm:1000:8", "absdiff:2048:8", "backprop:4000:8"]
        .iter()
        .enumerate()
        .map(|(i, s)| bundled_app(s, &CompileOptions::default(), i as u64).unwrap().0)
        .collect();
    let once = || {
        let out = run_instance(&apps, &cfg, Mode::Mimdram).unwrap();
        let runs = out
            .apps
            .iter()
            .map(|a| mimdram_sim::report::AppReport::new(&a.name, "mimdram", &RunStats::from_outcome(a)))
            .collect();
        let report = Report::new(runs);
        (out.trace, out.uprog_trace, out.alloc_trace, report.to_json(), report.to_csv())
    };
    assert_eq!(once(), once());

    let dir = std::env::temp_dir().join(format!("mimdram-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let cli = |tag: &str| {
        let (trace, report) = (dir.join(format!("trace{tag}.txt")), dir.join(format!("report{tag}.json")));
        let status = Proc::new(env!("CARGO_BIN_EXE_mimdsim"))
            .args(["run", "3mm:512:8", "gemm:1000:8", "--trace"])
            .arg(&trace)
            .arg("--report")
            .arg(&report)
            .status()
            .unwrap();
        assert!(status.success());
        (std::fs::read(trace).unwrap(), std::fs::read(report).unwrap())
    };
    let (a, b) = (cli("a"), cli("b"));
    std::fs::remove_dir_all(&dir).unwrap();
    assert!(!a.0.is_empty());
    assert_eq!(a, b);
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn()); 15] = [
        ("addition command count 8n+2", c1_adder_command_count),
        ("full-adder slice 5 AAP + 3 AP", c2_full_adder_slices),
        ("oracle equivalence over 17 ops", c3_oracle_equivalence),
        ("TRA energy multiplier", c4_tra_energy),
        ("move latencies", c5_move_latencies),
        ("AP/AAP timing", c6_ap_aap_timing),
        ("vector reduction", c7_vector_reduction),
        ("mat-range codec", c8_mat_range_codec),
        ("scheduler golden cases and fuzz", c9_scheduler),
        ("MIMD overlap", c10_mimd_overlap),
        ("compiler end-to-end", c11_compiler_end_to_end),
        ("allocator properties", c12_allocator),
        ("utilization trend", c13_utilization_trend),
        ("mix metrics", c14_mix_metrics),
        ("determinism", c15_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = std::time::Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(f)).is_ok();
        // written past the test harness's capture so the summary always shows
        let status = if ok { "PASS" } else { "FAIL" };
        let _ = writeln!(std::io::stdout(), "criterion {:>2} {status}: {name} ({:.1?})", i + 1, start.elapsed());
        if !ok {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
