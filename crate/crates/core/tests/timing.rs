use std::sync::Arc;

use mimdram_core::control::{ControlConfig, ControlUnit, EnergyModel, Job};
use mimdram_core::dram::Wordline;
use mimdram_core::interconnect::{CellAddr, MoveDescriptor, TimingParams};
use mimdram_core::isa::MatRange;
use mimdram_core::uprog::{Command, MicroProgram};
use mimdram_core::{ExactTiming, Rational};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn q(n: i64, d: i64) -> Rational {
    Rational::new(n, d)
}

fn r(b: usize, e: usize) -> MatRange {
    MatRange::new(b, e).unwrap()
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

/// Wall time of one command run alone on an exact control unit.
fn elapsed(cmd: Command, timing: ExactTiming) -> Rational {
    let cfg = ControlConfig { timing, ..ControlConfig::default() };
    let mut cu = ControlUnit::new(cfg).unwrap();
    let reserve = cmd.mats;
    let mut p = MicroProgram::new(None, 1);
    p.push(cmd);
    cu.dispatch(Job::new(0, 0, reserve, Arc::new(p))).unwrap();
    cu.run_to_idle().unwrap()[0].time
}

fn mv(src_mat: usize, dst_mat: usize) -> MoveDescriptor {
    MoveDescriptor {
        src: CellAddr { mat: src_mat, row: 9, column: 4 },
        dst: CellAddr { mat: dst_mat, row: 20, column: 4 },
        width: 4,
    }
}

#[test]
fn move_latencies_over_random_configs() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let t = random_timing(&mut rng);
        let gb = t.t_ras + t.t_reloc + t.t_wr + t.t_rp;
        let lc = q(2, 1) * (t.t_ras + t.t_rp) + t.t_reloc + t.t_wr;
        assert_eq!(t.gb_mov(), gb);
        assert_eq!(t.lc_mov(), lc);
        assert_eq!(elapsed(Command::gb_mov(mv(0, 1)).unwrap(), t), gb);
        assert_eq!(elapsed(Command::lc_mov(mv(3, 3)).unwrap(), t), lc);
    }
}

#[test]
fn ap_and_aap_latencies() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..10 {
        let t = random_timing(&mut rng);
        let ap = q(11, 10) * t.t_ras + t.t_rp;
        let aap = q(2, 1) * q(11, 10) * t.t_ras + t.t_rp;
        assert_eq!(t.ap(), ap);
        assert_eq!(t.aap(), aap);
        let w = Wordline::plain;
        assert_eq!(elapsed(Command::ap([w(0), w(1), w(2)], r(0, 0)), t), ap);
        assert_eq!(elapsed(Command::aap(w(9), &[w(10)], r(0, 15)), t), aap);
    }
    let d = ExactTiming::default();
    assert_eq!((d.ap(), d.aap(), d.gb_mov(), d.lc_mov()), (q(246, 5), q(422, 5), q(60, 1), q(106, 1)));
}

#[test]
fn activation_energy_multipliers() {
    let e = EnergyModel::<Rational>::default();
    assert_eq!(e.tra_multiplier(), q(144, 100));
    assert_eq!(e.ap(16), q(144, 100));
    assert_eq!(e.ap(1), q(144, 100) / q(16, 1));
    assert_eq!(e.aap(16), q(222, 100));
    for m in 1..=16 {
        assert_eq!(e.ap(m), q(144, 100) * q(m as i64, 16));
    }
    let scaled = EnergyModel { e_act: q(7, 3), ..e };
    assert_eq!(scaled.ap(16), q(7, 3) * q(144, 100));
}
