use mimdram_core::dram::{DramModule, VerticalLayout};
use mimdram_core::geometry::DramGeometry;
use mimdram_core::interconnect::vector_reduce;
use mimdram_core::isa::{lane_mask, ArithOp, MatRange};
use proptest::prelude::*;

fn oracle(op: ArithOp, n: u32, v: &[u64]) -> u64 {
    let m = lane_mask(n);
    match op {
        ArithOp::RedSum => v.iter().fold(0u64, |a, &x| a.wrapping_add(x)) & m,
        ArithOp::RedAnd => v.iter().fold(m, |a, &x| a & x),
        ArithOp::RedOr => v.iter().fold(0, |a, &x| a | x),
        ArithOp::RedXor => v.iter().fold(0, |a, &x| a ^ x),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn in_dram_reduction_equals_host_fold(
        op in prop::sample::select(vec![ArithOp::RedSum, ArithOp::RedAnd, ArithOp::RedOr, ArithOp::RedXor]),
        n in prop::sample::select(vec![8u32, 16, 32]),
        mats in 1usize..=8,
        first in 0usize..24,
        fill in 0usize..512,
        seed in any::<u64>(),
        dense in any::<bool>(),
    ) {
        let g = DramGeometry { chips: 2, ..DramGeometry::default() };
        let cols = g.columns_per_mat;
        let elements = (mats - 1) * cols + fill + 1;
        let mut s = seed;
        let v: Vec<u64> = (0..elements)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                // mostly-ones inputs keep AND reductions from collapsing to zero
                if dense { lane_mask(n) & !(1 << ((s >> 58) % 3)) } else { (s >> 7) & lane_mask(n) }
            })
            .collect();
        let span = MatRange::new(first, first + mats - 1).unwrap();
        let src = VerticalLayout { base_row: 40, bitwidth: n, elements, mat_span: span };
        let mut d = DramModule::new(g).unwrap();
        d.transpose_h2v(&v, &src).unwrap();
        let out = vector_reduce(&mut d, &src, op, g.scratch_base()..g.rows_per_mat).unwrap();
        prop_assert_eq!(out.value, oracle(op, n, &v));
        // the source operand survives
        prop_assert_eq!(d.transpose_v2h(&VerticalLayout { elements, ..src }).unwrap(), v);

        let rounds = (mats as f64).log2().ceil() as usize;
        prop_assert_eq!(out.plan.round_moves.len(), rounds);
        let per_element = n.div_ceil(4) as usize;
        let mut live = mats;
        for &moves in &out.plan.round_moves {
            let senders = live / 2;
            prop_assert_eq!(moves, senders * cols * per_element);
            live -= senders;
        }
        prop_assert_eq!(live, 1);
        let mut width = cols;
        for &moves in &out.plan.local_moves {
            width /= 2;
            prop_assert_eq!(moves, width * per_element);
        }
        prop_assert_eq!(width, 4);
    }
}
