//! Scalar reference interpreter for the kernel IR.

use std::collections::BTreeMap;

use mimdram_core::isa::lane_mask;

use crate::ir::{compute_max_vf, Expr, KernelIr, Stmt};

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KernelState {
    pub arrays: BTreeMap<String, Vec<u64>>,
    pub scalars: BTreeMap<String, u64>,
}

/// Runs the kernel one lane at a time. Arrays missing from `inputs` start at
/// zero; provided arrays are truncated or zero-extended to their declared
/// length and masked to their width.
pub fn interpret(ir: &KernelIr, inputs: &BTreeMap<String, Vec<u64>>) -> KernelState {
    let mut st = KernelState::default();
    for a in &ir.arrays {
        let mut v: Vec<u64> =
            inputs.get(&a.name).map(|v| v.iter().map(|x| x & lane_mask(a.bits)).collect()).unwrap_or_default();
        v.resize(a.len, 0);
        st.arrays.insert(a.name.clone(), v);
    }
    for l in &ir.loops {
        let vf = compute_max_vf(l);
        let n = l.bits;
        let mut temps: BTreeMap<&str, Vec<u64>> = BTreeMap::new();
        for s in &l.body {
            let vals: Vec<u64> = (0..vf).map(|i| eval(s.expr(), i, n, &st.arrays, &temps)).collect();
            match s {
                Stmt::Store { array, .. } => {
                    if let Some(dst) = st.arrays.get_mut(array) {
                        dst[..vf].copy_from_slice(&vals);
                    }
                }
                Stmt::Let { name, .. } => {
                    temps.insert(name, vals);
                }
                Stmt::Reduce { scalar, op, .. } => {
                    let f = op.fold_op();
                    let r = vals.iter().fold(op.identity(n), |acc, &v| f.eval(acc, v, n));
                    st.scalars.insert(scalar.clone(), r);
                }
            }
        }
    }
    st
}

fn eval(e: &Expr, i: usize, n: u32, arrays: &BTreeMap<String, Vec<u64>>, temps: &BTreeMap<&str, Vec<u64>>) -> u64 {
    let r = match e {
        Expr::Elem(a) => arrays[a][i],
        Expr::Temp(t) => temps[t.as_str()][i],
        Expr::Unary(op, a) => op.eval(eval(a, i, n, arrays, temps), 0, n),
        Expr::Binary(op, a, b) => op.eval(eval(a, i, n, arrays, temps), eval(b, i, n, arrays, temps), n),
        Expr::Select(c, a, b) => {
            if eval(c, i, n, arrays, temps) & 1 == 1 {
                eval(a, i, n, arrays, temps)
            } else {
                eval(b, i, n, arrays, temps)
            }
        }
    };
    r & lane_mask(n)
}
