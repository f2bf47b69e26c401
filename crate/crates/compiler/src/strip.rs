//! Splits loops whose vectorization factor exceeds a piece size into
//! independent pieces over per-piece slices of the arrays.

use mimdram_core::isa::ArithOp;

use crate::ir::{compute_max_vf, ArrayDecl, Expr, KernelIr, Loop, ScalarDecl, Stmt};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Part {
    pub name: String,
    pub array: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Combine {
    pub scalar: String,
    pub op: ArithOp,
    pub parts: Vec<String>,
    /// Index (in the stripped IR) of the loop after which the partial results
    /// are all available.
    pub after_loop: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Stripped {
    pub ir: KernelIr,
    pub parts: Vec<Part>,
    pub combines: Vec<Combine>,
}

fn part_name(array: &str, b: usize) -> String {
    format!("_{array}_p{b}")
}

fn rename(e: &Expr, f: &impl Fn(&str) -> String) -> Expr {
    match e {
        Expr::Elem(a) => Expr::Elem(f(a)),
        Expr::Temp(t) => Expr::Temp(t.clone()),
        Expr::Unary(op, a) => Expr::Unary(*op, Box::new(rename(a, f))),
        Expr::Binary(op, a, b) => Expr::Binary(*op, Box::new(rename(a, f)), Box::new(rename(b, f))),
        Expr::Select(c, a, b) => Expr::Select(Box::new(rename(c, f)), Box::new(rename(a, f)), Box::new(rename(b, f))),
    }
}

/// Arrays longer than `piece` become `ceil(len / piece)` slices; loops
/// longer than `piece` become one loop per slice. A kernel that already fits
/// is returned unchanged.
pub fn strip_mine(ir: &KernelIr, piece: usize) -> Stripped {
    let piece = piece.max(1);
    let split = |a: &ArrayDecl| a.len > piece;
    let mut out = Stripped::default();
    for a in &ir.arrays {
        if split(a) {
            for b in 0..a.len.div_ceil(piece) {
                let name = part_name(&a.name, b);
                out.ir.arrays.push(ArrayDecl {
                    name: name.clone(),
                    bits: a.bits,
                    len: piece.min(a.len - b * piece),
                    line: a.line,
                });
                out.parts.push(Part { name, array: a.name.clone(), offset: b * piece });
            }
        } else {
            out.ir.arrays.push(a.clone());
        }
    }
    out.ir.scalars = ir.scalars.clone();
    for l in &ir.loops {
        let vf = compute_max_vf(l);
        let pieces = vf.div_ceil(piece);
        let mut partials: Vec<(String, ArithOp, Vec<String>)> = Vec::new();
        for b in 0..pieces {
            let arr = |name: &str| match ir.array(name) {
                Some(a) if split(a) => part_name(name, b),
                _ => name.to_string(),
            };
            let body = l
                .body
                .iter()
                .map(|st| match st {
                    Stmt::Store { array, expr, line } => {
                        Stmt::Store { array: arr(array), expr: rename(expr, &arr), line: *line }
                    }
                    Stmt::Let { name, expr, line } => {
                        Stmt::Let { name: name.clone(), expr: rename(expr, &arr), line: *line }
                    }
                    Stmt::Reduce { scalar, op, expr, line } => {
                        let target = if pieces > 1 {
                            let p = format!("_{scalar}_p{b}");
                            match partials.iter_mut().find(|x| x.0 == *scalar) {
                                Some(x) => x.2.push(p.clone()),
                                None => partials.push((scalar.clone(), *op, vec![p.clone()])),
                            }
                            p
                        } else {
                            scalar.clone()
                        };
                        Stmt::Reduce { scalar: target, op: *op, expr: rename(expr, &arr), line: *line }
                    }
                })
                .collect();
            let this = if pieces > 1 { piece.min(vf - b * piece) } else { vf };
            let (trip, lanes) = if pieces > 1 { (this, 1) } else { (l.trip, l.lanes) };
            out.ir.loops.push(Loop { var: l.var.clone(), trip, lanes, bits: l.bits, body, line: l.line });
        }
        for (scalar, op, parts) in partials {
            let bits = ir.scalar(&scalar).map(|s| s.bits).unwrap_or(l.bits);
            for p in &parts {
                out.ir.scalars.push(ScalarDecl { name: p.clone(), bits, line: l.line });
            }
            out.combines.push(Combine { scalar, op, parts, after_loop: out.ir.loops.len() - 1 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::parse_kernel;

    #[test]
    fn splits_into_capacity_batches() {
        let ir = parse_kernel(
            "array A: u8[70000]\narray B: u8[70000]\nscalar s: u8\nfor i in 0..70000 { B[i] = ~A[i]\n s += B[i] }",
        )
        .unwrap();
        let st = strip_mine(&ir, 65536);
        assert_eq!(st.ir.loops.len(), 2);
        assert_eq!(compute_max_vf(&st.ir.loops[0]), 65536);
        assert_eq!(compute_max_vf(&st.ir.loops[1]), 70000 - 65536);
        assert_eq!(st.parts.len(), 4);
        assert_eq!(st.parts[1], Part { name: "_A_p1".into(), array: "A".into(), offset: 65536 });
        assert_eq!(st.combines.len(), 1);
        assert_eq!(st.combines[0].parts, vec!["_s_p0".to_string(), "_s_p1".to_string()]);
    }

    #[test]
    fn small_kernels_are_untouched() {
        let ir =
            parse_kernel("array A: u8[4000]\narray B: u8[4000]\nfor i in 0..500 lanes 8 { B[i] = ~A[i] }").unwrap();
        let st = strip_mine(&ir, 65536);
        assert_eq!(st.ir, ir);
        assert!(st.parts.is_empty());
    }
}
