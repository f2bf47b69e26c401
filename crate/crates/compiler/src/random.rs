//! Seeded generator of random, well-formed kernels for differential testing.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelShape {
    pub max_loops: usize,
    pub max_stmts: usize,
    pub max_depth: u32,
    /// Upper bound on a loop's vectorization factor.
    pub max_vf: usize,
}

impl Default for KernelShape {
    fn default() -> Self {
        Self { max_loops: 3, max_stmts: 4, max_depth: 3, max_vf: 2048 }
    }
}

const BINARY: [&str; 12] = ["+", "-", "*", "/", "&", "|", "^", "==", ">", ">=", "<", "<="];
const CALL2: [&str; 2] = ["max", "min"];
const UNARY: [&str; 4] = ["~", "abs", "relu", "popcount"];
const REDUCE: [&str; 4] = ["+=", "&=", "|=", "^="];

fn expr<R: Rng>(rng: &mut R, leaves: &[String], depth: u32) -> String {
    if depth == 0 || rng.gen_bool(0.3) {
        return leaves.choose(rng).cloned().unwrap_or_default();
    }
    let sub = |rng: &mut R| expr(rng, leaves, depth - 1);
    match rng.gen_range(0..10) {
        0..=4 => {
            let (a, b) = (sub(rng), sub(rng));
            format!("({a} {} {b})", BINARY.choose(rng).unwrap())
        }
        5 => {
            let (a, b) = (sub(rng), sub(rng));
            format!("{}({a}, {b})", CALL2.choose(rng).unwrap())
        }
        6..=7 => {
            let a = sub(rng);
            match *UNARY.choose(rng).unwrap() {
                "~" => format!("~{a}"),
                f => format!("{f}({a})"),
            }
        }
        _ => {
            let (c, a, b) = (sub(rng), sub(rng), sub(rng));
            format!("select({c}, {a}, {b})")
        }
    }
}

/// A random kernel in the DSL. Every loop has its own vectorization factor;
/// later loops may read arrays written by earlier ones.
pub fn random_kernel<R: Rng>(rng: &mut R, shape: &KernelShape) -> String {
    let bits = *[1u32, 4, 8, 16].choose(rng).unwrap();
    let loops = rng.gen_range(1..=shape.max_loops);
    let vf_choices = [1, 7, 64, 512, 513, 1000, shape.max_vf];
    let mut plans = Vec::new();
    for _ in 0..loops {
        let vf = (*vf_choices.choose(rng).unwrap()).min(shape.max_vf).max(1);
        let lanes = if vf.is_multiple_of(8) && rng.gen_bool(0.3) { 8 } else { 1 };
        plans.push((vf, lanes));
    }
    let widest = plans.iter().map(|p| p.0).max().unwrap_or(1);
    let inputs: Vec<String> = (0..rng.gen_range(1..=4)).map(|i| format!("In{i}")).collect();

    let mut decls = String::new();
    for a in &inputs {
        let _ = writeln!(decls, "array {a}: u{bits}[{widest}]");
    }
    let mut body = String::new();
    // (array, length) written so far
    let mut produced: Vec<(String, usize)> = Vec::new();
    let mut scalars = 0;
    for (l, &(vf, lanes)) in plans.iter().enumerate() {
        let mut leaves: Vec<String> = inputs.iter().map(|a| format!("{a}[i]")).collect();
        leaves.extend(produced.iter().filter(|p| p.1 >= vf).map(|p| format!("{}[i]", p.0)));
        let head = if lanes > 1 {
            format!("for i in 0..{} lanes {lanes} {{", vf / lanes)
        } else {
            format!("for i in 0..{vf} {{")
        };
        let _ = writeln!(body, "{head}");
        let mut wrote_any = false;
        let stmts = rng.gen_range(1..=shape.max_stmts);
        for s in 0..stmts {
            let e = expr(rng, &leaves, shape.max_depth);
            let last = s + 1 == stmts;
            match rng.gen_range(0..4) {
                0 if !last => {
                    let t = format!("t{l}_{s}");
                    let _ = writeln!(body, "  {t} = {e}");
                    leaves.push(t);
                }
                1 => {
                    let name = format!("s{scalars}");
                    scalars += 1;
                    let _ = writeln!(decls, "scalar {name}: u{bits}");
                    let _ = writeln!(body, "  {name} {} {e}", REDUCE.choose(rng).unwrap());
                    wrote_any = true;
                }
                _ => {
                    let name = format!("Out{l}_{s}");
                    let _ = writeln!(decls, "array {name}: u{bits}[{vf}]");
                    let _ = writeln!(body, "  {name}[i] = {e}");
                    leaves.push(format!("{name}[i]"));
                    produced.push((name, vf));
                    wrote_any = true;
                }
            }
        }
        if !wrote_any {
            let name = format!("Out{l}_z");
            let _ = writeln!(decls, "array {name}: u{bits}[{vf}]");
            let _ = writeln!(body, "  {name}[i] = {}", leaves.choose(rng).unwrap());
            produced.push((name, vf));
        }
        body.push_str("}\n");
    }
    decls + &body
}
