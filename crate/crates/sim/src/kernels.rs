//! Bundled kernel shapes and seeded input generation.

use std::collections::BTreeMap;

use mimdram_compiler::{compile, CompileOptions, KernelIr};
use mimdram_core::isa::{lane_mask, BbopKind, Directive, Program};
use mimdram_core::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::machine::App;

pub const KERNELS: [&str; 5] = ["gemm", "doitgen", "3mm", "backprop", "absdiff"];

/// DSL source of a bundled kernel with vectorization factor `vf`.
pub fn kernel_source(name: &str, vf: usize, bits: u32) -> Result<String> {
    let t = format!("u{bits}");
    let src = match name {
        // multiply-accumulate into an output tile
        "gemm" => format!(
            "array A: {t}[{vf}]\narray B: {t}[{vf}]\narray C: {t}[{vf}]\n\
             for i in 0..{vf} {{ C[i] = C[i] + A[i] * B[i] }}\n"
        ),
        // dot product over a slice
        "doitgen" => format!(
            "array A: {t}[{vf}]\narray B: {t}[{vf}]\nscalar s: {t}\n\
             for i in 0..{vf} {{ s += A[i] * B[i] }}\n"
        ),
        "3mm" => format!(
            "array A: {t}[{vf}]\narray B: {t}[{vf}]\narray C: {t}[{vf}]\narray D: {t}[{vf}]\n\
             array E: {t}[{vf}]\narray F: {t}[{vf}]\narray G: {t}[{vf}]\n\
             for i in 0..{vf} {{ E[i] = A[i] * B[i]\n F[i] = C[i] * D[i]\n G[i] = E[i] * F[i] }}\n"
        ),
        // narrow hidden layer followed by a wide weight update
        "backprop" => {
            let h = (vf / 4).max(1);
            format!(
                "array X: {t}[{vf}]\narray W: {t}[{vf}]\narray H: {t}[{h}]\narray D: {t}[{vf}]\n\
                 for i in 0..{h} {{ H[i] = relu(X[i] - W[i]) }}\n\
                 for i in 0..{vf} {{ D[i] = W[i] + (X[i] & W[i]) }}\n"
            )
        }
        "absdiff" => format!(
            "array A: {t}[{vf}]\narray B: {t}[{vf}]\narray D: {t}[{vf}]\nscalar m: {t}\n\
             for i in 0..{vf} {{ D[i] = select(A[i] > B[i], A[i] - B[i], B[i] - A[i])\n m |= D[i] }}\n"
        ),
        other => return Err(Error::Unsupported(format!("unknown kernel `{other}`"))),
    };
    Ok(src)
}

/// `name:vf` or `name:vf:bits`.
pub fn parse_kernel_spec(spec: &str) -> Result<(String, usize, u32)> {
    let bad = || Error::Unsupported(format!("kernel spec `{spec}` is not name:vf[:bits]"));
    let mut it = spec.split(':');
    let name = it.next().ok_or_else(bad)?.to_string();
    let vf = it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
    let bits = match it.next() {
        Some(b) => b.parse().map_err(|_| bad())?,
        None => 16,
    };
    if it.next().is_some() || vf == 0 || !(1..=64).contains(&bits) {
        return Err(bad());
    }
    Ok((name, vf, bits))
}

/// Seeded random contents for every declared array.
pub fn random_inputs(ir: &KernelIr, seed: u64) -> BTreeMap<String, Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ir.arrays
        .iter()
        .map(|a| {
            let m = lane_mask(a.bits);
            (a.name.clone(), (0..a.len).map(|_| rng.gen::<u64>() & m).collect())
        })
        .collect()
}

/// Seeded random host data for every `bbop_trsp_init` of an assembled
/// program, keyed the way the simulator looks it up.
pub fn program_inputs(p: &Program, seed: u64) -> BTreeMap<String, Vec<u64>> {
    let parts: BTreeMap<&str, (&str, usize)> = p
        .directives()
        .filter_map(|d| match d {
            Directive::Part { name, array, offset } => Some((name.name(), (array.name(), *offset))),
            _ => None,
        })
        .collect();
    let mut shape: BTreeMap<String, (usize, u32)> = BTreeMap::new();
    for b in p.instructions().filter(|b| b.kind == BbopKind::TrspInit) {
        let (key, end) = match parts.get(b.dst.name()) {
            Some((array, offset)) => (array.to_string(), offset + b.size),
            None => (b.dst.name().to_string(), b.size),
        };
        let e = shape.entry(key).or_insert((0, b.n));
        e.0 = e.0.max(end);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    shape
        .into_iter()
        .map(|(k, (len, n))| {
            let m = lane_mask(n);
            (k, (0..len).map(|_| rng.gen::<u64>() & m).collect())
        })
        .collect()
}

/// Compiles DSL text into a runnable app with seeded inputs.
pub fn app_from_source(name: &str, text: &str, opts: &CompileOptions, seed: u64) -> Result<(App, KernelIr)> {
    let c = compile(text, opts).map_err(|e| Error::Unsupported(format!("{name}: {e}")))?;
    let inputs = random_inputs(&c.source, seed);
    Ok((App { name: name.to_string(), program: c.program, inputs }, c.source))
}

pub fn bundled_app(spec: &str, opts: &CompileOptions, seed: u64) -> Result<(App, KernelIr)> {
    let (name, vf, bits) = parse_kernel_spec(spec)?;
    app_from_source(spec, &kernel_source(&name, vf, bits)?, opts, seed)
}
