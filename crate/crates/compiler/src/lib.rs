//! Kernel DSL compiler: vectorization-factor analysis, data-dependency graph,
//! mat labeling with move insertion, and bbop assembly emission.

pub mod ddg;
pub mod emit;
pub mod error;
pub mod interp;
pub mod ir;
pub mod label;
pub mod random;
pub mod strip;

use std::collections::BTreeSet;

use mimdram_core::isa::Program;

pub use ddg::{build_ddg, Ddg, Node, NodeOp, Value};
pub use emit::{emit, mats_per_label};
pub use error::{CompileError, Result};
pub use interp::{interpret, KernelState};
pub use ir::{compute_max_vf, parse_kernel, KernelIr};
pub use label::{assign_mat_labels, Labeling, MovInsert};
pub use strip::{strip_mine, Stripped};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompileOptions {
    pub columns_per_mat: usize,
    pub mats: usize,
    /// Splits every loop into this many concurrently schedulable pieces.
    pub shards: usize,
    /// Splits loops wider than the module instead of rejecting them.
    pub strip_mine: bool,
}

impl Default for CompileOptions {
    fn default() -> Self {
        Self { columns_per_mat: 512, mats: 128, shards: 1, strip_mine: true }
    }
}

impl CompileOptions {
    pub fn capacity(&self) -> usize {
        self.columns_per_mat * self.mats
    }

    /// Largest vectorization factor a single loop piece may have.
    pub fn piece(&self, ir: &KernelIr) -> usize {
        let cap = self.capacity();
        if self.shards <= 1 {
            return cap;
        }
        let widest = ir.loops.iter().map(compute_max_vf).max().unwrap_or(1).min(cap);
        let mats = widest.div_ceil(self.columns_per_mat).div_ceil(self.shards).max(1);
        (mats * self.columns_per_mat).min(cap)
    }
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub source: KernelIr,
    pub stripped: Stripped,
    pub ddg: Ddg,
    pub order: Vec<usize>,
    pub labels: Labeling,
    pub program: Program,
}

impl Compiled {
    pub fn assembly(&self) -> String {
        self.program.to_string()
    }
}

pub fn compile_ir(ir: &KernelIr, opts: &CompileOptions) -> Result<Compiled> {
    if !opts.strip_mine {
        if let Some(l) = ir.loops.iter().find(|l| compute_max_vf(l) > opts.capacity()) {
            return Err(CompileError::Capacity(format!(
                "line {}: vectorization factor {} exceeds the module's {} lanes; strip-mine the loop",
                l.line,
                compute_max_vf(l),
                opts.capacity()
            )));
        }
    }
    let stripped = strip_mine(ir, opts.piece(ir));
    let ddg = build_ddg(&stripped.ir)?;
    let order = ddg.topo_order()?;
    let scalars: BTreeSet<String> = stripped.ir.scalars.iter().map(|s| s.name.clone()).collect();
    let labels = assign_mat_labels(&ddg, &scalars);
    let program = emit(&stripped, &ddg, &order, &labels);
    Ok(Compiled { source: ir.clone(), stripped, ddg, order, labels, program })
}

pub fn compile(text: &str, opts: &CompileOptions) -> Result<Compiled> {
    compile_ir(&parse_kernel(text)?, opts)
}
