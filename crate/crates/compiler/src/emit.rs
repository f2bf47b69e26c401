//! Lowering of the labeled graph to bbop assembly with allocation directives.

use std::collections::{BTreeMap, BTreeSet};

use mimdram_core::isa::{Bbop, Directive, Line, Ml, Operand, Program};

use crate::ddg::{Ddg, NodeOp};
use crate::label::Labeling;
use crate::strip::Stripped;

fn o(name: &str) -> Operand {
    Operand::new(name)
}

/// Mats a label needs for `vf` lanes.
pub fn mats_per_label(vf: usize, columns_per_mat: usize) -> usize {
    vf.div_ceil(columns_per_mat)
}

/// Per loop: allocations for operands first seen there (arrays also get a
/// `bbop_trsp_init`), then moves and bbops in topological order, then the
/// host combines of strip-mined reductions.
pub fn emit(st: &Stripped, ddg: &Ddg, order: &[usize], lab: &Labeling) -> Program {
    let mut lines = Vec::new();
    let mut allocated: BTreeSet<String> = BTreeSet::new();
    let scalars: BTreeSet<&str> = st.ir.scalars.iter().map(|s| s.name.as_str()).collect();
    let parts: BTreeMap<&str, _> = st.parts.iter().map(|p| (p.name.as_str(), p)).collect();
    for li in 0..st.ir.loops.len() {
        let nodes: Vec<usize> = order.iter().copied().filter(|&i| ddg.nodes[i].loop_idx == li).collect();
        let mut alloc = |name: &str, vf: usize, lines: &mut Vec<Line>| {
            if scalars.contains(name) || !allocated.insert(name.to_string()) {
                return;
            }
            let label = lab.homes[name];
            match st.ir.array(name) {
                Some(a) => {
                    if let Some(p) = parts.get(name) {
                        lines.push(Line::Directive(Directive::Part {
                            name: o(name),
                            array: o(&p.array),
                            offset: p.offset,
                        }));
                    }
                    lines.push(Line::Directive(Directive::Alloc { name: o(name), size: a.len, label }));
                    lines.push(Line::Instr(Bbop::trsp_init(o(name), a.len, a.bits)));
                }
                None => lines.push(Line::Directive(Directive::Alloc { name: o(name), size: vf, label })),
            }
        };
        for &id in &nodes {
            let node = &ddg.nodes[id];
            for r in &lab.reads[id] {
                if let Some(m) = lab.movs.iter().find(|m| m.copy == *r) {
                    alloc(&m.source, node.vf, &mut lines);
                }
                alloc(r, node.vf, &mut lines);
            }
            alloc(&node.output, node.vf, &mut lines);
        }
        for &id in &nodes {
            let node = &ddg.nodes[id];
            for m in lab.movs.iter().filter(|m| m.consumers.first() == Some(&id)) {
                lines.push(Line::Instr(Bbop::mov(o(&m.copy), 0, o(&m.source), 0, node.vf, node.n)));
            }
            let r: Vec<Operand> = lab.reads[id].iter().map(|s| o(s)).collect();
            let ml = Ml::Label(lab.node_labels[id]);
            let (out, vf, n) = (o(&node.output), node.vf, node.n);
            let b = match node.op {
                NodeOp::Arith(op) | NodeOp::Reduce(op) => Bbop::arith(op, out, &r, vf, n, ml, vf),
                NodeOp::Select => Bbop::if_else(out, r[1].clone(), r[2].clone(), r[0].clone(), vf, n, ml, vf),
                NodeOp::Copy => Bbop::mov(out, 0, r[0].clone(), 0, vf, n),
            };
            lines.push(Line::Instr(b));
        }
        for c in st.combines.iter().filter(|c| c.after_loop == li) {
            lines.push(Line::Directive(Directive::Combine {
                dst: o(&c.scalar),
                op: c.op,
                parts: c.parts.iter().map(|p| o(p)).collect(),
            }));
        }
    }
    Program { lines }
}
