//! Mat-label assignment: left paths share a label, right subtrees get their
//! own, and every value consumed under a foreign label is copied over by an
//! inserted move.

use std::collections::{BTreeMap, BTreeSet};

use mimdram_core::isa::MatLabel;

use crate::ddg::{Ddg, NodeOp, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MovInsert {
    pub loop_idx: usize,
    pub value: Value,
    /// Operand read by the move.
    pub source: String,
    /// Operand the move creates under `to`.
    pub copy: String,
    pub from: MatLabel,
    pub to: MatLabel,
    /// Nodes that read `copy` instead of `source`, in id order.
    pub consumers: Vec<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Labeling {
    pub node_labels: Vec<MatLabel>,
    /// Label every vector operand lives under.
    pub homes: BTreeMap<String, MatLabel>,
    pub movs: Vec<MovInsert>,
    /// Operand names each node actually reads, after move redirection.
    pub reads: Vec<Vec<String>>,
    pub label_count: u32,
}

struct State<'a> {
    ddg: &'a Ddg,
    scalars: &'a BTreeSet<String>,
    labels: Vec<Option<MatLabel>>,
    homes: BTreeMap<String, MatLabel>,
    next: u32,
}

impl State<'_> {
    fn fresh(&mut self) -> MatLabel {
        let l = MatLabel(self.next);
        self.next += 1;
        l
    }

    fn forced(&self, id: usize) -> Option<MatLabel> {
        self.homes.get(&self.ddg.nodes[id].output).copied()
    }

    /// Label for a node that does not inherit one: reuse whatever already
    /// anchors its left path, or open a new label.
    fn start_label(&mut self, mut id: usize) -> MatLabel {
        loop {
            if let Some(l) = self.labels[id].or_else(|| self.forced(id)) {
                return l;
            }
            match &self.ddg.nodes[id].inputs[0] {
                Value::Node(c) => id = *c,
                Value::Leaf(a) => return self.homes.get(a).copied().unwrap_or_else(|| self.fresh()),
            }
        }
    }

    fn dfs(&mut self, id: usize, inherited: Option<MatLabel>) {
        if self.labels[id].is_some() {
            return;
        }
        let label = match self.forced(id).or(inherited) {
            Some(l) => l,
            None => self.start_label(id),
        };
        self.labels[id] = Some(label);
        let node = &self.ddg.nodes[id];
        if !self.scalars.contains(&node.output) {
            self.homes.entry(node.output.clone()).or_insert(label);
        }
        let inputs = node.inputs.clone();
        for (k, v) in inputs.iter().enumerate() {
            match v {
                Value::Leaf(a) => {
                    self.homes.entry(a.clone()).or_insert(label);
                }
                Value::Node(c) if k == 0 => self.dfs(*c, Some(label)),
                Value::Node(c) => self.dfs(*c, None),
            }
        }
    }
}

/// Labels every node; sinks are visited in source order, children in operand
/// order. `scalars` names reduction targets, which live on the host.
pub fn assign_mat_labels(ddg: &Ddg, scalars: &BTreeSet<String>) -> Labeling {
    let n = ddg.nodes.len();
    let mut st = State { ddg, scalars, labels: vec![None; n], homes: BTreeMap::new(), next: 0 };
    let loops: BTreeSet<usize> = ddg.nodes.iter().map(|x| x.loop_idx).collect();
    for li in loops {
        for node in ddg.nodes.iter().filter(|x| x.loop_idx == li) {
            if ddg.consumers(node.id).is_empty() {
                st.dfs(node.id, None);
            }
        }
        for node in ddg.nodes.iter().filter(|x| x.loop_idx == li) {
            st.dfs(node.id, None);
        }
    }
    let node_labels: Vec<MatLabel> = st.labels.iter().map(|l| l.unwrap_or(MatLabel(0))).collect();
    let mut homes = st.homes;

    let mut movs: Vec<MovInsert> = Vec::new();
    let mut reads = Vec::with_capacity(n);
    for node in &ddg.nodes {
        let to = node_labels[node.id];
        let mut names = Vec::new();
        for v in &node.inputs {
            let (source, from) = match v {
                Value::Leaf(a) => (a.clone(), homes[a]),
                Value::Node(p) => (ddg.nodes[*p].output.clone(), node_labels[*p]),
            };
            if from == to || node.op == NodeOp::Copy {
                names.push(source);
                continue;
            }
            let existing = movs.iter_mut().find(|m| m.loop_idx == node.loop_idx && m.value == *v && m.to == to);
            let copy = match existing {
                Some(m) => {
                    if m.consumers.last() != Some(&node.id) {
                        m.consumers.push(node.id);
                    }
                    m.copy.clone()
                }
                None => {
                    let copy = format!("_{}_m{}", source.trim_start_matches('_'), movs.len());
                    homes.insert(copy.clone(), to);
                    movs.push(MovInsert {
                        loop_idx: node.loop_idx,
                        value: v.clone(),
                        source,
                        copy: copy.clone(),
                        from,
                        to,
                        consumers: vec![node.id],
                    });
                    copy
                }
            };
            names.push(copy);
        }
        reads.push(names);
    }
    Labeling { node_labels, homes, movs, reads, label_count: st.next }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ddg::build_ddg;
    use crate::ir::parse_kernel;

    fn label(src: &str) -> (Ddg, Labeling) {
        let ir = parse_kernel(src).unwrap();
        let g = build_ddg(&ir).unwrap();
        let scalars = ir.scalars.iter().map(|s| s.name.clone()).collect();
        let l = assign_mat_labels(&g, &scalars);
        (g, l)
    }

    const DECLS: &str = "array A: u8[8]\narray B: u8[8]\narray C: u8[8]\narray D: u8[8]\n\
                         array E: u8[8]\narray F: u8[8]\narray G: u8[8]\n";

    #[test]
    fn chain_shares_one_label() {
        let (_, l) = label(&format!("{DECLS}for i in 0..8 {{ t = A[i] + B[i]\n u = t * C[i]\n D[i] = u - A[i] }}"));
        assert_eq!(l.node_labels, vec![MatLabel(0); 3]);
        assert!(l.movs.is_empty());
    }

    #[test]
    fn right_subtree_gets_its_own_label_and_one_move() {
        let (_, l) =
            label(&format!("{DECLS}for i in 0..8 {{ E[i] = A[i] * B[i]\n F[i] = C[i] * D[i]\n G[i] = E[i] * F[i] }}"));
        assert_eq!(l.node_labels, vec![MatLabel(0), MatLabel(1), MatLabel(0)]);
        assert_eq!(l.movs.len(), 1);
        let m = &l.movs[0];
        assert_eq!((m.from, m.to, m.source.as_str()), (MatLabel(1), MatLabel(0), "F"));
        assert_eq!(m.consumers, vec![2]);
        assert_eq!(l.reads[2], vec!["E".to_string(), m.copy.clone()]);
    }

    #[test]
    fn independent_chains_get_distinct_labels() {
        let (_, l) = label(&format!("{DECLS}for i in 0..8 {{ C[i] = A[i] + B[i]\n F[i] = D[i] + E[i] }}"));
        assert_eq!(l.node_labels, vec![MatLabel(0), MatLabel(1)]);
        assert!(l.movs.is_empty());
    }

    #[test]
    fn arrays_keep_their_home_across_loops() {
        let (_, l) = label(&format!(
            "{DECLS}for i in 0..8 {{ C[i] = A[i] + B[i] }}\nfor i in 0..8 {{ D[i] = C[i] + E[i]\n F[i] = E[i] - A[i] }}"
        ));
        assert_eq!(l.node_labels[1], l.homes["C"]);
        // F's chain starts at E, which already lives under C's label
        assert_eq!(l.node_labels[2], l.homes["E"]);
        assert!(l.movs.is_empty());
    }
}
