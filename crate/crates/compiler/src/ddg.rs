//! Data-dependency graph over the vectorized statements.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use mimdram_core::isa::ArithOp;

use crate::error::{CompileError, Result};
use crate::ir::{compute_max_vf, Expr, KernelIr, Stmt};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeOp {
    Arith(ArithOp),
    Select,
    /// Plain assignment; lowered to `bbop_mov`.
    Copy,
    Reduce(ArithOp),
}

/// Where a node input comes from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    /// An array as it stood when its loop started.
    Leaf(String),
    Node(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub id: usize,
    pub op: NodeOp,
    /// Operands in source order; the first is the DFS left child.
    pub inputs: Vec<Value>,
    /// Operand name written (a scalar for reductions).
    pub output: String,
    pub loop_idx: usize,
    pub vf: usize,
    pub n: u32,
    pub line: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ddg {
    pub nodes: Vec<Node>,
    /// Producer to consumer, one entry per consuming operand slot.
    pub edges: Vec<(usize, usize)>,
}

impl Ddg {
    pub fn from_nodes(nodes: Vec<Node>) -> Self {
        let mut edges = Vec::new();
        for n in &nodes {
            for v in &n.inputs {
                if let Value::Node(p) = v {
                    edges.push((*p, n.id));
                }
            }
        }
        Self { nodes, edges }
    }

    pub fn consumers(&self, id: usize) -> Vec<usize> {
        let set: BTreeSet<usize> = self.edges.iter().filter(|e| e.0 == id).map(|e| e.1).collect();
        set.into_iter().collect()
    }

    /// Kahn's algorithm, always taking the lowest ready id.
    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.nodes.len();
        let mut indeg = vec![0usize; n];
        let mut succ: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(p, c) in &self.edges {
            if p >= n || c >= n {
                return Err(CompileError::Cycle(p.max(c)));
            }
            indeg[c] += 1;
            succ[p].push(c);
        }
        let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&i| indeg[i] == 0).map(Reverse).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(Reverse(i)) = ready.pop() {
            order.push(i);
            for &c in &succ[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.push(Reverse(c));
                }
            }
        }
        if order.len() < n {
            let stuck = (0..n).find(|&i| indeg[i] > 0).unwrap_or(0);
            return Err(CompileError::Cycle(stuck));
        }
        Ok(order)
    }
}

struct Builder<'a> {
    ir: &'a KernelIr,
    nodes: Vec<Node>,
    anon: usize,
    used_names: BTreeSet<String>,
}

impl Builder<'_> {
    fn push(&mut self, op: NodeOp, inputs: Vec<Value>, output: String, ctx: (usize, usize, u32, usize)) -> usize {
        let id = self.nodes.len();
        let (loop_idx, vf, n, line) = (ctx.0, ctx.1, ctx.2, ctx.3);
        self.nodes.push(Node { id, op, inputs, output, loop_idx, vf, n, line });
        id
    }

    fn fresh(&mut self) -> String {
        let name = format!("_t{}", self.anon);
        self.anon += 1;
        name
    }

    fn lower(
        &mut self,
        e: &Expr,
        cur: &BTreeMap<String, Value>,
        temps: &BTreeMap<String, Value>,
        ctx: (usize, usize, u32, usize),
    ) -> Value {
        let (op, args): (NodeOp, Vec<&Expr>) = match e {
            Expr::Elem(a) => return cur.get(a).cloned().unwrap_or_else(|| Value::Leaf(a.clone())),
            Expr::Temp(t) => return temps[t].clone(),
            Expr::Unary(op, a) => (NodeOp::Arith(*op), vec![a]),
            Expr::Binary(op, a, b) => (NodeOp::Arith(*op), vec![a, b]),
            Expr::Select(c, a, b) => (NodeOp::Select, vec![c, a, b]),
        };
        let inputs = args.into_iter().map(|a| self.lower(a, cur, temps, ctx)).collect();
        let out = self.fresh();
        Value::Node(self.push(op, inputs, out, ctx))
    }

    fn temp_name(&mut self, name: &str, loop_idx: usize) -> String {
        if self.used_names.insert(name.to_string()) {
            name.to_string()
        } else {
            format!("_{name}_l{loop_idx}")
        }
    }
}

/// One node per bbop; loads and stores are folded into operand names.
pub fn build_ddg(ir: &KernelIr) -> Result<Ddg> {
    let mut b = Builder { ir, nodes: Vec::new(), anon: 0, used_names: BTreeSet::new() };
    for (li, l) in ir.loops.iter().enumerate() {
        let vf = compute_max_vf(l);
        let mut cur: BTreeMap<String, Value> = BTreeMap::new();
        let mut temps: BTreeMap<String, Value> = BTreeMap::new();
        for st in &l.body {
            let ctx = (li, vf, l.bits, st.line());
            let plain = matches!(st.expr(), Expr::Elem(_) | Expr::Temp(_));
            let v = b.lower(st.expr(), &cur, &temps, ctx);
            match st {
                Stmt::Store { array, .. } => {
                    let id = match v {
                        Value::Node(id) if !plain => {
                            b.nodes[id].output = array.clone();
                            id
                        }
                        v => b.push(NodeOp::Copy, vec![v], array.clone(), ctx),
                    };
                    cur.insert(array.clone(), Value::Node(id));
                }
                Stmt::Let { name, .. } => {
                    if let Value::Node(id) = v {
                        if !plain {
                            b.nodes[id].output = b.temp_name(name, li);
                        }
                    }
                    temps.insert(name.clone(), v);
                }
                Stmt::Reduce { scalar, op, .. } => {
                    // the source must hold exactly `vf` live lanes
                    let v = match v {
                        Value::Leaf(a) if b.ir.array(&a).is_some_and(|d| d.len > vf) => {
                            let out = b.fresh();
                            Value::Node(b.push(NodeOp::Copy, vec![Value::Leaf(a)], out, ctx))
                        }
                        v => v,
                    };
                    b.push(NodeOp::Reduce(*op), vec![v], scalar.clone(), ctx);
                }
            }
        }
    }
    let ddg = Ddg::from_nodes(b.nodes);
    ddg.topo_order()?;
    Ok(ddg)
}
