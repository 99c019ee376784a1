//! Seeded random graphs over the full operator vocabulary.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::graph::{infer_node_shape, ComputeGraph, EdgeId, NodeId, Op, ReduceFn, UnaryFn};
use crate::shape::TensorShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthConfig {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Upper bound on the elements of any generated tensor.
    pub max_elements: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_nodes: 5,
            max_nodes: 40,
            max_elements: 2048,
        }
    }
}

struct Builder {
    g: ComputeGraph,
    rng: ChaCha8Rng,
    /// Edges available as operands, with shapes.
    pool: Vec<(EdgeId, TensorShape)>,
    next: usize,
    max_elements: usize,
}

fn shape(dims: Vec<usize>) -> TensorShape {
    TensorShape::from_slice(&dims)
}

impl Builder {
    fn name(&mut self, prefix: &str) -> String {
        self.next += 1;
        format!("{prefix}{}", self.next)
    }

    fn input(&mut self, s: TensorShape) -> String {
        let n = self.name("in");
        self.g.add_input(&n, s).expect("fresh name");
        n
    }

    fn random_shape(&mut self, rank: usize) -> TensorShape {
        loop {
            let dims: Vec<usize> = (0..rank).map(|_| self.rng.gen_range(1..=6)).collect();
            if dims.iter().product::<usize>() <= self.max_elements {
                return shape(dims);
            }
        }
    }

    /// Picks an operand, favouring recent edges so chains form.
    fn operand(&mut self) -> (EdgeId, TensorShape) {
        let n = self.pool.len();
        let i = if self.rng.gen_bool(0.7) {
            n - 1 - self.rng.gen_range(0..n.min(3))
        } else {
            self.rng.gen_range(0..n)
        };
        self.pool[i].clone()
    }

    fn factorize(&mut self, mut n: usize, rank: usize) -> Vec<usize> {
        let mut dims = Vec::with_capacity(rank);
        for _ in 1..rank {
            let divisors: Vec<usize> = (1..=n).filter(|d| n % d == 0).collect();
            let d = *divisors.choose(&mut self.rng).expect("1 divides n");
            dims.push(d);
            n /= d;
        }
        dims.push(n);
        dims.shuffle(&mut self.rng);
        dims
    }

    /// One candidate operator with its inputs, or `None` if the operand
    /// does not suit the drawn kind.
    fn candidate(&mut self) -> Option<(Op, Vec<String>)> {
        let (x, xs) = self.operand();
        let r = xs.rank();
        let d = xs.dims().to_vec();
        let x = x.0;
        let pick = self.rng.gen_range(0..15);
        Some(match pick {
            0 | 1 => {
                let func = *[UnaryFn::Relu, UnaryFn::Gelu, UnaryFn::Exp, UnaryFn::Neg, UnaryFn::Sigmoid, UnaryFn::Tanh]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                (Op::Unary { func }, vec![x])
            }
            2 | 3 => {
                let same: Vec<String> = self
                    .pool
                    .iter()
                    .filter(|(e, s)| *s == xs && e.0 != x)
                    .map(|(e, _)| e.0.clone())
                    .collect();
                let other = match same.choose(&mut self.rng) {
                    Some(e) if self.rng.gen_bool(0.6) => e.clone(),
                    _ => {
                        let keep = self.rng.gen_range(1..=r);
                        let dims: Vec<usize> = d[r - keep..]
                            .iter()
                            .map(|&e| if self.rng.gen_bool(0.3) { 1 } else { e })
                            .collect();
                        self.input(shape(dims))
                    }
                };
                if self.rng.gen_bool(0.5) {
                    (Op::Add, vec![x, other])
                } else {
                    (Op::Add, vec![other, x])
                }
            }
            4 if r >= 2 => {
                let k = d[r - 1];
                let n = self.rng.gen_range(1..=6);
                let b = if r > 2 && self.rng.gen_bool(0.5) {
                    let mut bd = d[..r - 2].to_vec();
                    bd.extend([k, n]);
                    bd
                } else {
                    vec![k, n]
                };
                let w = self.input(shape(b));
                (Op::MatMul, vec![x, w])
            }
            5 if r == 4 => {
                let pad = self.rng.gen_range(0..=1);
                let kh = self.rng.gen_range(1..=3).min(d[2] + 2 * pad);
                let kw = self.rng.gen_range(1..=3).min(d[3] + 2 * pad);
                let o = self.rng.gen_range(1..=6);
                let stride = self.rng.gen_range(1..=2);
                let w = self.input(shape(vec![o, d[1], kh, kw]));
                let mut ins = vec![x, w];
                if self.rng.gen_bool(0.5) {
                    ins.push(self.input(shape(vec![o])));
                }
                (Op::Conv2D { stride, pad }, ins)
            }
            6 => {
                let mut axes: Vec<usize> = (0..r).filter(|_| self.rng.gen_bool(0.4)).collect();
                if axes.is_empty() {
                    axes.push(r - 1);
                }
                let mut ins = vec![x];
                if self.rng.gen_bool(0.5) {
                    let last = d[r - 1];
                    ins.push(self.input(shape(vec![last])));
                    ins.push(self.input(shape(vec![last])));
                }
                (Op::LayerNorm { axes }, ins)
            }
            7 => (
                Op::Softmax {
                    axis: self.rng.gen_range(0..r),
                },
                vec![x],
            ),
            8 => {
                let mut axes: Vec<usize> = (0..r).filter(|_| self.rng.gen_bool(0.4)).collect();
                if axes.is_empty() {
                    axes.push(self.rng.gen_range(0..r));
                }
                let func = *[ReduceFn::Sum, ReduceFn::Mean, ReduceFn::Max]
                    .choose(&mut self.rng)
                    .expect("non-empty");
                (
                    Op::Reduce {
                        axes,
                        func,
                        keepdims: self.rng.gen_bool(0.5),
                    },
                    vec![x],
                )
            }
            9 | 10 => {
                let rank = self.rng.gen_range(1..=4);
                let dims = self.factorize(xs.numel(), rank);
                (Op::Reshape { shape: dims }, vec![x])
            }
            11 | 12 => {
                let mut perm: Vec<usize> = (0..r).collect();
                perm.shuffle(&mut self.rng);
                (Op::Transpose { perm }, vec![x])
            }
            13 if r == 4 => {
                if self.rng.gen_bool(0.5) && d[1] % 4 == 0 {
                    (Op::DepthToSpace { block: 2 }, vec![x])
                } else if d[2] % 2 == 0 && d[3] % 2 == 0 {
                    (Op::SpaceToDepth { block: 2 }, vec![x])
                } else {
                    return None;
                }
            }
            14 => {
                let axis = self.rng.gen_range(0..r);
                let e = d[axis];
                if self.rng.gen_bool(0.5) {
                    let len = self.rng.gen_range(1..=e + 1);
                    let indices = (0..len).map(|_| self.rng.gen_range(0..e)).collect();
                    (Op::Gather { axis, indices }, vec![x])
                } else {
                    let start = self.rng.gen_range(0..e);
                    let end = self.rng.gen_range(start + 1..=e);
                    let step = self.rng.gen_range(1..=2);
                    (Op::Slice { axis, start, end, step }, vec![x])
                }
            }
            _ => return None,
        })
    }

    /// Adds the node if its shape infers, else rolls back the node and
    /// every graph input created since `inputs_before`.
    fn try_add(&mut self, op: Op, inputs: Vec<String>, inputs_before: usize) -> bool {
        let id = self.name("n");
        let refs: Vec<&str> = inputs.iter().map(String::as_str).collect();
        self.g.add_node(&id, op, &refs, &id).expect("fresh name");
        let nid = NodeId(id.clone());
        let ok = infer_node_shape(&self.g, &self.g.nodes[&nid])
            .ok()
            .filter(|s| s.numel() <= self.max_elements);
        match ok {
            Some(s) => {
                self.g.edges.get_mut(&EdgeId(id.clone())).expect("just added").shape = Some(s.clone());
                self.pool.push((EdgeId(id), s));
                true
            }
            None => {
                self.g.remove_node(&nid);
                for e in self.g.inputs.drain(inputs_before..) {
                    self.g.edges.remove(&e);
                }
                false
            }
        }
    }
}

/// Random valid graph; every unconsumed tensor is a graph output.
pub fn random_graph(seed: u64, config: &SynthConfig) -> ComputeGraph {
    let mut b = Builder {
        g: ComputeGraph::new(),
        rng: ChaCha8Rng::seed_from_u64(seed),
        pool: Vec::new(),
        next: 0,
        max_elements: config.max_elements,
    };
    let target = b.rng.gen_range(config.min_nodes..=config.max_nodes);
    for _ in 0..b.rng.gen_range(1..=2) {
        let rank = b.rng.gen_range(1..=4);
        let s = b.random_shape(rank);
        let n = b.input(s.clone());
        b.pool.push((EdgeId(n), s));
    }
    while b.g.node_count() < target {
        let inputs_before = b.g.inputs.len();
        if let Some((op, ins)) = b.candidate() {
            b.try_add(op, ins, inputs_before);
        }
    }
    b.g.relink();
    let outputs: Vec<EdgeId> = b
        .g
        .edges
        .values()
        .filter(|e| e.consumers.is_empty() && !b.g.inputs.contains(&e.id))
        .map(|e| e.id.clone())
        .collect();
    b.g.outputs = outputs;
    // inputs nobody reads would be flagged by validation
    let unused: Vec<EdgeId> = b
        .g
        .inputs
        .iter()
        .filter(|e| b.g.consumers(e).is_empty())
        .cloned()
        .collect();
    for e in unused {
        b.g.edges.remove(&e);
        b.g.inputs.retain(|i| *i != e);
    }
    for id in b.g.nodes.keys().cloned().collect::<Vec<_>>() {
        let out = b.g.nodes[&id].output.clone();
        b.g.edges.get_mut(&out).expect("output edge").shape = None;
    }
    b.g
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, parse_graph, to_ir, validate};

    #[test]
    fn graphs_are_valid_and_sized() {
        let cfg = SynthConfig::default();
        for seed in 0..30 {
            let g = random_graph(seed, &cfg);
            assert!((5..=40).contains(&g.node_count()));
            assert!(validate(&g).is_valid(), "seed {seed}: {:?}", validate(&g));
            infer_shapes(&g).unwrap();
        }
    }

    #[test]
    fn same_seed_same_graph() {
        let cfg = SynthConfig::default();
        assert_eq!(to_ir(&random_graph(9, &cfg)), to_ir(&random_graph(9, &cfg)));
    }

    #[test]
    fn topo_order_respects_edges_on_fifty_nodes() {
        let cfg = SynthConfig {
            min_nodes: 50,
            max_nodes: 50,
            ..Default::default()
        };
        let g = random_graph(4, &cfg);
        let order = g.topo_order().unwrap();
        let pos = |n: &NodeId| order.iter().position(|m| m == n).unwrap();
        for n in g.nodes.values() {
            for (c, _) in g.consumers(&n.output) {
                assert!(pos(&n.id) < pos(c));
            }
        }
        assert_eq!(order.len(), 50);
    }

    #[test]
    fn serialized_graphs_reparse() {
        let g = random_graph(2, &SynthConfig::default());
        let h = parse_graph(&to_ir(&g)).unwrap();
        assert_eq!(to_ir(&g), to_ir(&h));
    }
}
