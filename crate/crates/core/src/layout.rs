//! Layout selection from consumer reduction dims.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::classify::reduction_dims;
use crate::graph::{infer_shapes, ComputeGraph, EdgeId, GraphError, NodeId};
use crate::shape::TensorShape;

/// Lanes per texel.
pub const LANES: usize = 4;

/// Scalar size assumed when sizing copies.
pub const SCALAR_BYTES: usize = 4;

/// Physical arrangement of a tensor's logical dims.
///
/// `dim_order` lists the dims outermost first; the last entry is the
/// unit-stride dim. `blocked` names a dim packed into 4-element lanes.
/// `serves` records the consumer reduction dims this layout is built for.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize)]
pub struct LayoutChoice {
    pub dim_order: Vec<usize>,
    pub blocked: Option<usize>,
    pub serves: Vec<usize>,
    pub copies: Vec<LayoutChoice>,
}

impl LayoutChoice {
    pub fn row_major(rank: usize) -> Self {
        LayoutChoice {
            dim_order: (0..rank).collect(),
            ..Default::default()
        }
    }

    /// Layout putting the first of `dims` in lanes and the second (or the
    /// first again) on the unit-stride axis.
    pub fn serving(rank: usize, dims: &[usize]) -> Self {
        let Some(&top) = dims.first() else {
            return Self::row_major(rank);
        };
        let inner = dims.get(1).copied().unwrap_or(top);
        let mut dim_order: Vec<usize> = (0..rank).filter(|&d| d != top && d != inner).collect();
        if inner != top {
            dim_order.push(top);
        }
        dim_order.push(inner);
        LayoutChoice {
            dim_order,
            blocked: Some(top),
            serves: dims.to_vec(),
            copies: Vec::new(),
        }
    }

    pub fn is_row_major(&self) -> bool {
        self.blocked.is_none() && self.copies.is_empty() && self.dim_order.iter().enumerate().all(|(i, &d)| i == d)
    }

    /// Dims reachable along a directly addressable axis: lanes and the
    /// unit-stride dim.
    pub fn addressable(&self) -> Vec<usize> {
        let mut v: Vec<usize> = self.blocked.into_iter().chain(self.dim_order.last().copied()).collect();
        v.sort_unstable();
        v.dedup();
        v
    }

    /// The primary layout or copy whose `serves` covers every dim in `dims`.
    pub fn variant_for(&self, dims: &[usize]) -> &LayoutChoice {
        if dims.is_empty() {
            return self;
        }
        std::iter::once(self)
            .chain(&self.copies)
            .find(|l| dims.iter().all(|d| l.serves.contains(d)))
            .unwrap_or(self)
    }

    pub fn check(&self, rank: usize) -> Result<(), String> {
        let mut seen = vec![false; rank];
        for &d in &self.dim_order {
            if d >= rank || std::mem::replace(&mut seen[d], true) {
                return Err(format!("dim order {:?} is not a permutation of rank {rank}", self.dim_order));
            }
        }
        if self.dim_order.len() != rank {
            return Err(format!("dim order {:?} is not a permutation of rank {rank}", self.dim_order));
        }
        if let Some(b) = self.blocked {
            if b >= rank {
                return Err(format!("blocked dim {b} out of range for rank {rank}"));
            }
        }
        self.copies.iter().try_for_each(|c| c.check(rank))
    }
}

impl fmt::Display for LayoutChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&crate::graph::layout_literal(self))
    }
}

/// Reduction dims one consumer needs contiguous on an edge, in the edge's
/// own coordinates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConsumerDemand {
    pub consumer: NodeId,
    pub slot: usize,
    pub dims: Vec<usize>,
    /// Elements the consumer reads through this slot per execution.
    pub weight: u64,
}

/// Demand of input `slot` of `consumer`.
///
/// A reduction dim of the consumer's view becomes the innermost stored
/// dim whose index expression uses it. Unit dims are dropped.
pub fn preferred_layout(graph: &ComputeGraph, consumer: &NodeId, slot: usize) -> Result<ConsumerDemand, GraphError> {
    let node = graph.node(consumer).ok_or_else(|| GraphError::UnknownNode(consumer.clone()))?;
    let view_dims = reduction_dims(graph, node, slot)?;
    let stored = graph.shape(&node.inputs[slot])?;
    let (dims, weight) = match node.fusion.input_map(slot) {
        None => (view_dims, stored.numel() as u64),
        Some(m) => {
            let mut dims = Vec::new();
            for v in view_dims {
                if let Some(d) = (0..stored.rank()).rev().find(|&d| m.exprs()[d].mentions(v)) {
                    if !dims.contains(&d) {
                        dims.push(d);
                    }
                }
            }
            (dims, m.out_shape().numel() as u64)
        }
    };
    let dims = dims.into_iter().filter(|&d| stored.dim(d) > 1).collect();
    Ok(ConsumerDemand {
        consumer: consumer.clone(),
        slot,
        dims,
        weight,
    })
}

/// Combines consumer demands on one edge into a layout.
///
/// Each consumer contributes its first `k` dims. Distinct dims are ranked
/// by total weight (ties: smaller dim first) and packed `k` per layout;
/// every group after the first becomes a copy.
pub fn resolve_layout(shape: &TensorShape, demands: &[ConsumerDemand], k: usize) -> LayoutChoice {
    let k = k.max(1);
    let mut weight: BTreeMap<usize, u64> = BTreeMap::new();
    for d in demands {
        for &dim in d.dims.iter().take(k) {
            *weight.entry(dim).or_default() += d.weight;
        }
    }
    let mut ranked: Vec<(usize, u64)> = weight.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let dims: Vec<usize> = ranked.into_iter().map(|(d, _)| d).collect();
    let rank = shape.rank();
    let mut groups = dims.chunks(k);
    let Some(first) = groups.next() else {
        return LayoutChoice::row_major(rank);
    };
    let mut primary = LayoutChoice::serving(rank, first);
    primary.copies = groups.map(|g| LayoutChoice::serving(rank, g)).collect();
    primary
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct LayoutStats {
    pub layouts_by_edge: BTreeMap<String, String>,
    pub redundant_copy_count: usize,
    pub max_active_copy_bytes: usize,
}

/// Every demand placed on `edge`, in consumer order.
pub fn edge_demands(graph: &ComputeGraph, edge: &EdgeId) -> Result<Vec<ConsumerDemand>, GraphError> {
    graph
        .consumers(edge)
        .iter()
        .map(|(c, slot)| preferred_layout(graph, c, *slot))
        .collect()
}

/// Sets a layout on every edge.
///
/// Edges without demand adopt the primary layout of an equal-rank demanded
/// edge read by the same consumer, else stay row-major.
pub fn assign_layouts(graph: &ComputeGraph, k: usize) -> Result<(ComputeGraph, LayoutStats), GraphError> {
    let mut g = infer_shapes(graph)?;
    let mut chosen: BTreeMap<EdgeId, LayoutChoice> = BTreeMap::new();
    let mut demanded: BTreeMap<EdgeId, bool> = BTreeMap::new();
    for id in g.edges.keys() {
        let demands = edge_demands(&g, id)?;
        let any = demands.iter().any(|d| !d.dims.is_empty());
        chosen.insert(id.clone(), resolve_layout(g.shape(id)?, &demands, k));
        demanded.insert(id.clone(), any);
    }
    let mut adopted = BTreeMap::new();
    for (id, &any) in &demanded {
        if any {
            continue;
        }
        let rank = g.shape(id)?.rank();
        let mut partner = None;
        for (c, _) in g.consumers(id) {
            let node = &g.nodes[c];
            partner = node
                .inputs
                .iter()
                .find(|e| *e != id && demanded[*e] && g.shape(e).map(|s| s.rank() == rank).unwrap_or(false));
            if partner.is_some() {
                break;
            }
        }
        if let Some(p) = partner {
            let mut l = chosen[p].clone();
            l.copies.clear();
            adopted.insert(id.clone(), l);
        }
    }
    chosen.extend(adopted);
    let mut stats = LayoutStats::default();
    for (id, l) in chosen {
        let bytes = l.copies.len() * g.shape(&id)?.numel() * SCALAR_BYTES;
        stats.redundant_copy_count += l.copies.len();
        stats.max_active_copy_bytes = stats.max_active_copy_bytes.max(bytes);
        stats.layouts_by_edge.insert(id.0.clone(), l.to_string());
        g.edges.get_mut(&id).expect("edge exists").layout = Some(l);
    }
    Ok((g, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::parse_graph;

    fn demand(dims: &[usize], weight: u64) -> ConsumerDemand {
        ConsumerDemand {
            consumer: NodeId::from("c"),
            slot: 0,
            dims: dims.to_vec(),
            weight,
        }
    }

    #[test]
    fn matmul_operands_demand_contraction_dim() {
        let g = infer_shapes(&parse_graph("input a [4,8]\ninput b [8,3]\nc = MatMul(a, b)").unwrap()).unwrap();
        assert_eq!(preferred_layout(&g, &NodeId::from("c"), 0).unwrap().dims, vec![1]);
        assert_eq!(preferred_layout(&g, &NodeId::from("c"), 1).unwrap().dims, vec![0]);
    }

    #[test]
    fn add_has_no_demand() {
        let g = infer_shapes(&parse_graph("input a [4,8]\nc = Add(a, a)").unwrap()).unwrap();
        assert!(preferred_layout(&g, &NodeId::from("c"), 1).unwrap().dims.is_empty());
    }

    #[test]
    fn demand_follows_input_map() {
        let g = parse_graph("input a [8,4]\nt = Transpose(a; perm=[1,0])\nc = Softmax(t; axis=1)").unwrap();
        let (g, _) = crate::elim::eliminate_layout_ops(&g, &Default::default()).unwrap();
        assert_eq!(preferred_layout(&g, &NodeId::from("c"), 0).unwrap().dims, vec![0]);
    }

    #[test]
    fn two_dims_share_one_layout() {
        let shape = TensorShape::from_slice(&[8, 6, 16]);
        let l = resolve_layout(&shape, &[demand(&[0], 100), demand(&[2], 50)], 2);
        assert!(l.copies.is_empty());
        assert_eq!(l.addressable(), vec![0, 2]);
        assert_eq!(l.blocked, Some(0));
        assert_eq!(l.dim_order, vec![1, 0, 2]);
    }

    #[test]
    fn copies_follow_group_count() {
        let shape = TensorShape::from_slice(&[4, 4, 4, 4, 4]);
        for n in 0..=5usize {
            let demands: Vec<ConsumerDemand> = (0..n).map(|d| demand(&[d], 10)).collect();
            for k in 1..=3usize {
                let l = resolve_layout(&shape, &demands, k);
                assert_eq!(l.copies.len(), n.div_ceil(k).saturating_sub(1), "n={n} k={k}");
                l.check(5).unwrap();
            }
        }
    }

    #[test]
    fn no_demand_is_row_major() {
        let l = resolve_layout(&TensorShape::from_slice(&[3, 3]), &[demand(&[], 9)], 2);
        assert!(l.is_row_major());
    }

    #[test]
    fn heavier_dim_ranks_first_and_ties_go_to_smaller_dim() {
        let shape = TensorShape::from_slice(&[4, 4, 4]);
        let l = resolve_layout(&shape, &[demand(&[2], 5), demand(&[1], 9)], 1);
        assert_eq!(l.blocked, Some(1));
        let l = resolve_layout(&shape, &[demand(&[2], 5), demand(&[1], 5)], 1);
        assert_eq!(l.blocked, Some(1));
        assert_eq!(l.copies[0].blocked, Some(2));
    }

    #[test]
    fn elementwise_chain_stays_row_major() {
        let g = parse_graph("input a [4,4]\nb = Unary(a; fn=exp)\nc = Unary(b; fn=neg)").unwrap();
        let (g, stats) = assign_layouts(&g, 2).unwrap();
        assert!(g.edges.values().all(|e| e.layout.as_ref().unwrap().is_row_major()));
        assert_eq!(stats.redundant_copy_count, 0);
    }

    #[test]
    fn undemanded_operand_adopts_partner() {
        let g = parse_graph("input a [4,8]\ninput b [8,3]\ninput s [8,3]\nc = MatMul(a, bb)\nbb = Add(b, s)\n\
                             w = MatMul(bb, z)\ninput z [3,5]")
        .unwrap();
        let (g, _) = assign_layouts(&g, 2).unwrap();
        let l = |e: &str| g.edges[&EdgeId::from(e)].layout.clone().unwrap();
        assert_eq!(l("bb").blocked, Some(0));
        assert!(l("b").is_row_major());
    }

    #[test]
    fn one_consumer_never_forces_a_copy() {
        let shape = TensorShape::from_slice(&[4, 4, 4]);
        let l = resolve_layout(&shape, &[demand(&[0, 1, 2], 64)], 2);
        assert!(l.copies.is_empty());
        assert_eq!(l.addressable(), vec![0, 1]);
    }

    #[test]
    fn unit_dims_are_not_demanded() {
        let g = infer_shapes(&parse_graph("input x [1,3,5,5]\ninput w [2,3,1,1]\nc = Conv2D(x, w; stride=1, pad=0)").unwrap())
            .unwrap();
        assert_eq!(preferred_layout(&g, &NodeId::from("c"), 1).unwrap().dims, vec![1]);
    }
}
