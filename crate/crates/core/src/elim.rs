//! Layout-operator elimination and elementwise fusion.
//!
//! Pairs are visited producer first in topological order. A Fixed-output
//! operator disappears either into its producer's output map or into the
//! input maps of all its consumers; elementwise consumers are absorbed
//! into their producer's epilogue.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::classify::{classify, combination_action, combination_outcome, CombinationAction, OutputFlexibility};
use crate::graph::{infer_shapes, op_map, ComputeGraph, ElemOp, GraphError, NodeId, Op, OpKind, OperatorNode, Producer};
use crate::index::{broadcast_map, IndexError, IndexMap};
use crate::shape::TensorShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ElimOptions {
    pub fuse: bool,
    pub strength_reduce: bool,
}

impl Default for ElimOptions {
    fn default() -> Self {
        ElimOptions {
            fuse: true,
            strength_reduce: true,
        }
    }
}

/// Why a pair whose action is not `KeepBoth` survived the pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum ResidueReason {
    NotTryFuse,
    FeedsGraphOutput,
    MultiConsumer,
    PrologueFusionUnsupported,
    EpilogueOperand,
    BroadcastExpansion,
    WouldCycle,
    AnnotatedFixed,
    FusionDisabled,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Residue {
    pub producer: NodeId,
    pub consumer: Option<NodeId>,
    pub action: Option<CombinationAction>,
    pub reason: ResidueReason,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct RewriteStats {
    pub nodes_before: usize,
    pub nodes_after: usize,
    /// Keyed by the original operator kind of each removed layout operator.
    pub eliminated_by_kind: BTreeMap<String, usize>,
    pub fused_pairs: usize,
    /// Layout operators kept because they write a graph output.
    pub materialized_outputs: usize,
    pub iterations: usize,
    pub residues: Vec<Residue>,
}

impl RewriteStats {
    pub fn eliminated(&self) -> usize {
        self.eliminated_by_kind.values().sum()
    }
}

fn index_err(node: &NodeId) -> impl Fn(IndexError) -> GraphError + '_ {
    move |source| GraphError::Index {
        node: node.clone(),
        source,
    }
}

fn finish(map: IndexMap, reduce: bool) -> IndexMap {
    if reduce {
        map.reduced()
    } else {
        map
    }
}

/// `None` when reading `operand` from `out` through `map` is plain broadcasting.
fn operand_map(map: IndexMap, out: &TensorShape, operand: &TensorShape) -> Option<IndexMap> {
    match broadcast_map(out, operand) {
        Ok(b) if b == map => None,
        _ => Some(map),
    }
}

/// Map of an unannotated Fixed-output node, from its output to its input.
fn fixed_map(g: &ComputeGraph, node: &OperatorNode, reduce: bool) -> Result<Option<IndexMap>, GraphError> {
    if !classify(&node.op).is_fixed() || !node.fusion.is_empty() {
        return Ok(None);
    }
    let in_shape = g.shape(&node.inputs[0])?;
    let map = op_map(&node.op, in_shape, reduce).map_err(index_err(&node.id))?;
    Ok(map.map(|m| finish(m, reduce)))
}

fn origin(op: &Op) -> OpKind {
    match op {
        Op::Relayout { origin, .. } => *origin,
        other => other.kind(),
    }
}

fn origin_kind(op: &Op) -> String {
    origin(op).name().to_string()
}

/// Moves node `p` onto the output edge of its sole consumer `f`.
fn take_over_output(g: &mut ComputeGraph, mut p: OperatorNode, absorbed: &NodeId) {
    let gone = g.nodes.remove(absorbed).expect("absorbed node exists");
    g.edges.remove(&p.output);
    p.output = gone.output.clone();
    g.edges.get_mut(&gone.output).expect("output edge exists").producer = Producer::Node(p.id.clone());
    g.nodes.insert(p.id.clone(), p);
    g.relink();
}

/// Folds Fixed node `f` into the output map of its producer `p`.
fn fold_into_producer(g: &mut ComputeGraph, p_id: &NodeId, f_id: &NodeId, reduce: bool) -> Result<bool, GraphError> {
    let f = &g.nodes[f_id];
    let Some(mf) = fixed_map(g, f, reduce)? else {
        return Ok(false);
    };
    let p = &g.nodes[p_id];
    if classify(&p.op).output != OutputFlexibility::Variable
        || g.consumers(&p.output) != [(f_id.clone(), 0)]
        || g.is_output(&p.output)
    {
        return Ok(false);
    }
    let err = index_err(p_id);
    let old_out = g.shape(&p.output)?.clone();
    let new_out = mf.out_shape().clone();
    let mut p = p.clone();
    let output_map = match &p.fusion.output_map {
        Some(m) => IndexMap::compose(&mf, m).map_err(&err)?,
        None => mf.clone(),
    };
    p.fusion.output_map = Some(finish(output_map, reduce));
    for e in p.fusion.epilogue.clone() {
        let ElemOp::Add(j) = e else { continue };
        let operand = g.shape(&p.inputs[j])?.clone();
        let current = match p.fusion.input_map(j) {
            Some(m) => m.clone(),
            None => broadcast_map(&old_out, &operand).map_err(&err)?,
        };
        let m = finish(IndexMap::compose(&mf, &current).map_err(&err)?, reduce);
        p.fusion.set_input_map(j, operand_map(m, &new_out, &operand));
    }
    take_over_output(g, p, f_id);
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Fold {
    None,
    /// Consumers now read upstream; the node stays for a graph output.
    Partial,
    Removed,
}

/// Folds Fixed node `f` into every consumer of its output.
fn fold_into_consumers(g: &mut ComputeGraph, f_id: &NodeId, reduce: bool) -> Result<Fold, GraphError> {
    let f = g.nodes[f_id].clone();
    let Some(mf) = fixed_map(g, &f, reduce)? else {
        return Ok(Fold::None);
    };
    let consumers = g.consumers(&f.output).to_vec();
    if consumers.is_empty() {
        return Ok(Fold::None);
    }
    let src = f.inputs[0].clone();
    let src_shape = g.shape(&src)?.clone();
    let f_out = mf.out_shape().clone();
    for (c_id, slot) in consumers {
        let c_err = c_id.clone();
        let err = index_err(&c_err);
        let mut c = g.nodes[&c_id].clone();
        if c.fusion.is_empty() && classify(&c.op).is_fixed() {
            let mc = op_map(&c.op, &f_out, reduce).map_err(&err)?.expect("Fixed op has a map");
            let map = finish(IndexMap::compose(&mc, &mf).map_err(&err)?, reduce);
            c.op = Op::Relayout {
                map,
                origin: origin(&c.op),
            };
        } else if slot < c.base_arity() {
            let map = match c.fusion.input_map(slot) {
                Some(m) => IndexMap::compose(m, &mf).map_err(&err)?,
                None => mf.clone(),
            };
            let map = finish(map, reduce);
            let keep = !(map.is_identity() && map.out_shape() == map.in_shape());
            c.fusion.set_input_map(slot, keep.then_some(map));
        } else {
            let c_out = g.shape(&c.output)?.clone();
            let current = match c.fusion.input_map(slot) {
                Some(m) => m.clone(),
                None => broadcast_map(&c_out, &f_out).map_err(&err)?,
            };
            let map = finish(IndexMap::compose(&current, &mf).map_err(&err)?, reduce);
            c.fusion.set_input_map(slot, operand_map(map, &c_out, &src_shape));
        }
        c.inputs[slot] = src.clone();
        g.nodes.insert(c.id.clone(), c);
    }
    let fold = if g.is_output(&f.output) {
        Fold::Partial
    } else {
        g.remove_node(f_id);
        Fold::Removed
    };
    g.relink();
    Ok(fold)
}

/// Checks the simplified legality rule; `Err` carries the blocking reason.
fn fusion_check(g: &ComputeGraph, p_id: &NodeId, c_id: &NodeId) -> Result<usize, ResidueReason> {
    let (Some(p), Some(c)) = (g.node(p_id), g.node(c_id)) else {
        return Err(ResidueReason::NotTryFuse);
    };
    if combination_action(classify(&p.op), classify(&c.op)) != CombinationAction::TryFuse {
        return Err(ResidueReason::NotTryFuse);
    }
    if g.is_output(&p.output) {
        return Err(ResidueReason::FeedsGraphOutput);
    }
    let consumers = g.consumers(&p.output);
    if consumers.len() != 1 || &consumers[0].0 != c_id {
        return Err(ResidueReason::MultiConsumer);
    }
    if !c.op.is_elementwise() {
        return Err(ResidueReason::PrologueFusionUnsupported);
    }
    let slot = consumers[0].1;
    let base = c.base_arity();
    if slot >= base {
        return Err(ResidueReason::EpilogueOperand);
    }
    let views: Vec<TensorShape> = (0..base)
        .map(|i| match c.fusion.input_map(i) {
            Some(m) => Ok(m.out_shape().clone()),
            None => g.shape(&c.inputs[i]).cloned(),
        })
        .collect::<Result<_, _>>()
        .map_err(|_| ResidueReason::BroadcastExpansion)?;
    let result = crate::graph::infer::base_shape(&c.op, &views).map_err(|_| ResidueReason::BroadcastExpansion)?;
    if views[slot] != result {
        return Err(ResidueReason::BroadcastExpansion);
    }
    let downstream = g.descendants(&p.output);
    if c
        .inputs
        .iter()
        .enumerate()
        .any(|(i, e)| i != slot && downstream.contains(e))
    {
        return Err(ResidueReason::WouldCycle);
    }
    Ok(slot)
}

/// True iff `consumer` may be absorbed into the epilogue of `producer`.
pub fn fusion_legal(graph: &ComputeGraph, producer: &NodeId, consumer: &NodeId) -> bool {
    fusion_check(graph, producer, consumer).is_ok()
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FusionError {
    #[error("cannot fuse `{producer}` into `{consumer}`: {reason:?}")]
    Illegal {
        producer: NodeId,
        consumer: NodeId,
        reason: ResidueReason,
    },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn compose_opt(outer: Option<&IndexMap>, inner: Option<&IndexMap>) -> Result<Option<IndexMap>, IndexError> {
    Ok(match (outer, inner) {
        (None, None) => None,
        (Some(m), None) | (None, Some(m)) => Some(m.clone()),
        (Some(o), Some(i)) => Some(IndexMap::compose(o, i)?),
    })
}

fn fuse_in_place(g: &mut ComputeGraph, p_id: &NodeId, c_id: &NodeId, reduce: bool) -> Result<(), FusionError> {
    let slot = fusion_check(g, p_id, c_id).map_err(|reason| FusionError::Illegal {
        producer: p_id.clone(),
        consumer: c_id.clone(),
        reason,
    })?;
    let mut p = g.nodes[p_id].clone();
    let c = g.nodes[c_id].clone();
    let outcome = combination_outcome(classify(&p.op), classify(&c.op));
    debug_assert_eq!(outcome.result_class, Some(classify(&p.op)));
    let err = index_err(c_id);
    let p_out = g.shape(&p.output)?.clone();
    let c_out = g.shape(&c.output)?.clone();
    let view_s = c.fusion.input_map(slot).map_or(p_out.clone(), |m| m.out_shape().clone());
    let c_res = view_s.clone();

    // New output coordinates back to the producer's old output coordinates.
    let to_old = compose_opt(c.fusion.output_map.as_ref(), c.fusion.input_map(slot))
        .map_err(&err)?
        .map(|m| finish(m, reduce));
    if let Some(t) = &to_old {
        let out_map = match &p.fusion.output_map {
            Some(m) => IndexMap::compose(t, m).map_err(&err)?,
            None => t.clone(),
        };
        p.fusion.output_map = Some(finish(out_map, reduce));
        for e in p.fusion.epilogue.clone() {
            let ElemOp::Add(j) = e else { continue };
            let operand = g.shape(&p.inputs[j])?.clone();
            let current = match p.fusion.input_map(j) {
                Some(m) => m.clone(),
                None => broadcast_map(&p_out, &operand).map_err(&err)?,
            };
            let m = finish(IndexMap::compose(t, &current).map_err(&err)?, reduce);
            p.fusion.set_input_map(j, operand_map(m, &c_out, &operand));
        }
    }

    let mut renumber = BTreeMap::new();
    for (i, e) in c.inputs.iter().enumerate() {
        if i != slot {
            renumber.insert(i, p.inputs.len());
            p.inputs.push(e.clone());
        }
    }
    match &c.op {
        Op::Unary { func } => p.fusion.epilogue.push(ElemOp::Unary(*func)),
        Op::Add => {
            let other = 1 - slot;
            let j = renumber[&other];
            let stored = g.shape(&c.inputs[other])?.clone();
            let view = c.fusion.input_map(other).map_or(stored.clone(), |m| m.out_shape().clone());
            let bcast = broadcast_map(&c_res, &view).map_err(&err)?;
            let chain = compose_opt(Some(&bcast), c.fusion.input_map(other)).map_err(&err)?;
            let full = compose_opt(c.fusion.output_map.as_ref(), chain.as_ref())
                .map_err(&err)?
                .expect("chain is present");
            p.fusion
                .set_input_map(j, operand_map(finish(full, reduce), &c_out, &stored));
            p.fusion.epilogue.push(ElemOp::Add(j));
        }
        other => unreachable!("fusion_check admits only elementwise consumers, got {}", other.kind()),
    }
    for e in &c.fusion.epilogue {
        match e {
            ElemOp::Unary(f) => p.fusion.epilogue.push(ElemOp::Unary(*f)),
            ElemOp::Add(i) => {
                let j = renumber[i];
                p.fusion.set_input_map(j, c.fusion.input_map(*i).cloned());
                p.fusion.epilogue.push(ElemOp::Add(j));
            }
        }
    }
    take_over_output(g, p, c_id);
    Ok(())
}

/// Absorbs elementwise `consumer` into `producer`; the fused node keeps
/// the producer's id and takes over the consumer's output edge.
pub fn apply_fusion(graph: &ComputeGraph, producer: &NodeId, consumer: &NodeId) -> Result<ComputeGraph, FusionError> {
    let mut g = infer_shapes(graph)?;
    fuse_in_place(&mut g, producer, consumer, true)?;
    Ok(g)
}

/// Applies one rewrite on a pair headed by `nid`, if any applies.
fn rewrite_at(g: &mut ComputeGraph, nid: &NodeId, opts: &ElimOptions, stats: &mut RewriteStats) -> Result<bool, GraphError> {
    let reduce = opts.strength_reduce;
    let node = &g.nodes[nid];
    let first = classify(&node.op);
    for (c_id, _) in g.consumers(&node.output).to_vec() {
        let second = classify(&g.nodes[&c_id].op);
        match combination_action(first, second) {
            CombinationAction::EliminateSecond => {
                let kind = origin_kind(&g.nodes[&c_id].op);
                if fold_into_producer(g, nid, &c_id, reduce)? {
                    *stats.eliminated_by_kind.entry(kind).or_default() += 1;
                    return Ok(true);
                }
                match fold_into_consumers(g, &c_id, reduce)? {
                    Fold::Removed => {
                        *stats.eliminated_by_kind.entry(kind).or_default() += 1;
                        return Ok(true);
                    }
                    Fold::Partial => return Ok(true),
                    Fold::None => {}
                }
            }
            CombinationAction::EliminateFirst | CombinationAction::EliminateBoth => {
                let kind = origin_kind(&g.nodes[nid].op);
                match fold_into_consumers(g, nid, reduce)? {
                    Fold::Removed => {
                        *stats.eliminated_by_kind.entry(kind).or_default() += 1;
                        return Ok(true);
                    }
                    Fold::Partial => return Ok(true),
                    Fold::None => {}
                }
            }
            CombinationAction::TryFuse if opts.fuse && fusion_legal(g, nid, &c_id) => {
                fuse_in_place(g, nid, &c_id, reduce).map_err(|e| match e {
                    FusionError::Graph(e) => e,
                    FusionError::Illegal { .. } => unreachable!("legality checked"),
                })?;
                stats.fused_pairs += 1;
                return Ok(true);
            }
            _ => {}
        }
    }
    Ok(false)
}

fn residues(g: &ComputeGraph, opts: &ElimOptions) -> Vec<Residue> {
    let mut out = Vec::new();
    for p in g.nodes.values() {
        let first = classify(&p.op);
        for (c_id, _) in g.consumers(&p.output) {
            let c = &g.nodes[c_id];
            let action = combination_action(first, classify(&c.op));
            let reason = match action {
                CombinationAction::KeepBoth => continue,
                CombinationAction::TryFuse if !opts.fuse => ResidueReason::FusionDisabled,
                CombinationAction::TryFuse => match fusion_check(g, &p.id, c_id) {
                    Err(r) => r,
                    Ok(_) => continue,
                },
                _ => {
                    let fixed = [p, c].into_iter().filter(|n| classify(&n.op).is_fixed());
                    if fixed.clone().any(|n| !n.fusion.is_empty()) {
                        ResidueReason::AnnotatedFixed
                    } else if fixed.clone().any(|n| g.is_output(&n.output)) {
                        ResidueReason::FeedsGraphOutput
                    } else {
                        ResidueReason::MultiConsumer
                    }
                }
            };
            out.push(Residue {
                producer: p.id.clone(),
                consumer: Some(c_id.clone()),
                action: Some(action),
                reason,
            });
        }
        if first.is_fixed() && g.consumers(&p.output).is_empty() && g.is_output(&p.output) {
            out.push(Residue {
                producer: p.id.clone(),
                consumer: None,
                action: None,
                reason: ResidueReason::FeedsGraphOutput,
            });
        }
    }
    out
}

/// Runs elimination and fusion to a fixpoint.
///
/// Each iteration sweeps the nodes in topological order and rewrites at a
/// node until none of its pairs changes any more.
pub fn eliminate_layout_ops(graph: &ComputeGraph, opts: &ElimOptions) -> Result<(ComputeGraph, RewriteStats), GraphError> {
    let mut g = infer_shapes(graph)?;
    let mut stats = RewriteStats {
        nodes_before: g.node_count(),
        ..Default::default()
    };
    loop {
        let mut changed = false;
        for nid in g.topo_order()? {
            while g.nodes.contains_key(&nid) && rewrite_at(&mut g, &nid, opts, &mut stats)? {
                changed = true;
            }
        }
        if !changed {
            break;
        }
        stats.iterations += 1;
    }
    let g = infer_shapes(&g)?;
    stats.nodes_after = g.node_count();
    stats.residues = residues(&g, opts);
    stats.materialized_outputs = g
        .nodes
        .values()
        .filter(|n| n.op.is_layout_op() && g.is_output(&n.output))
        .count();
    Ok((g, stats))
}
