//! Reference interpreter and equivalence checking.

pub mod kernels;
mod tensor;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use tensor::DenseTensor;

use crate::graph::{infer_shapes, ComputeGraph, ElemOp, GraphError, Op, OperatorNode};
use crate::shape::TensorShape;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum InterpError {
    #[error("missing value for input `{0}`")]
    MissingInput(String),
    #[error("input `{name}` has shape {found}, graph declares {expected}")]
    InputShape {
        name: String,
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("signature mismatch: {0}")]
    Signature(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn run_base(node: &OperatorNode, ins: &[DenseTensor], out_shape: &TensorShape) -> DenseTensor {
    match &node.op {
        Op::Conv2D { stride, pad } => kernels::conv2d(&ins[0], &ins[1], ins.get(2), *stride, *pad),
        Op::MatMul => kernels::matmul(&ins[0], &ins[1], out_shape),
        Op::LayerNorm { axes } => kernels::layer_norm(&ins[0], axes, ins.get(1), ins.get(2)),
        Op::Softmax { axis } => kernels::softmax(&ins[0], *axis),
        Op::Reduce { axes, func, .. } => kernels::reduce(&ins[0], axes, *func, out_shape),
        Op::Reshape { .. } => ins[0].reshaped(out_shape.clone()),
        Op::Transpose { perm } => kernels::transpose(&ins[0], perm),
        Op::DepthToSpace { block } => kernels::depth_to_space(&ins[0], *block),
        Op::SpaceToDepth { block } => kernels::space_to_depth(&ins[0], *block),
        Op::Gather { axis, indices } => kernels::gather(&ins[0], *axis, indices),
        Op::Slice {
            axis,
            start,
            end,
            step,
        } => kernels::slice(&ins[0], *axis, *start, *end, *step),
        Op::Unary { func } => kernels::unary(&ins[0], *func),
        Op::Add => kernels::add(&ins[0], &ins[1], out_shape),
        Op::Relayout { map, .. } => ins[0].gather(map),
    }
}

fn run_node(node: &OperatorNode, values: &BTreeMap<String, DenseTensor>) -> Result<DenseTensor, InterpError> {
    let base = node.base_arity();
    let mut views = Vec::with_capacity(base);
    for (slot, e) in node.inputs[..base].iter().enumerate() {
        let stored = &values[&e.0];
        views.push(match node.fusion.input_map(slot) {
            Some(m) => stored.gather(m),
            None => stored.clone(),
        });
    }
    let view_shapes: Vec<TensorShape> = views.iter().map(|v| v.shape().clone()).collect();
    let result_shape = crate::graph::infer::base_shape(&node.op, &view_shapes).map_err(|msg| GraphError::Shape {
        node: node.id.clone(),
        msg,
    })?;
    let result = run_base(node, &views, &result_shape);
    let mut out = match &node.fusion.output_map {
        Some(m) => result.gather(m),
        None => result,
    };
    for e in &node.fusion.epilogue {
        match e {
            ElemOp::Unary(f) => {
                for v in out.data_mut() {
                    *v = f.apply(*v);
                }
            }
            ElemOp::Add(j) => {
                let stored = &values[&node.inputs[*j].0];
                let operand = match node.fusion.input_map(*j) {
                    Some(m) => stored.gather(m),
                    None => stored.broadcast_to(out.shape()),
                };
                for (v, x) in out.data_mut().iter_mut().zip(operand.data()) {
                    *v += x;
                }
            }
        }
    }
    Ok(out)
}

/// Runs `graph` on named inputs and returns every graph output by name.
pub fn execute(
    graph: &ComputeGraph,
    inputs: &BTreeMap<String, DenseTensor>,
) -> Result<BTreeMap<String, DenseTensor>, InterpError> {
    let g = infer_shapes(graph)?;
    let mut values: BTreeMap<String, DenseTensor> = BTreeMap::new();
    for id in &g.inputs {
        let t = inputs.get(&id.0).ok_or_else(|| InterpError::MissingInput(id.0.clone()))?;
        let expected = g.shape(id)?;
        if t.shape() != expected {
            return Err(InterpError::InputShape {
                name: id.0.clone(),
                expected: expected.clone(),
                found: t.shape().clone(),
            });
        }
        values.insert(id.0.clone(), t.clone());
    }
    for nid in g.topo_order()? {
        let node = &g.nodes[&nid];
        let out = run_node(node, &values)?;
        values.insert(node.output.0.clone(), out);
    }
    Ok(g.outputs.iter().map(|o| (o.0.clone(), values[&o.0].clone())).collect())
}

/// Seeded uniform `[-1, 1]` values for every graph input, in input order.
pub fn random_inputs(graph: &ComputeGraph, seed: u64) -> Result<BTreeMap<String, DenseTensor>, InterpError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = BTreeMap::new();
    for id in &graph.inputs {
        let shape = graph.shape(id)?.clone();
        out.insert(id.0.clone(), DenseTensor::random(shape, &mut rng));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OutputDiff {
    pub name: String,
    pub max_abs_diff: f64,
    pub max_rel_diff: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EquivalenceReport {
    pub pass: bool,
    pub trials: usize,
    /// Tolerance actually applied; zero for graphs that only move data.
    pub tolerance: f64,
    pub seeds: Vec<u64>,
    pub outputs: Vec<OutputDiff>,
}

/// True when every node only rearranges data.
pub fn is_movement_only(graph: &ComputeGraph) -> bool {
    graph.nodes.values().all(|n| n.op.is_layout_op() && n.fusion.epilogue.is_empty())
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b || (a.is_nan() && b.is_nan()) {
        return 0.0;
    }
    let d = (a - b).abs();
    if d.is_nan() {
        return f64::INFINITY;
    }
    d / a.abs().max(b.abs())
}

/// Compares two graphs on `trials` random input sets (seed `seed + t`).
pub fn equivalence_check(
    g1: &ComputeGraph,
    g2: &ComputeGraph,
    trials: usize,
    tol: f64,
    seed: u64,
) -> Result<EquivalenceReport, InterpError> {
    let a = infer_shapes(g1)?;
    let b = infer_shapes(g2)?;
    let sig = |g: &ComputeGraph, ids: &[crate::graph::EdgeId]| -> Result<Vec<(String, TensorShape)>, InterpError> {
        ids.iter().map(|e| Ok((e.0.clone(), g.shape(e)?.clone()))).collect()
    };
    if sig(&a, &a.inputs)? != sig(&b, &b.inputs)? {
        return Err(InterpError::Signature("graph inputs differ".into()));
    }
    if sig(&a, &a.outputs)? != sig(&b, &b.outputs)? {
        return Err(InterpError::Signature("graph outputs differ".into()));
    }
    let tolerance = if is_movement_only(&a) { 0.0 } else { tol };
    let mut diffs: Vec<OutputDiff> = a
        .outputs
        .iter()
        .map(|o| OutputDiff {
            name: o.0.clone(),
            max_abs_diff: 0.0,
            max_rel_diff: 0.0,
        })
        .collect();
    let seeds: Vec<u64> = (0..trials as u64).map(|t| seed.wrapping_add(t)).collect();
    for &s in &seeds {
        let inputs = random_inputs(&a, s)?;
        let ra = execute(&a, &inputs)?;
        let rb = execute(&b, &inputs)?;
        for d in &mut diffs {
            let (x, y) = (&ra[&d.name], &rb[&d.name]);
            for (&p, &q) in x.data().iter().zip(y.data()) {
                let abs = if p == q { 0.0 } else { (p - q).abs() };
                d.max_abs_diff = d.max_abs_diff.max(if abs.is_nan() { f64::INFINITY } else { abs });
                d.max_rel_diff = d.max_rel_diff.max(rel_diff(p, q));
            }
        }
    }
    let pass = diffs.iter().all(|d| d.max_rel_diff <= tolerance);
    Ok(EquivalenceReport {
        pass,
        trials,
        tolerance,
        seeds,
        outputs: diffs,
    })
}
