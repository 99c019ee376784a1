use super::{ComputeGraph, ElemOp, GraphError, Op, OperatorNode};
use crate::index::{self, IndexMap};
use crate::shape::TensorShape;

fn check_axes(axes: &[usize], rank: usize) -> Result<(), String> {
    match axes.iter().find(|&&a| a >= rank) {
        Some(a) => Err(format!("axis {a} out of range for rank {rank}")),
        None => Ok(()),
    }
}

fn idx_err(e: index::IndexError) -> String {
    e.to_string()
}

/// Index map of a layout operator applied to `in_shape`.
///
/// With `reduce` off, Reshape uses the plain relinearization.
pub fn op_map(op: &Op, in_shape: &TensorShape, reduce: bool) -> Result<Option<IndexMap>, index::IndexError> {
    let map = match op {
        Op::Reshape { shape } => {
            let target = TensorShape::new(shape.clone())?;
            if reduce {
                index::map_of_reshape(in_shape, &target)?
            } else {
                index::relinearize(in_shape, &target)?
            }
        }
        Op::Transpose { perm } => index::map_of_transpose(perm, in_shape)?,
        Op::DepthToSpace { block } => index::map_of_depth_to_space(in_shape, *block)?,
        Op::SpaceToDepth { block } => index::map_of_space_to_depth(in_shape, *block)?,
        Op::Gather { axis, indices } => index::map_of_gather(in_shape, *axis, indices)?,
        Op::Slice {
            axis,
            start,
            end,
            step,
        } => index::map_of_slice(in_shape, *axis, *start, *end, *step)?,
        Op::Relayout { map, .. } => {
            if map.in_shape() != in_shape {
                return Err(index::IndexError::ShapeMismatch {
                    expected: map.in_shape().clone(),
                    found: in_shape.clone(),
                });
            }
            map.clone()
        }
        _ => return Ok(None),
    };
    Ok(Some(map))
}

fn broadcast_all(shapes: &[&TensorShape]) -> Result<TensorShape, String> {
    let mut acc = shapes[0].clone();
    for s in &shapes[1..] {
        acc = acc
            .broadcast(s)
            .ok_or_else(|| format!("{acc} and {s} do not broadcast"))?;
    }
    Ok(acc)
}

/// Result shape of the base operator given the shapes it reads.
pub fn base_shape(op: &Op, ins: &[TensorShape]) -> Result<TensorShape, String> {
    let x = &ins[0];
    match op {
        Op::Conv2D { stride, pad } => {
            let (xd, wd) = (x.dims(), ins[1].dims());
            if xd.len() != 4 || wd.len() != 4 {
                return Err(format!("Conv2D needs rank-4 operands, got {x} and {}", ins[1]));
            }
            if xd[1] != wd[1] {
                return Err(format!("input channels {} vs weight {}", xd[1], wd[1]));
            }
            if let Some(b) = ins.get(2) {
                if b.dims() != [wd[0]] {
                    return Err(format!("bias {b} does not match {} output channels", wd[0]));
                }
            }
            let spatial = |extent: usize, k: usize| {
                let padded = extent + 2 * pad;
                if padded < k {
                    Err(format!("kernel {k} larger than padded extent {padded}"))
                } else {
                    Ok((padded - k) / stride + 1)
                }
            };
            let oh = spatial(xd[2], wd[2])?;
            let ow = spatial(xd[3], wd[3])?;
            TensorShape::new(vec![xd[0], wd[0], oh, ow]).map_err(|e| e.to_string())
        }
        Op::MatMul => {
            let (a, b) = (x.dims(), ins[1].dims());
            if a.len() < 2 || b.len() < 2 {
                return Err("MatMul operands need rank >= 2".into());
            }
            let (m, k) = (a[a.len() - 2], a[a.len() - 1]);
            let (k2, n) = (b[b.len() - 2], b[b.len() - 1]);
            if k != k2 {
                return Err(format!("inner dims differ: {x} x {}", ins[1]));
            }
            let batch_a = &a[..a.len() - 2];
            let batch_b = &b[..b.len() - 2];
            let mut dims = match (batch_a.is_empty(), batch_b.is_empty()) {
                (true, true) => Vec::new(),
                (false, true) => batch_a.to_vec(),
                (true, false) => batch_b.to_vec(),
                (false, false) => TensorShape::from_slice(batch_a)
                    .broadcast(&TensorShape::from_slice(batch_b))
                    .ok_or_else(|| format!("batch dims of {x} and {} do not broadcast", ins[1]))?
                    .dims()
                    .to_vec(),
            };
            dims.extend([m, n]);
            TensorShape::new(dims).map_err(|e| e.to_string())
        }
        Op::LayerNorm { axes } => {
            check_axes(axes, x.rank())?;
            for p in &ins[1..] {
                if x.broadcast(p).as_ref() != Some(x) {
                    return Err(format!("affine operand {p} does not broadcast to {x}"));
                }
            }
            Ok(x.clone())
        }
        Op::Softmax { axis } => {
            check_axes(&[*axis], x.rank())?;
            Ok(x.clone())
        }
        Op::Reduce { axes, keepdims, .. } => {
            check_axes(axes, x.rank())?;
            let mut dims = Vec::new();
            for (i, &d) in x.dims().iter().enumerate() {
                if axes.contains(&i) {
                    if *keepdims {
                        dims.push(1);
                    }
                } else {
                    dims.push(d);
                }
            }
            if dims.is_empty() {
                dims.push(1);
            }
            TensorShape::new(dims).map_err(|e| e.to_string())
        }
        Op::Unary { .. } => Ok(x.clone()),
        Op::Add => broadcast_all(&[x, &ins[1]]),
        _ => Ok(op_map(op, x, false)
            .map_err(idx_err)?
            .expect("layout op has a map")
            .out_shape()
            .clone()),
    }
}

/// Output shape of `node` given the shapes already known in `graph`.
pub fn infer_node_shape(graph: &ComputeGraph, node: &OperatorNode) -> Result<TensorShape, GraphError> {
    let shape_err = |msg: String| GraphError::Shape {
        node: node.id.clone(),
        msg,
    };
    if let Err(msg) = node.op.check_attrs() {
        return Err(GraphError::Attr {
            node: node.id.clone(),
            msg,
        });
    }
    let epi_operands = node.fusion.epilogue_operands();
    if epi_operands > node.inputs.len() || node.fusion.input_maps.len() > node.inputs.len() {
        return Err(shape_err("fusion refers to missing inputs".into()));
    }
    let base = node.base_arity();
    if !node.op.arity().contains(&base) {
        return Err(GraphError::Arity {
            node: node.id.clone(),
            kind: node.kind(),
            expected: node.op.arity().to_vec(),
            found: base,
        });
    }
    let mut views = Vec::with_capacity(base);
    for (slot, input) in node.inputs[..base].iter().enumerate() {
        let stored = graph.shape(input)?;
        match node.fusion.input_map(slot) {
            Some(m) => {
                if m.in_shape() != stored {
                    return Err(shape_err(format!(
                        "input map {slot} reads {} but edge `{input}` is {stored}",
                        m.in_shape()
                    )));
                }
                views.push(m.out_shape().clone());
            }
            None => views.push(stored.clone()),
        }
    }
    let result = base_shape(&node.op, &views).map_err(shape_err)?;
    let out = match &node.fusion.output_map {
        Some(m) => {
            if m.in_shape() != &result {
                return Err(shape_err(format!(
                    "output map reads {} but the operator produces {result}",
                    m.in_shape()
                )));
            }
            m.out_shape().clone()
        }
        None => result,
    };
    for e in &node.fusion.epilogue {
        let ElemOp::Add(j) = e else { continue };
        if *j < base || *j >= node.inputs.len() {
            return Err(shape_err(format!("epilogue operand {j} is not an epilogue input")));
        }
        let stored = graph.shape(&node.inputs[*j])?;
        match node.fusion.input_map(*j) {
            Some(m) => {
                if m.in_shape() != stored || m.out_shape() != &out {
                    return Err(shape_err(format!("epilogue map {j} does not connect {out} to {stored}")));
                }
            }
            None => {
                if out.broadcast(stored).as_ref() != Some(&out) {
                    return Err(shape_err(format!("epilogue operand {stored} does not broadcast to {out}")));
                }
            }
        }
    }
    Ok(out)
}

/// Fills in every edge shape from the graph input shapes.
///
/// Shapes already present on intermediate edges must agree with the
/// inferred ones.
pub fn infer_shapes(graph: &ComputeGraph) -> Result<ComputeGraph, GraphError> {
    graph.check_refs()?;
    let mut g = graph.clone();
    for id in graph.topo_order()? {
        let node = &graph.nodes[&id];
        let shape = infer_node_shape(&g, node)?;
        let edge = g.edges.get_mut(&node.output).expect("output edge exists");
        if let Some(existing) = &edge.shape {
            if *existing != shape {
                return Err(GraphError::Shape {
                    node: id.clone(),
                    msg: format!("annotated {existing}, inferred {shape}"),
                });
            }
        }
        edge.shape = Some(shape);
    }
    Ok(g)
}
