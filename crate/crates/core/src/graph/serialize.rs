use std::fmt::Write;

use serde_json::{json, Value};

use super::{ComputeGraph, NodeId, Op, OperatorNode};
use crate::layout::LayoutChoice;

fn list(xs: &[usize]) -> String {
    let items: Vec<String> = xs.iter().map(|x| x.to_string()).collect();
    format!("[{}]", items.join(","))
}

fn op_attrs(op: &Op) -> Vec<(String, String)> {
    let kv = |k: &str, v: String| (k.to_string(), v);
    match op {
        Op::Conv2D { stride, pad } => vec![kv("stride", stride.to_string()), kv("pad", pad.to_string())],
        Op::MatMul | Op::Add => vec![],
        Op::LayerNorm { axes } => vec![kv("axes", list(axes))],
        Op::Softmax { axis } => vec![kv("axis", axis.to_string())],
        Op::Reduce { axes, func, keepdims } => vec![
            kv("axes", list(axes)),
            kv("func", func.name().to_string()),
            kv("keepdims", keepdims.to_string()),
        ],
        Op::Reshape { shape } => vec![kv("shape", list(shape))],
        Op::Transpose { perm } => vec![kv("perm", list(perm))],
        Op::DepthToSpace { block } | Op::SpaceToDepth { block } => vec![kv("block", block.to_string())],
        Op::Gather { axis, indices } => vec![kv("axis", axis.to_string()), kv("indices", list(indices))],
        Op::Slice { axis, start, end, step } => vec![
            kv("axis", axis.to_string()),
            kv("start", start.to_string()),
            kv("end", end.to_string()),
            kv("step", step.to_string()),
        ],
        Op::Unary { func } => vec![kv("fn", func.name().to_string())],
        Op::Relayout { map, origin } => vec![kv("map", map.to_literal()), kv("origin", origin.to_string())],
    }
}

fn node_attrs(node: &OperatorNode) -> Vec<(String, String)> {
    let mut attrs = op_attrs(&node.op);
    for (slot, m) in node.fusion.input_maps.iter().enumerate() {
        if let Some(m) = m {
            attrs.push((format!("in{slot}"), m.to_literal()));
        }
    }
    if !node.fusion.epilogue.is_empty() {
        let items: Vec<String> = node.fusion.epilogue.iter().map(|e| e.to_string()).collect();
        attrs.push(("epi".into(), format!("[{}]", items.join(", "))));
    }
    if let Some(m) = &node.fusion.output_map {
        attrs.push(("out".into(), m.to_literal()));
    }
    attrs
}

pub(crate) fn layout_literal(l: &LayoutChoice) -> String {
    let mut s = format!("L(order={}", list(&l.dim_order));
    if let Some(b) = l.blocked {
        write!(s, ", block={b}").unwrap();
    }
    write!(s, ", serves={}", list(&l.serves)).unwrap();
    if !l.copies.is_empty() {
        let copies: Vec<String> = l.copies.iter().map(layout_literal).collect();
        write!(s, ", copies=[{}]", copies.join(", ")).unwrap();
    }
    s.push(')');
    s
}

/// Nodes in topological order, or by id when the graph has a cycle.
fn node_order(g: &ComputeGraph) -> Vec<NodeId> {
    g.topo_order().unwrap_or_else(|_| g.nodes.keys().cloned().collect())
}

/// Canonical IR text: inputs, nodes in topological order, outputs.
pub fn to_ir(g: &ComputeGraph) -> String {
    let mut s = String::new();
    for id in &g.inputs {
        let e = &g.edges[id];
        write!(s, "input {id} ").unwrap();
        match &e.shape {
            Some(shape) => write!(s, "{shape}").unwrap(),
            None => s.push_str("[]"),
        }
        if let Some(l) = &e.layout {
            write!(s, " | {}", layout_literal(l)).unwrap();
        }
        s.push('\n');
    }
    for nid in node_order(g) {
        let node = &g.nodes[&nid];
        let inputs: Vec<&str> = node.inputs.iter().map(|e| e.0.as_str()).collect();
        write!(s, "{} = {}({}", node.output, node.kind(), inputs.join(", ")).unwrap();
        let attrs = node_attrs(node);
        if !attrs.is_empty() {
            let items: Vec<String> = attrs.iter().map(|(k, v)| format!("{k}={v}")).collect();
            write!(s, "; {}", items.join(", ")).unwrap();
        }
        s.push(')');
        if node.id.0 != node.output.0 {
            write!(s, " @{}", node.id).unwrap();
        }
        if let Some(e) = g.edges.get(&node.output) {
            if let Some(shape) = &e.shape {
                write!(s, " : {shape}").unwrap();
            }
            if let Some(l) = &e.layout {
                write!(s, " | {}", layout_literal(l)).unwrap();
            }
        }
        s.push('\n');
    }
    for out in &g.outputs {
        writeln!(s, "output {out}").unwrap();
    }
    s
}

/// JSON export with the same content as [`to_ir`]; object keys are sorted.
pub fn to_json(g: &ComputeGraph) -> Value {
    let edge_json = |id: &super::EdgeId| {
        let e = &g.edges[id];
        json!({
            "name": id.0,
            "shape": e.shape.as_ref().map(|s| s.dims().to_vec()),
            "layout": e.layout.as_ref().map(|l| serde_json::to_value(l).expect("layout serializes")),
        })
    };
    let nodes: Vec<Value> = node_order(g)
        .iter()
        .map(|id| {
            let n = &g.nodes[id];
            let attrs: serde_json::Map<String, Value> =
                node_attrs(n).into_iter().map(|(k, v)| (k, Value::String(v))).collect();
            json!({
                "id": n.id.0,
                "kind": n.kind().name(),
                "inputs": n.inputs.iter().map(|e| e.0.clone()).collect::<Vec<_>>(),
                "output": edge_json(&n.output),
                "attrs": attrs,
            })
        })
        .collect();
    json!({
        "inputs": g.inputs.iter().map(edge_json).collect::<Vec<_>>(),
        "nodes": nodes,
        "outputs": g.outputs.iter().map(|e| e.0.clone()).collect::<Vec<_>>(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{infer_shapes, parse_graph};

    #[test]
    fn canonical_text_round_trips() {
        let src = "input x [2,3]\ninput w [3,4]\n\
                   m = MatMul(x, w)\n\
                   t = Transpose(m; perm=[1,0])\n\
                   r = Reshape(t; shape=[8])\n\
                   output r\n";
        let g = infer_shapes(&parse_graph(src).unwrap()).unwrap();
        let text = to_ir(&g);
        assert_eq!(
            text,
            "input x [2,3]\ninput w [3,4]\n\
             m = MatMul(x, w) : [2,4]\n\
             t = Transpose(m; perm=[1,0]) : [4,2]\n\
             r = Reshape(t; shape=[8]) : [8]\n\
             output r\n"
        );
        let back = parse_graph(&text).unwrap();
        assert_eq!(back, g);
        assert_eq!(to_ir(&back), text);
    }

    #[test]
    fn json_export_is_stable() {
        let g = parse_graph("input x [2,3]; y = Transpose(x, perm=[1,0])").unwrap();
        let a = serde_json::to_string(&to_json(&g)).unwrap();
        let b = serde_json::to_string(&to_json(&g.clone())).unwrap();
        assert_eq!(a, b);
        assert!(a.contains("\"kind\":\"Transpose\""));
    }
}
