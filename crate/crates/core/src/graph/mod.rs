//! Computational graph model, text IR, shape inference and validation.

pub(crate) mod infer;
mod op;
mod parse;
mod serialize;
mod validate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

pub use infer::{infer_node_shape, infer_shapes, op_map};
pub use op::{ElemOp, Fusion, Op, OpKind, ReduceFn, UnaryFn};
pub use parse::parse_graph;
pub use serialize::{to_ir, to_json};
pub(crate) use serialize::layout_literal;
pub use validate::{validate, Finding, ValidationReport};

use crate::index::IndexError;
use crate::layout::LayoutChoice;
use crate::shape::TensorShape;

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct NodeId(pub String);

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(transparent)]
pub struct EdgeId(pub String);

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl fmt::Display for EdgeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_string())
    }
}

impl From<&str> for EdgeId {
    fn from(s: &str) -> Self {
        EdgeId(s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("node `{node}` reads undefined edge `{edge}`")]
    DanglingEdge { node: NodeId, edge: EdgeId },
    #[error("output `{0}` is not a defined edge")]
    UnknownOutput(EdgeId),
    #[error("cycle through nodes {0:?}")]
    Cycle(Vec<NodeId>),
    #[error("node `{node}`: {msg}")]
    Attr { node: NodeId, msg: String },
    #[error("node `{node}`: {kind} takes {expected:?} inputs, got {found}")]
    Arity {
        node: NodeId,
        kind: OpKind,
        expected: Vec<usize>,
        found: usize,
    },
    #[error("node `{node}`: shape mismatch: {msg}")]
    Shape { node: NodeId, msg: String },
    #[error("edge `{0}` has no shape")]
    MissingShape(EdgeId),
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("node `{node}`: {source}")]
    Index {
        node: NodeId,
        #[source]
        source: IndexError,
    },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Producer {
    Input,
    Node(NodeId),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TensorEdge {
    pub id: EdgeId,
    pub producer: Producer,
    /// (consumer node, input slot), kept sorted by [`ComputeGraph::relink`].
    pub consumers: Vec<(NodeId, usize)>,
    pub shape: Option<TensorShape>,
    pub layout: Option<LayoutChoice>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OperatorNode {
    pub id: NodeId,
    pub op: Op,
    pub inputs: Vec<EdgeId>,
    pub output: EdgeId,
    pub fusion: Fusion,
}

impl OperatorNode {
    /// Number of inputs read by the base operator; the rest feed the epilogue.
    pub fn base_arity(&self) -> usize {
        self.inputs.len() - self.fusion.epilogue_operands()
    }

    pub fn kind(&self) -> OpKind {
        self.op.kind()
    }
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ComputeGraph {
    pub nodes: BTreeMap<NodeId, OperatorNode>,
    pub edges: BTreeMap<EdgeId, TensorEdge>,
    pub inputs: Vec<EdgeId>,
    pub outputs: Vec<EdgeId>,
}

impl ComputeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_input(&mut self, name: &str, shape: TensorShape) -> Result<EdgeId, GraphError> {
        let id = EdgeId(name.to_string());
        if self.edges.contains_key(&id) {
            return Err(GraphError::DuplicateId(name.to_string()));
        }
        self.edges.insert(
            id.clone(),
            TensorEdge {
                id: id.clone(),
                producer: Producer::Input,
                consumers: Vec::new(),
                shape: Some(shape),
                layout: None,
            },
        );
        self.inputs.push(id.clone());
        Ok(id)
    }

    /// Adds a node and its output edge. Input edges may be defined later;
    /// call [`ComputeGraph::relink`] once the graph is complete.
    pub fn add_node(
        &mut self,
        id: &str,
        op: Op,
        inputs: &[&str],
        output: &str,
    ) -> Result<NodeId, GraphError> {
        let node = OperatorNode {
            id: NodeId(id.to_string()),
            op,
            inputs: inputs.iter().map(|&s| EdgeId(s.to_string())).collect(),
            output: EdgeId(output.to_string()),
            fusion: Fusion::default(),
        };
        self.insert_node(node)
    }

    pub fn insert_node(&mut self, node: OperatorNode) -> Result<NodeId, GraphError> {
        if self.nodes.contains_key(&node.id) {
            return Err(GraphError::DuplicateId(node.id.0.clone()));
        }
        if self.edges.contains_key(&node.output) {
            return Err(GraphError::DuplicateId(node.output.0.clone()));
        }
        self.edges.insert(
            node.output.clone(),
            TensorEdge {
                id: node.output.clone(),
                producer: Producer::Node(node.id.clone()),
                consumers: Vec::new(),
                shape: None,
                layout: None,
            },
        );
        let id = node.id.clone();
        self.nodes.insert(id.clone(), node);
        Ok(id)
    }

    pub fn add_output(&mut self, edge: &str) {
        self.outputs.push(EdgeId(edge.to_string()));
    }

    /// Recomputes every edge's consumer list from the node inputs.
    pub fn relink(&mut self) {
        for e in self.edges.values_mut() {
            e.consumers.clear();
        }
        for node in self.nodes.values() {
            for (slot, input) in node.inputs.iter().enumerate() {
                if let Some(e) = self.edges.get_mut(input) {
                    e.consumers.push((node.id.clone(), slot));
                }
            }
        }
        for e in self.edges.values_mut() {
            e.consumers.sort();
        }
    }

    /// Fails on the first node input or graph output naming no edge.
    pub fn check_refs(&self) -> Result<(), GraphError> {
        for node in self.nodes.values() {
            for input in &node.inputs {
                if !self.edges.contains_key(input) {
                    return Err(GraphError::DanglingEdge {
                        node: node.id.clone(),
                        edge: input.clone(),
                    });
                }
            }
        }
        for out in &self.outputs {
            if !self.edges.contains_key(out) {
                return Err(GraphError::UnknownOutput(out.clone()));
            }
        }
        Ok(())
    }

    pub fn node(&self, id: &NodeId) -> Option<&OperatorNode> {
        self.nodes.get(id)
    }

    pub fn edge(&self, id: &EdgeId) -> Option<&TensorEdge> {
        self.edges.get(id)
    }

    pub fn shape(&self, id: &EdgeId) -> Result<&TensorShape, GraphError> {
        self.edges
            .get(id)
            .and_then(|e| e.shape.as_ref())
            .ok_or_else(|| GraphError::MissingShape(id.clone()))
    }

    /// Node producing `edge`, if any.
    pub fn producer(&self, edge: &EdgeId) -> Option<&OperatorNode> {
        match &self.edges.get(edge)?.producer {
            Producer::Node(n) => self.nodes.get(n),
            Producer::Input => None,
        }
    }

    pub fn consumers(&self, edge: &EdgeId) -> &[(NodeId, usize)] {
        self.edges.get(edge).map(|e| e.consumers.as_slice()).unwrap_or(&[])
    }

    pub fn is_output(&self, edge: &EdgeId) -> bool {
        self.outputs.contains(edge)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Kahn's algorithm; among ready nodes the smallest id goes first.
    pub fn topo_order(&self) -> Result<Vec<NodeId>, GraphError> {
        let mut pending: BTreeMap<&NodeId, usize> = BTreeMap::new();
        for node in self.nodes.values() {
            let deps = node
                .inputs
                .iter()
                .filter(|e| self.producer(e).is_some())
                .count();
            pending.insert(&node.id, deps);
        }
        let mut ready: BTreeSet<&NodeId> = pending
            .iter()
            .filter(|(_, &d)| d == 0)
            .map(|(&id, _)| id)
            .collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(id) = ready.pop_first() {
            order.push(id.clone());
            let node = &self.nodes[id];
            for (consumer, _) in self.consumers(&node.output) {
                if let Some(d) = pending.get_mut(consumer) {
                    *d -= 1;
                    if *d == 0 {
                        ready.insert(&self.nodes[consumer].id);
                    }
                }
            }
        }
        if order.len() != self.nodes.len() {
            let done: BTreeSet<&NodeId> = order.iter().collect();
            let stuck = self
                .nodes
                .keys()
                .filter(|id| !done.contains(id))
                .cloned()
                .collect();
            return Err(GraphError::Cycle(stuck));
        }
        Ok(order)
    }

    /// Removes a node and its output edge without touching consumers.
    pub fn remove_node(&mut self, id: &NodeId) -> Option<OperatorNode> {
        let node = self.nodes.remove(id)?;
        self.edges.remove(&node.output);
        Some(node)
    }

    /// Edges reachable downstream from `edge`, including itself.
    pub fn descendants(&self, edge: &EdgeId) -> BTreeSet<EdgeId> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![edge.clone()];
        while let Some(e) = stack.pop() {
            if !seen.insert(e.clone()) {
                continue;
            }
            for (c, _) in self.consumers(&e) {
                if let Some(n) = self.nodes.get(c) {
                    stack.push(n.output.clone());
                }
            }
        }
        seen
    }

    /// Generates an id not yet used by any node or edge.
    pub fn fresh_id(&self, base: &str) -> String {
        let taken = |s: &str| {
            self.nodes.contains_key(&NodeId(s.to_string())) || self.edges.contains_key(&EdgeId(s.to_string()))
        };
        if !taken(base) {
            return base.to_string();
        }
        (1..)
            .map(|i| format!("{base}_{i}"))
            .find(|s| !taken(s))
            .expect("unbounded counter")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> ComputeGraph {
        let mut g = ComputeGraph::new();
        g.add_input("x", TensorShape::from_slice(&[2, 3])).unwrap();
        g.add_node("A", Op::Unary { func: UnaryFn::Relu }, &["x"], "a").unwrap();
        g.add_node("B", Op::Unary { func: UnaryFn::Neg }, &["a"], "b").unwrap();
        g.add_node("C", Op::Unary { func: UnaryFn::Exp }, &["b"], "c").unwrap();
        g.add_output("c");
        g.relink();
        g
    }

    #[test]
    fn linear_chain_order() {
        let ids: Vec<String> = chain().topo_order().unwrap().into_iter().map(|n| n.0).collect();
        assert_eq!(ids, ["A", "B", "C"]);
    }

    #[test]
    fn diamond_order() {
        let mut g = ComputeGraph::new();
        g.add_input("x", TensorShape::from_slice(&[4])).unwrap();
        g.add_node("D", Op::Add, &["b", "c"], "d").unwrap();
        g.add_node("C", Op::Unary { func: UnaryFn::Neg }, &["a"], "c").unwrap();
        g.add_node("B", Op::Unary { func: UnaryFn::Exp }, &["a"], "b").unwrap();
        g.add_node("A", Op::Unary { func: UnaryFn::Relu }, &["x"], "a").unwrap();
        g.add_output("d");
        g.relink();
        let order = g.topo_order().unwrap();
        assert_eq!(order.first().unwrap().0, "A");
        assert_eq!(order.last().unwrap().0, "D");
    }

    #[test]
    fn cycle_is_reported() {
        let mut g = ComputeGraph::new();
        g.add_input("x", TensorShape::from_slice(&[4])).unwrap();
        g.add_node("A", Op::Add, &["x", "b"], "a").unwrap();
        g.add_node("B", Op::Unary { func: UnaryFn::Neg }, &["a"], "b").unwrap();
        g.relink();
        assert!(matches!(g.topo_order(), Err(GraphError::Cycle(v)) if v.len() == 2));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut g = chain();
        assert!(matches!(
            g.add_node("A", Op::Add, &["x", "x"], "z"),
            Err(GraphError::DuplicateId(_))
        ));
        assert!(matches!(
            g.add_input("x", TensorShape::from_slice(&[1])),
            Err(GraphError::DuplicateId(_))
        ));
    }
}
