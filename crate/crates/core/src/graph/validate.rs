use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::{ComputeGraph, EdgeId, GraphError, NodeId, Producer};

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "finding", rename_all = "snake_case")]
pub enum Finding {
    Cycle { nodes: Vec<NodeId> },
    DanglingInput { node: NodeId, edge: EdgeId },
    /// Edge whose producing node is missing from the graph.
    OrphanEdge { edge: EdgeId, producer: NodeId },
    MissingOutput { edge: EdgeId },
    Arity { node: NodeId, expected: Vec<usize>, found: usize },
    Attribute { node: NodeId, message: String },
    Unconsumed { edge: EdgeId },
    Unreachable { node: NodeId },
    OutputMismatch { node: NodeId, edge: EdgeId },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::Cycle { nodes } => {
                let ids: Vec<&str> = nodes.iter().map(|n| n.0.as_str()).collect();
                write!(f, "cycle through {}", ids.join(", "))
            }
            Finding::DanglingInput { node, edge } => write!(f, "node {node} reads undefined edge {edge}"),
            Finding::OrphanEdge { edge, producer } => {
                write!(f, "edge {edge} is orphaned: producer {producer} does not exist")
            }
            Finding::MissingOutput { edge } => write!(f, "graph output {edge} is not defined"),
            Finding::Arity { node, expected, found } => {
                write!(f, "node {node} takes {expected:?} inputs, has {found}")
            }
            Finding::Attribute { node, message } => write!(f, "node {node}: {message}"),
            Finding::Unconsumed { edge } => write!(f, "edge {edge} has no consumer and is not an output"),
            Finding::Unreachable { node } => write!(f, "node {node} is not reachable from any input"),
            Finding::OutputMismatch { node, edge } => {
                write!(f, "node {node} writes {edge}, which names another producer")
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Lists every structural invariant violation of `graph`.
pub fn validate(graph: &ComputeGraph) -> ValidationReport {
    let mut findings = Vec::new();
    for node in graph.nodes.values() {
        for input in &node.inputs {
            if !graph.edges.contains_key(input) {
                findings.push(Finding::DanglingInput {
                    node: node.id.clone(),
                    edge: input.clone(),
                });
            }
        }
        let base = node.inputs.len().saturating_sub(node.fusion.epilogue_operands());
        if !node.op.arity().contains(&base) {
            findings.push(Finding::Arity {
                node: node.id.clone(),
                expected: node.op.arity().to_vec(),
                found: base,
            });
        }
        if let Err(message) = node.op.check_attrs() {
            findings.push(Finding::Attribute {
                node: node.id.clone(),
                message,
            });
        }
        match graph.edges.get(&node.output).map(|e| &e.producer) {
            Some(Producer::Node(p)) if *p == node.id => {}
            _ => findings.push(Finding::OutputMismatch {
                node: node.id.clone(),
                edge: node.output.clone(),
            }),
        }
    }
    for edge in graph.edges.values() {
        if let Producer::Node(p) = &edge.producer {
            if !graph.nodes.contains_key(p) {
                findings.push(Finding::OrphanEdge {
                    edge: edge.id.clone(),
                    producer: p.clone(),
                });
            }
        }
        let consumed = graph
            .nodes
            .values()
            .any(|n| n.inputs.contains(&edge.id));
        if !consumed && !graph.outputs.contains(&edge.id) {
            findings.push(Finding::Unconsumed { edge: edge.id.clone() });
        }
    }
    for out in &graph.outputs {
        if !graph.edges.contains_key(out) {
            findings.push(Finding::MissingOutput { edge: out.clone() });
        }
    }
    let mut relinked = graph.clone();
    relinked.relink();
    let in_cycle: BTreeSet<NodeId> = match relinked.topo_order() {
        Err(GraphError::Cycle(nodes)) => {
            let cyclic = cycle_members(&relinked, &nodes);
            findings.push(Finding::Cycle {
                nodes: cyclic.iter().cloned().collect(),
            });
            nodes.into_iter().collect()
        }
        _ => BTreeSet::new(),
    };
    let mut reached: BTreeSet<NodeId> = BTreeSet::new();
    for input in &graph.inputs {
        for e in relinked.descendants(input) {
            if let Some(Producer::Node(n)) = relinked.edges.get(&e).map(|x| &x.producer) {
                reached.insert(n.clone());
            }
        }
    }
    for id in graph.nodes.keys() {
        if !reached.contains(id) && !in_cycle.contains(id) {
            findings.push(Finding::Unreachable { node: id.clone() });
        }
    }
    ValidationReport { findings }
}

/// Nodes of `stuck` that lie on a cycle (as opposed to merely downstream of one).
fn cycle_members(g: &ComputeGraph, stuck: &[NodeId]) -> BTreeSet<NodeId> {
    stuck
        .iter()
        .filter(|id| {
            let out = &g.nodes[*id].output;
            g.descendants(out)
                .iter()
                .any(|e| g.consumers(e).iter().any(|(c, _)| c == *id))
        })
        .cloned()
        .collect()
}
