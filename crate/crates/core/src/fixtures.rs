//! Bundled example graphs.

use crate::graph::{parse_graph, ComputeGraph, GraphError};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fixture {
    pub name: &'static str,
    pub source: &'static str,
}

impl Fixture {
    /// Node count stated in the `# nodes: N` header line.
    pub fn declared_nodes(&self) -> Option<usize> {
        self.source
            .lines()
            .find_map(|l| l.strip_prefix("# nodes:"))
            .and_then(|n| n.trim().parse().ok())
    }

    pub fn graph(&self) -> Result<ComputeGraph, GraphError> {
        parse_graph(self.source)
    }
}

pub const CONV_LAYERNORM: Fixture = Fixture {
    name: "conv-layernorm",
    source: include_str!("../fixtures/conv_layernorm_chain.ir"),
};

pub const REDUCTION_DIMS: Fixture = Fixture {
    name: "reduction-dims",
    source: include_str!("../fixtures/reduction_dims.ir"),
};

pub const WINDOW_ATTENTION: Fixture = Fixture {
    name: "window-attention",
    source: include_str!("../fixtures/window_attention.ir"),
};

pub const CONV_RESIDUAL: Fixture = Fixture {
    name: "conv-residual",
    source: include_str!("../fixtures/conv_residual.ir"),
};

pub const ALL: [Fixture; 4] = [CONV_LAYERNORM, REDUCTION_DIMS, WINDOW_ATTENTION, CONV_RESIDUAL];

pub fn by_name(name: &str) -> Option<Fixture> {
    ALL.into_iter().find(|f| f.name == name)
}

/// The reduction-dims graph with one more consumer of `r`, reducing over
/// the axis no other consumer reduces over.
pub fn reduction_dims_with_third_consumer() -> String {
    format!("{}rq = Reduce(r; axes=[1], func=sum, keepdims=false)\noutput rq\n", REDUCTION_DIMS.source)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_fixture_parses_with_its_declared_count() {
        for f in ALL {
            let g = f.graph().unwrap();
            let by_scan = f
                .source
                .lines()
                .filter(|l| !l.starts_with('#') && l.contains(" = "))
                .count();
            assert_eq!(Some(g.node_count()), f.declared_nodes(), "{}", f.name);
            assert_eq!(g.node_count(), by_scan, "{}", f.name);
            crate::graph::infer_shapes(&g).unwrap();
            assert!(crate::graph::validate(&g).is_valid(), "{}", f.name);
        }
    }

    #[test]
    fn third_consumer_variant_parses() {
        let g = parse_graph(&reduction_dims_with_third_consumer()).unwrap();
        assert_eq!(g.node_count(), REDUCTION_DIMS.declared_nodes().unwrap() + 1);
        assert_eq!(g.outputs.len(), 2);
    }
}
