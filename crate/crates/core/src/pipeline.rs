//! End-to-end driver: validate, eliminate, select layouts, simulate, verify.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::classify::classify_node;
use crate::elim::{eliminate_layout_ops, ElimOptions, RewriteStats};
use crate::graph::{infer_shapes, validate, ComputeGraph};
use crate::interp::{equivalence_check, EquivalenceReport};
use crate::layout::{assign_layouts, LayoutStats};
use crate::texture::{simulate, CacheConfig, SimOptions, SimReport};

/// Bumped whenever a report field is added, removed or renamed.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PipelineConfig {
    /// Directly addressable dims per layout.
    pub k: usize,
    pub cache: CacheConfig,
    pub tolerance: f64,
    pub trials: usize,
    pub seed: u64,
    pub eliminate: bool,
    pub fuse: bool,
    pub layout_select: bool,
    pub strength_reduce: bool,
    pub texture_opt: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 2,
            cache: CacheConfig::default(),
            tolerance: 1e-5,
            trials: 10,
            seed: 0,
            eliminate: true,
            fuse: true,
            layout_select: true,
            strength_reduce: true,
            texture_opt: true,
        }
    }
}

impl PipelineConfig {
    pub fn sim_options(&self) -> SimOptions {
        SimOptions {
            cache: self.cache,
            raster_order: self.texture_opt,
            lane_inner: self.layout_select,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{stage}: {message}")]
pub struct PipelineError {
    pub stage: &'static str,
    pub message: String,
}

fn stage<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError {
        stage,
        message: e.to_string(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub rewrite: RewriteStats,
    pub layout: LayoutStats,
    pub simulation: SimReport,
    /// The input graph, row-major, in logical loop order.
    pub baseline: SimReport,
    pub equivalence: EquivalenceReport,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct PipelineOutput {
    pub graph: ComputeGraph,
    pub report: RunReport,
}

/// Checks `graph` and reports every finding as one error.
pub fn checked(graph: &ComputeGraph) -> Result<ComputeGraph, PipelineError> {
    let report = validate(graph);
    if !report.is_valid() {
        let findings: Vec<String> = report.findings.iter().map(|f| f.to_string()).collect();
        return Err(PipelineError {
            stage: "validate",
            message: findings.join("; "),
        });
    }
    infer_shapes(graph).map_err(stage("infer"))
}

/// Runs the passes enabled in `config` and verifies the result against
/// the input graph.
pub fn run_pipeline(graph: &ComputeGraph, config: &PipelineConfig) -> Result<PipelineOutput, PipelineError> {
    let original = checked(graph)?;
    let (g, rewrite) = if config.eliminate {
        let opts = ElimOptions {
            fuse: config.fuse,
            strength_reduce: config.strength_reduce,
        };
        eliminate_layout_ops(&original, &opts).map_err(stage("eliminate"))?
    } else {
        let n = original.node_count();
        let stats = RewriteStats {
            nodes_before: n,
            nodes_after: n,
            ..Default::default()
        };
        (original.clone(), stats)
    };
    let (g, layout) = if config.layout_select {
        assign_layouts(&g, config.k).map_err(stage("layout-select"))?
    } else {
        (g, LayoutStats::default())
    };
    let simulation = simulate(&g, &config.sim_options()).map_err(stage("simulate"))?;
    let baseline = simulate(&original, &SimOptions::naive(config.cache)).map_err(stage("simulate"))?;
    let equivalence =
        equivalence_check(&original, &g, config.trials, config.tolerance, config.seed).map_err(stage("verify"))?;
    let pass = equivalence.pass;
    Ok(PipelineOutput {
        graph: g,
        report: RunReport {
            schema_version: SCHEMA_VERSION,
            config: *config,
            rewrite,
            layout,
            simulation,
            baseline,
            equivalence,
            pass,
        },
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRung {
    pub rung: &'static str,
    pub nodes: usize,
    pub total_accesses: u64,
    pub total_misses: u64,
    pub report: RunReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationReport {
    pub schema_version: u32,
    pub rungs: Vec<AblationRung>,
}

pub const RUNGS: [&str; 4] = ["none", "+LTE", "+LayoutSelect", "+TextureOpt"];

/// The config for rung `i` of the ladder, built on `base`.
pub fn rung_config(base: &PipelineConfig, i: usize) -> PipelineConfig {
    PipelineConfig {
        eliminate: i >= 1,
        fuse: i >= 1,
        strength_reduce: i >= 1,
        layout_select: i >= 2,
        texture_opt: i >= 3,
        ..*base
    }
}

/// Enables one more pass per rung and records the simulated traffic.
pub fn ablate(graph: &ComputeGraph, base: &PipelineConfig) -> Result<AblationReport, PipelineError> {
    let mut rungs = Vec::with_capacity(RUNGS.len());
    for (i, name) in RUNGS.into_iter().enumerate() {
        let out = run_pipeline(graph, &rung_config(base, i))?;
        rungs.push(AblationRung {
            rung: name,
            nodes: out.graph.node_count(),
            total_accesses: out.report.simulation.total_accesses,
            total_misses: out.report.simulation.total_misses,
            report: out.report,
        });
    }
    Ok(AblationReport {
        schema_version: SCHEMA_VERSION,
        rungs,
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct GraphStats {
    pub nodes: usize,
    pub edges: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub layout_ops: usize,
    pub by_kind: BTreeMap<String, usize>,
    pub by_class: BTreeMap<String, usize>,
}

pub fn graph_stats(graph: &ComputeGraph) -> GraphStats {
    let mut s = GraphStats {
        nodes: graph.node_count(),
        edges: graph.edges.len(),
        inputs: graph.inputs.len(),
        outputs: graph.outputs.len(),
        ..Default::default()
    };
    for n in graph.nodes.values() {
        *s.by_kind.entry(n.kind().to_string()).or_default() += 1;
        *s.by_class.entry(classify_node(n).to_string()).or_default() += 1;
        if n.op.is_layout_op() {
            s.layout_ops += 1;
        }
    }
    s
}
