use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use layoutsmith::classify::{classify_node, reduction_dims};
use layoutsmith::fixtures;
use layoutsmith::graph::{infer_shapes, parse_graph, to_ir, ComputeGraph};
use layoutsmith::interp::equivalence_check;
use layoutsmith::pipeline::{ablate, checked, graph_stats, run_pipeline, AblationReport, PipelineConfig};
use layoutsmith::texture::{simulate, CacheConfig};

#[derive(Parser)]
#[command(name = "layoutsmith", version, about = "Eliminate layout transformations in tensor graphs")]
struct Cli {
    /// Seed for random verification inputs.
    #[arg(long, global = true, env = "LAYOUTSMITH_SEED", default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Source {
    /// Graph IR file.
    #[arg(required_unless_present = "fixture", conflicts_with = "fixture")]
    path: Option<PathBuf>,
    /// Use a bundled graph instead of a file.
    #[arg(long, value_parser = fixture_names())]
    fixture: Option<String>,
}

fn fixture_names() -> clap::builder::PossibleValuesParser {
    clap::builder::PossibleValuesParser::new(fixtures::ALL.map(|f| f.name))
}

#[derive(Args, Clone)]
struct Passes {
    /// Directly addressable dims per layout.
    #[arg(long, default_value_t = 2)]
    k: usize,
    #[arg(long, default_value_t = 16)]
    cache_kib: usize,
    #[arg(long, default_value_t = 4)]
    assoc: usize,
    #[arg(long, default_value_t = 4)]
    line_texels: usize,
    #[arg(long, default_value_t = 10)]
    trials: usize,
    #[arg(long, default_value_t = 1e-5)]
    tol: f64,
    #[arg(long)]
    no_eliminate: bool,
    #[arg(long)]
    no_fuse: bool,
    #[arg(long)]
    no_layout_select: bool,
    #[arg(long)]
    no_strength_reduce: bool,
    #[arg(long)]
    no_texture_opt: bool,
}

impl Passes {
    fn config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            cache: CacheConfig {
                capacity_bytes: self.cache_kib * 1024,
                assoc: self.assoc,
                line_texels: self.line_texels,
            },
            tolerance: self.tol,
            trials: self.trials,
            seed,
            eliminate: !self.no_eliminate,
            fuse: !self.no_fuse,
            layout_select: !self.no_layout_select,
            strength_reduce: !self.no_strength_reduce,
            texture_opt: !self.no_texture_opt,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Table,
}

#[derive(Subcommand)]
enum Cmd {
    /// Optimize a graph and write the result as IR.
    Optimize {
        #[command(flatten)]
        src: Source,
        /// Where to write the optimized IR.
        #[arg(short, long)]
        out: PathBuf,
        /// Also write the rewrite statistics here.
        #[arg(long)]
        stats: Option<PathBuf>,
        #[command(flatten)]
        passes: Passes,
    },
    /// Check that optimizing (or a given second graph) preserves outputs.
    Verify {
        #[command(flatten)]
        src: Source,
        /// Compare against this graph instead of the optimized one.
        #[arg(long)]
        against: Option<PathBuf>,
        #[command(flatten)]
        passes: Passes,
    },
    /// Print each node's class and reduction dims as TSV.
    Classify {
        #[command(flatten)]
        src: Source,
    },
    /// Simulate texture-cache traffic of the optimized graph.
    Simulate {
        #[command(flatten)]
        src: Source,
        /// Dump the access trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        passes: Passes,
    },
    /// Run the pass ladder and report traffic per rung.
    Ablate {
        #[command(flatten)]
        src: Source,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        #[command(flatten)]
        passes: Passes,
    },
    /// Count nodes by kind and class.
    Stats {
        #[command(flatten)]
        src: Source,
    },
}

/// Failure with a specific exit status.
#[derive(Debug)]
struct Exit {
    code: u8,
    message: String,
}

fn fail(code: u8, message: impl Into<String>) -> Exit {
    Exit {
        code,
        message: message.into(),
    }
}

impl From<anyhow::Error> for Exit {
    fn from(e: anyhow::Error) -> Self {
        fail(1, format!("{e:#}"))
    }
}

fn read_graph(path: &Path) -> Result<ComputeGraph, Exit> {
    let text = fs::read_to_string(path).map_err(|e| fail(2, format!("cannot read {}: {e}", path.display())))?;
    parse_graph(&text).map_err(|e| fail(1, format!("parse: {}: {e}", path.display())))
}

fn load(src: &Source) -> Result<ComputeGraph, Exit> {
    match (&src.path, &src.fixture) {
        (Some(p), _) => read_graph(p),
        (None, Some(name)) => {
            let f = fixtures::by_name(name).ok_or_else(|| fail(2, format!("no fixture named {name}")))?;
            f.graph().map_err(|e| fail(1, format!("parse: {name}: {e}")))
        }
        (None, None) => Err(fail(2, "no input graph")),
    }
}

fn json<T: Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn write(path: &Path, contents: &str) -> Result<(), Exit> {
    fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn ablation_table(r: &AblationReport) -> String {
    let mut s = String::from("rung\tnodes\taccesses\tmisses\n");
    for rung in &r.rungs {
        writeln!(
            s,
            "{}\t{}\t{}\t{}",
            rung.rung, rung.nodes, rung.total_accesses, rung.total_misses
        )
        .expect("writing to a String");
    }
    s
}

fn classify_table(g: &ComputeGraph) -> Result<String, Exit> {
    let g = infer_shapes(g).map_err(|e| fail(1, format!("infer: {e}")))?;
    let mut s = String::from("node\tkind\tclass\treduction_dims\n");
    for id in g.topo_order().map_err(|e| fail(1, format!("infer: {e}")))? {
        let n = &g.nodes[&id];
        let dims: Vec<String> = (0..n.base_arity())
            .map(|slot| {
                reduction_dims(&g, n, slot)
                    .map(|d| format!("{d:?}").replace(' ', ""))
                    .map_err(|e| fail(1, format!("classify: {e}")))
            })
            .collect::<Result<_, _>>()?;
        writeln!(s, "{}\t{}\t{}\t{}", n.id, n.kind(), classify_node(n), dims.join(";")).expect("writing to a String");
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<(), Exit> {
    let seed = cli.seed;
    match cli.cmd {
        Cmd::Optimize {
            src,
            out,
            stats,
            passes,
        } => {
            let g = load(&src)?;
            let res = run_pipeline(&g, &passes.config(seed)).map_err(|e| fail(1, e.to_string()))?;
            println!("{}", json(&res.report));
            if !res.report.pass {
                return Err(fail(1, "verify: optimized graph differs from the input"));
            }
            write(&out, &to_ir(&res.graph))?;
            if let Some(p) = stats {
                write(&p, &json(&res.report.rewrite))?;
            }
        }
        Cmd::Verify { src, against, passes } => {
            let g = load(&src)?;
            let cfg = passes.config(seed);
            let report = match against {
                Some(p) => {
                    let a = checked(&g).map_err(|e| fail(1, e.to_string()))?;
                    let b = checked(&read_graph(&p)?).map_err(|e| fail(1, e.to_string()))?;
                    equivalence_check(&a, &b, cfg.trials, cfg.tolerance, cfg.seed)
                        .map_err(|e| fail(1, format!("verify: {e}")))?
                }
                None => {
                    run_pipeline(&g, &cfg)
                        .map_err(|e| fail(1, e.to_string()))?
                        .report
                        .equivalence
                }
            };
            println!("{}", json(&report));
            if !report.pass {
                return Err(fail(1, "verify: outputs differ beyond tolerance"));
            }
        }
        Cmd::Classify { src } => print!("{}", classify_table(&load(&src)?)?),
        Cmd::Simulate { src, trace, passes } => {
            let g = load(&src)?;
            let cfg = passes.config(seed);
            let res = run_pipeline(&g, &cfg).map_err(|e| fail(1, e.to_string()))?;
            let mut opts = cfg.sim_options();
            opts.record_trace = trace.is_some();
            let report = simulate(&res.graph, &opts).map_err(|e| fail(1, format!("simulate: {e}")))?;
            println!("{}", json(&report));
            if let (Some(p), Some(t)) = (trace, &report.trace) {
                write(&p, &t.to_csv())?;
            }
        }
        Cmd::Ablate { src, format, passes } => {
            let g = load(&src)?;
            let report = ablate(&g, &passes.config(seed)).map_err(|e| fail(1, e.to_string()))?;
            match format {
                Format::Json => println!("{}", json(&report)),
                Format::Table => print!("{}", ablation_table(&report)),
            }
            if report.rungs.iter().any(|r| !r.report.pass) {
                return Err(fail(1, "verify: a rung changed the graph's outputs"));
            }
        }
        Cmd::Stats { src } => println!("{}", json(&graph_stats(&load(&src)?))),
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("layoutsmith: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
