use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use super::cache::{CacheConfig, CacheModel};
use super::mapping::{map_to_texture, TexelCoord, TextureError, TextureLayout};
use crate::graph::infer::base_shape;
use crate::graph::{infer_shapes, op_map, ComputeGraph, EdgeId, ElemOp, GraphError, NodeId, Op, OperatorNode};
use crate::index::IndexMap;
use crate::layout::{preferred_layout, LayoutChoice};
use crate::shape::TensorShape;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SimOptions {
    pub cache: CacheConfig,
    /// Walk outputs in texel raster order instead of logical row-major order.
    pub raster_order: bool,
    /// Put the reduction loop running along lanes innermost.
    pub lane_inner: bool,
    #[serde(skip)]
    pub record_trace: bool,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions {
            cache: CacheConfig::default(),
            raster_order: true,
            lane_inner: true,
            record_trace: false,
        }
    }
}

impl SimOptions {
    /// Logical loop order over row-major data.
    pub fn naive(cache: CacheConfig) -> Self {
        SimOptions {
            cache,
            raster_order: false,
            lane_inner: false,
            record_trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("edge `{edge}`: {source}")]
    Texture {
        edge: EdgeId,
        #[source]
        source: TextureError,
    },
    #[error("cache: {0}")]
    Cache(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum AccessKind {
    Read,
    Write,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct TraceEntry {
    pub node: NodeId,
    pub kind: AccessKind,
    pub edge: EdgeId,
    /// 0 for the primary layout, `i` for copy `i`.
    pub copy: usize,
    pub coord: TexelCoord,
    pub miss: bool,
}

/// Texel accesses in issue order, after per-stream coalescing.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct AccessTrace {
    pub entries: Vec<TraceEntry>,
}

impl AccessTrace {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("node,kind,edge,copy,w,h,miss\n");
        for e in &self.entries {
            let kind = match e.kind {
                AccessKind::Read => "read",
                AccessKind::Write => "write",
            };
            writeln!(
                s,
                "{},{kind},{},{},{},{},{}",
                e.node, e.edge, e.copy, e.coord.w, e.coord.h, e.miss as u8
            )
            .expect("writing to a String");
        }
        s
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NodeSim {
    pub node: NodeId,
    pub kind: String,
    pub reads: u64,
    pub writes: u64,
    pub accesses: u64,
    pub misses: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct SimReport {
    pub per_node: Vec<NodeSim>,
    pub total_accesses: u64,
    pub total_misses: u64,
    #[serde(skip)]
    pub trace: Option<AccessTrace>,
}

struct Texture {
    edge: EdgeId,
    copy: usize,
    layout: TextureLayout,
    base: u64,
    lines_per_row: u64,
}

#[derive(Clone, Copy, Default)]
struct Stream {
    last: Option<(usize, usize, usize)>,
}

struct Sim {
    cache: CacheModel,
    line_texels: usize,
    textures: Vec<Texture>,
    by_edge: BTreeMap<EdgeId, (Vec<usize>, LayoutChoice)>,
    trace: Option<Vec<TraceEntry>>,
    current: NodeSim,
}

/// Layout variants of an edge: the primary (without its copies) then each copy.
fn variants(l: &LayoutChoice) -> Vec<LayoutChoice> {
    let mut primary = l.clone();
    let copies = std::mem::take(&mut primary.copies);
    std::iter::once(primary).chain(copies).collect()
}

fn apply(map: &IndexMap, idx: &[usize]) -> Vec<usize> {
    let vars: Vec<i64> = idx.iter().map(|&v| v as i64).collect();
    let mut out = vec![0; map.in_shape().rank()];
    map.eval_into(&vars, &mut out);
    out
}

/// Right-aligned broadcast read of `shape` at result index `r`.
fn bcast(r: &[usize], shape: &TensorShape) -> Vec<usize> {
    let off = r.len() - shape.rank();
    shape
        .dims()
        .iter()
        .enumerate()
        .map(|(k, &d)| if d == 1 { 0 } else { r[off + k] })
        .collect()
}

/// Reduction loops of the base operator as (dim of the slot-0 view, extent).
fn reduction_loops(op: &Op, views: &[TensorShape]) -> Vec<(usize, usize)> {
    let x = &views[0];
    let sorted = |axes: &[usize]| {
        let mut a = axes.to_vec();
        a.sort_unstable();
        a.into_iter().map(|d| (d, x.dim(d))).collect()
    };
    match op {
        Op::MatMul => vec![(x.rank() - 1, x.dim(x.rank() - 1))],
        Op::Conv2D { .. } => vec![(1, x.dim(1)), (2, views[1].dim(2)), (3, views[1].dim(3))],
        Op::Softmax { axis } => vec![(*axis, x.dim(*axis))],
        Op::LayerNorm { axes } | Op::Reduce { axes, .. } => sorted(axes),
        _ => Vec::new(),
    }
}

/// Reads of the base operator for result point `r` and one reduction point.
fn emit_reads(
    op: &Op,
    views: &[TensorShape],
    movement: Option<&IndexMap>,
    r: &[usize],
    red: &[usize],
    f: &mut dyn FnMut(usize, &[usize]),
) {
    match op {
        Op::Unary { .. } => f(0, r),
        Op::Add => {
            f(0, &bcast(r, &views[0]));
            f(1, &bcast(r, &views[1]));
        }
        Op::MatMul => {
            let rr = r.len();
            let (i, j, k) = (r[rr - 2], r[rr - 1], red[0]);
            for (slot, tail) in [(0, [i, k]), (1, [k, j])] {
                let s = &views[slot];
                let rs = s.rank();
                let mut idx: Vec<usize> = (0..rs - 2)
                    .map(|d| if s.dim(d) == 1 { 0 } else { r[rr - rs + d] })
                    .collect();
                idx.extend(tail);
                f(slot, &idx);
            }
        }
        Op::Softmax { axis } => {
            let mut idx = r.to_vec();
            idx[*axis] = red[0];
            f(0, &idx);
        }
        Op::LayerNorm { axes } => {
            let mut sorted = axes.clone();
            sorted.sort_unstable();
            let mut idx = r.to_vec();
            for (a, v) in sorted.iter().zip(red) {
                idx[*a] = *v;
            }
            f(0, &idx);
        }
        Op::Reduce { axes, keepdims, .. } => {
            let mut sorted = axes.clone();
            sorted.sort_unstable();
            let rank = views[0].rank();
            let mut idx = vec![0; rank];
            let mut kept = 0;
            for (d, slot) in idx.iter_mut().enumerate() {
                if let Some(p) = sorted.iter().position(|&a| a == d) {
                    *slot = red[p];
                    if *keepdims {
                        kept += 1;
                    }
                } else {
                    *slot = r[kept];
                    kept += 1;
                }
            }
            f(0, &idx);
        }
        Op::Conv2D { stride, pad } => {
            let (n, o, y, x) = (r[0], r[1], r[2], r[3]);
            let (c, ky, kx) = (red[0], red[1], red[2]);
            let iy = (y * stride + ky) as i64 - *pad as i64;
            let ix = (x * stride + kx) as i64 - *pad as i64;
            let (h, w) = (views[0].dim(2) as i64, views[0].dim(3) as i64);
            if (0..h).contains(&iy) && (0..w).contains(&ix) {
                f(0, &[n, c, iy as usize, ix as usize]);
            }
            f(1, &[o, c, ky, kx]);
        }
        _ => f(0, &apply(movement.expect("layout op has a map"), r)),
    }
}

/// Reads done once per result point, after the reduction.
fn emit_post_reads(op: &Op, views: &[TensorShape], r: &[usize], f: &mut dyn FnMut(usize, &[usize])) {
    match op {
        Op::LayerNorm { .. } => {
            for (slot, s) in views.iter().enumerate().skip(1) {
                f(slot, &bcast(r, s));
            }
        }
        Op::Conv2D { .. } if views.len() == 3 => f(2, &[r[1]]),
        _ => {}
    }
}

impl Sim {
    fn new(g: &ComputeGraph, cache: CacheConfig, trace: bool) -> Result<Self, SimError> {
        let model = CacheModel::new(cache).map_err(SimError::Cache)?;
        let mut textures = Vec::new();
        let mut by_edge = BTreeMap::new();
        let mut next = 0u64;
        let line = cache.line_texels as u64;
        for (id, e) in &g.edges {
            let shape = g.shape(id)?;
            let layout = e.layout.clone().unwrap_or_else(|| LayoutChoice::row_major(shape.rank()));
            let mut ids = Vec::new();
            for (copy, v) in variants(&layout).into_iter().enumerate() {
                let tl = map_to_texture(shape, &v).map_err(|source| SimError::Texture {
                    edge: id.clone(),
                    source,
                })?;
                let lines_per_row = (tl.width as u64).div_ceil(line);
                ids.push(textures.len());
                textures.push(Texture {
                    edge: id.clone(),
                    copy,
                    base: next,
                    lines_per_row,
                    layout: tl,
                });
                next += lines_per_row * textures.last().expect("just pushed").layout.height as u64;
            }
            by_edge.insert(id.clone(), (ids, layout));
        }
        Ok(Sim {
            cache: model,
            line_texels: cache.line_texels,
            textures,
            by_edge,
            trace: trace.then(Vec::new),
            current: NodeSim::default(),
        })
    }

    fn touch(&mut self, stream: &mut Stream, tex: usize, idx: &[usize], kind: AccessKind) {
        let t = &self.textures[tex];
        let c = t.layout.address_unchecked(idx);
        if stream.last == Some((tex, c.w, c.h)) {
            return;
        }
        stream.last = Some((tex, c.w, c.h));
        self.current.accesses += 1;
        let miss = match kind {
            AccessKind::Read => {
                self.current.reads += 1;
                let line = t.base + c.h as u64 * t.lines_per_row + (c.w / self.line_texels) as u64;
                let miss = !self.cache.access(line);
                self.current.misses += miss as u64;
                miss
            }
            AccessKind::Write => {
                self.current.writes += 1;
                false
            }
        };
        if let Some(trace) = &mut self.trace {
            trace.push(TraceEntry {
                node: self.current.node.clone(),
                kind,
                edge: t.edge.clone(),
                copy: t.copy,
                coord: c,
                miss,
            });
        }
    }

    /// Texture read by `slot` of `node`: the variant serving its demand.
    fn read_texture(&self, g: &ComputeGraph, node: &OperatorNode, slot: usize) -> Result<usize, SimError> {
        let (ids, layout) = &self.by_edge[&node.inputs[slot]];
        let dims = preferred_layout(g, &node.id, slot)?.dims;
        if dims.is_empty() {
            return Ok(ids[0]);
        }
        let pos = variants(layout)
            .iter()
            .position(|v| dims.iter().all(|d| v.serves.contains(d)))
            .unwrap_or(0);
        Ok(ids[pos])
    }

    fn run_node(&mut self, g: &ComputeGraph, node: &OperatorNode, opts: &SimOptions) -> Result<NodeSim, SimError> {
        self.current = NodeSim {
            node: node.id.clone(),
            kind: node.kind().name().to_string(),
            ..Default::default()
        };
        let shape_err = |msg: String| GraphError::Shape {
            node: node.id.clone(),
            msg,
        };
        let base = node.base_arity();
        let mut views = Vec::with_capacity(base);
        for slot in 0..base {
            views.push(match node.fusion.input_map(slot) {
                Some(m) => m.out_shape().clone(),
                None => g.shape(&node.inputs[slot])?.clone(),
            });
        }
        let movement = if node.op.is_layout_op() {
            op_map(&node.op, &views[0], true).map_err(|source| GraphError::Index {
                node: node.id.clone(),
                source,
            })?
        } else {
            None
        };
        base_shape(&node.op, &views).map_err(shape_err)?;
        let read_tex: Vec<usize> = (0..node.inputs.len())
            .map(|s| self.read_texture(g, node, s))
            .collect::<Result<_, _>>()?;
        let write_tex = self.by_edge[&node.output].0.clone();

        let loops = reduction_loops(&node.op, &views);
        let mut order: Vec<usize> = (0..loops.len()).collect();
        if opts.lane_inner && !loops.is_empty() {
            let lane = self.textures[read_tex[0]].layout.lane_dim;
            let along_lane = |view_dim: usize| match node.fusion.input_map(0) {
                Some(m) => m.exprs()[lane].mentions(view_dim),
                None => view_dim == lane,
            };
            if let Some(p) = loops.iter().position(|&(d, _)| along_lane(d)) {
                order.retain(|&i| i != p);
                order.push(p);
            }
        }

        let outputs: Vec<Vec<usize>> = if opts.raster_order {
            self.textures[write_tex[0]].layout.raster().collect()
        } else {
            g.shape(&node.output)?.indices().collect()
        };
        let mut streams = vec![Stream::default(); node.inputs.len()];
        let mut out_streams = vec![Stream::default(); write_tex.len()];
        let mut red = vec![0usize; loops.len()];
        let mut pending: Vec<(usize, Vec<usize>)> = Vec::new();
        for o in outputs {
            let r = match &node.fusion.output_map {
                Some(m) => apply(m, &o),
                None => o.clone(),
            };
            red.iter_mut().for_each(|v| *v = 0);
            loop {
                emit_reads(&node.op, &views, movement.as_ref(), &r, &red, &mut |slot, idx| {
                    pending.push((slot, idx.to_vec()))
                });
                // advance the odometer, innermost loop last in `order`
                let mut carry = true;
                for &i in order.iter().rev() {
                    red[i] += 1;
                    if red[i] < loops[i].1 {
                        carry = false;
                        break;
                    }
                    red[i] = 0;
                }
                self.flush(node, &read_tex, &mut streams, &mut pending);
                if carry {
                    break;
                }
            }
            emit_post_reads(&node.op, &views, &r, &mut |slot, idx| pending.push((slot, idx.to_vec())));
            for e in &node.fusion.epilogue {
                if let ElemOp::Add(j) = e {
                    let idx = match node.fusion.input_map(*j) {
                        Some(m) => apply(m, &o),
                        None => bcast(&o, g.shape(&node.inputs[*j])?),
                    };
                    pending.push((*j, idx));
                }
            }
            self.flush(node, &read_tex, &mut streams, &mut pending);
            for (s, &tex) in out_streams.iter_mut().zip(&write_tex) {
                self.touch(s, tex, &o, AccessKind::Write);
            }
        }
        Ok(std::mem::take(&mut self.current))
    }

    /// Issues buffered view reads against the stored tensors.
    fn flush(&mut self, node: &OperatorNode, read_tex: &[usize], streams: &mut [Stream], pending: &mut Vec<(usize, Vec<usize>)>) {
        for (slot, idx) in pending.drain(..) {
            let stored = match node.fusion.input_map(slot) {
                Some(m) if slot < node.base_arity() => apply(m, &idx),
                _ => idx,
            };
            self.touch(&mut streams[slot], read_tex[slot], &stored, AccessKind::Read);
        }
    }
}

/// Replays every node's loop nest against the cache model.
///
/// Edges without a layout are row-major. Reads go through the cache;
/// writes are counted but bypass it.
pub fn simulate(graph: &ComputeGraph, opts: &SimOptions) -> Result<SimReport, SimError> {
    let g = infer_shapes(graph)?;
    let mut sim = Sim::new(&g, opts.cache, opts.record_trace)?;
    let mut report = SimReport::default();
    for id in g.topo_order()? {
        let ns = sim.run_node(&g, &g.nodes[&id], opts)?;
        report.total_accesses += ns.accesses;
        report.total_misses += ns.misses;
        report.per_node.push(ns);
    }
    report.trace = sim.trace.map(|entries| AccessTrace { entries });
    Ok(report)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::graph::parse_graph;
    use crate::layout::assign_layouts;

    fn sim(src: &str, opts: &SimOptions) -> SimReport {
        simulate(&parse_graph(src).unwrap(), opts).unwrap()
    }

    #[test]
    fn unary_touches_each_texel_twice() {
        let r = sim("input x [1024]\ny = Unary(x; fn=relu)", &SimOptions::default());
        assert_eq!(r.total_accesses, 2 * 1024 / 4);
        assert_eq!(r.per_node[0].reads, 256);
        assert_eq!(r.per_node[0].writes, 256);
        // cold misses: one per 4-texel line
        assert_eq!(r.total_misses, 64);
    }

    #[test]
    fn large_cache_sees_only_compulsory_misses() {
        let src = "input a [16,32]\ninput b [32,24]\nc = MatMul(a, b)\nd = Softmax(c; axis=1)";
        let cache = CacheConfig {
            capacity_bytes: 1 << 22,
            assoc: 4,
            line_texels: 4,
        };
        let opts = SimOptions {
            cache,
            record_trace: true,
            ..Default::default()
        };
        let r = sim(src, &opts);
        let lines: BTreeSet<(EdgeId, usize, usize, usize)> = r
            .trace
            .unwrap()
            .entries
            .into_iter()
            .filter(|e| e.kind == AccessKind::Read)
            .map(|e| (e.edge, e.copy, e.coord.h, e.coord.w / 4))
            .collect();
        assert_eq!(r.total_misses, lines.len() as u64);
    }

    #[test]
    fn reads_touch_exactly_the_needed_texels() {
        // distinct texels read per input equal those holding needed elements
        let src = "input x [6,10]\ns = Slice(x; axis=1, start=1, end=9, step=3)\n\
                   input a [5,7]\ninput b [7,3]\nm = MatMul(a, b)";
        let g = infer_shapes(&parse_graph(src).unwrap()).unwrap();
        let opts = SimOptions {
            record_trace: true,
            ..Default::default()
        };
        let r = simulate(&g, &opts).unwrap();
        let entries = r.trace.unwrap().entries;
        let touched = |node: &str, edge: &str| -> BTreeSet<(usize, usize)> {
            entries
                .iter()
                .filter(|e| e.node.0 == node && e.edge.0 == edge && e.kind == AccessKind::Read)
                .map(|e| (e.coord.w, e.coord.h))
                .collect()
        };
        let needed = |edge: &str, f: &dyn Fn(&[usize]) -> bool| -> BTreeSet<(usize, usize)> {
            let shape = g.shape(&EdgeId::from(edge)).unwrap();
            let tl = map_to_texture(shape, &LayoutChoice::row_major(shape.rank())).unwrap();
            shape
                .indices()
                .filter(|i| f(i))
                .map(|i| {
                    let c = tl.address(&i).unwrap();
                    (c.w, c.h)
                })
                .collect()
        };
        assert_eq!(touched("s", "x"), needed("x", &|i| i[1] % 3 == 1 && i[1] < 9));
        assert_eq!(touched("m", "a"), needed("a", &|_| true));
        assert_eq!(touched("m", "b"), needed("b", &|_| true));
    }

    #[test]
    fn selected_layout_cuts_strided_reads() {
        let src = "input a [32,64]\ninput b [64,32]\nc = MatMul(a, b)";
        let g = parse_graph(src).unwrap();
        let naive = simulate(&g, &SimOptions::naive(CacheConfig::default())).unwrap();
        let (h, _) = assign_layouts(&g, 2).unwrap();
        let opt = simulate(&h, &SimOptions::default()).unwrap();
        assert!(opt.total_accesses < naive.total_accesses);
        assert!(opt.total_misses <= naive.total_misses);
    }

    #[test]
    fn traces_are_deterministic() {
        let src = "input x [4,6,8]\nt = Transpose(x; perm=[2,0,1])\ny = Softmax(t; axis=2)";
        let opts = SimOptions {
            record_trace: true,
            ..Default::default()
        };
        assert_eq!(sim(src, &opts).trace, sim(src, &opts).trace);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let opts = SimOptions {
            record_trace: true,
            ..Default::default()
        };
        let r = sim("input x [8]\ny = Unary(x; fn=neg)", &opts);
        let csv = r.trace.unwrap().to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "node,kind,edge,copy,w,h,miss");
        assert_eq!(lines.len(), 1 + 4);
        assert_eq!(lines[1], "y,read,x,0,0,0,1");
    }
}
