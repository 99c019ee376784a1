use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::index::IndexMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum OpKind {
    Conv2D,
    MatMul,
    LayerNorm,
    Softmax,
    Reduce,
    Reshape,
    Transpose,
    DepthToSpace,
    SpaceToDepth,
    Gather,
    Slice,
    Unary,
    Add,
    Relayout,
}

impl OpKind {
    pub const ALL: [OpKind; 14] = [
        OpKind::Conv2D,
        OpKind::MatMul,
        OpKind::LayerNorm,
        OpKind::Softmax,
        OpKind::Reduce,
        OpKind::Reshape,
        OpKind::Transpose,
        OpKind::DepthToSpace,
        OpKind::SpaceToDepth,
        OpKind::Gather,
        OpKind::Slice,
        OpKind::Unary,
        OpKind::Add,
        OpKind::Relayout,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Conv2D => "Conv2D",
            OpKind::MatMul => "MatMul",
            OpKind::LayerNorm => "LayerNorm",
            OpKind::Softmax => "Softmax",
            OpKind::Reduce => "Reduce",
            OpKind::Reshape => "Reshape",
            OpKind::Transpose => "Transpose",
            OpKind::DepthToSpace => "DepthToSpace",
            OpKind::SpaceToDepth => "SpaceToDepth",
            OpKind::Gather => "Gather",
            OpKind::Slice => "Slice",
            OpKind::Unary => "Unary",
            OpKind::Add => "Add",
            OpKind::Relayout => "Relayout",
        }
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for OpKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        // InstanceNorm normalizes per channel over the spatial axes, which is
        // LayerNorm over those axes without the affine operands.
        if s == "InstanceNorm" {
            return Ok(OpKind::LayerNorm);
        }
        OpKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown operator kind `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum UnaryFn {
    Relu,
    Gelu,
    Exp,
    Neg,
    Sigmoid,
    Tanh,
}

impl UnaryFn {
    pub const ALL: [UnaryFn; 6] = [
        UnaryFn::Relu,
        UnaryFn::Gelu,
        UnaryFn::Exp,
        UnaryFn::Neg,
        UnaryFn::Sigmoid,
        UnaryFn::Tanh,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UnaryFn::Relu => "relu",
            UnaryFn::Gelu => "gelu",
            UnaryFn::Exp => "exp",
            UnaryFn::Neg => "neg",
            UnaryFn::Sigmoid => "sigmoid",
            UnaryFn::Tanh => "tanh",
        }
    }

    pub fn apply(self, x: f64) -> f64 {
        match self {
            UnaryFn::Relu => x.max(0.0),
            UnaryFn::Gelu => {
                let c = (2.0 / std::f64::consts::PI).sqrt();
                0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
            }
            UnaryFn::Exp => x.exp(),
            UnaryFn::Neg => -x,
            UnaryFn::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            UnaryFn::Tanh => x.tanh(),
        }
    }
}

impl FromStr for UnaryFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        UnaryFn::ALL
            .into_iter()
            .find(|u| u.name() == s)
            .ok_or_else(|| format!("unknown unary function `{s}`"))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ReduceFn {
    Sum,
    Mean,
    Max,
}

impl ReduceFn {
    pub fn name(self) -> &'static str {
        match self {
            ReduceFn::Sum => "sum",
            ReduceFn::Mean => "mean",
            ReduceFn::Max => "max",
        }
    }
}

impl FromStr for ReduceFn {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sum" => Ok(ReduceFn::Sum),
            "mean" => Ok(ReduceFn::Mean),
            "max" => Ok(ReduceFn::Max),
            _ => Err(format!("unknown reduce function `{s}`")),
        }
    }
}

/// Operator with its attributes.
///
/// `Relayout` is a pure data-movement operator described by an index map;
/// it appears when layout operators are folded into each other.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Op {
    /// Inputs: activation `[N,C,H,W]`, weight `[O,C,KH,KW]`, optional bias `[O]`.
    Conv2D { stride: usize, pad: usize },
    /// Inputs `[..,m,k]` and `[..,k,n]` with right-aligned batch broadcast.
    MatMul,
    /// Inputs: data, then optional scale and bias broadcast against it.
    LayerNorm { axes: Vec<usize> },
    Softmax { axis: usize },
    Reduce {
        axes: Vec<usize>,
        func: ReduceFn,
        keepdims: bool,
    },
    Reshape { shape: Vec<usize> },
    Transpose { perm: Vec<usize> },
    DepthToSpace { block: usize },
    SpaceToDepth { block: usize },
    Gather { axis: usize, indices: Vec<usize> },
    Slice {
        axis: usize,
        start: usize,
        end: usize,
        step: usize,
    },
    Unary { func: UnaryFn },
    Add,
    Relayout { map: IndexMap, origin: OpKind },
}

impl Op {
    pub fn kind(&self) -> OpKind {
        match self {
            Op::Conv2D { .. } => OpKind::Conv2D,
            Op::MatMul => OpKind::MatMul,
            Op::LayerNorm { .. } => OpKind::LayerNorm,
            Op::Softmax { .. } => OpKind::Softmax,
            Op::Reduce { .. } => OpKind::Reduce,
            Op::Reshape { .. } => OpKind::Reshape,
            Op::Transpose { .. } => OpKind::Transpose,
            Op::DepthToSpace { .. } => OpKind::DepthToSpace,
            Op::SpaceToDepth { .. } => OpKind::SpaceToDepth,
            Op::Gather { .. } => OpKind::Gather,
            Op::Slice { .. } => OpKind::Slice,
            Op::Unary { .. } => OpKind::Unary,
            Op::Add => OpKind::Add,
            Op::Relayout { .. } => OpKind::Relayout,
        }
    }

    /// Accepted numbers of base inputs.
    pub fn arity(&self) -> &'static [usize] {
        match self {
            Op::Conv2D { .. } => &[2, 3],
            Op::MatMul | Op::Add => &[2],
            Op::LayerNorm { .. } => &[1, 3],
            _ => &[1],
        }
    }

    /// True for operators whose output is a pure rearrangement of one input.
    pub fn is_layout_op(&self) -> bool {
        matches!(
            self,
            Op::Reshape { .. }
                | Op::Transpose { .. }
                | Op::DepthToSpace { .. }
                | Op::SpaceToDepth { .. }
                | Op::Gather { .. }
                | Op::Slice { .. }
                | Op::Relayout { .. }
        )
    }

    pub fn is_elementwise(&self) -> bool {
        matches!(self, Op::Unary { .. } | Op::Add)
    }

    /// Attribute checks that need no shape information.
    pub fn check_attrs(&self) -> Result<(), String> {
        match self {
            Op::Transpose { perm } => {
                crate::index::check_perm(perm, perm.len()).map_err(|_| "permutation not bijective".to_string())
            }
            Op::Conv2D { stride, .. } if *stride == 0 => Err("stride must be positive".into()),
            Op::DepthToSpace { block } | Op::SpaceToDepth { block } if *block == 0 => {
                Err("block must be positive".into())
            }
            Op::Slice { start, end, step, .. } if *step == 0 || start >= end => {
                Err(format!("empty slice {start}..{end} step {step}"))
            }
            Op::Reshape { shape } if shape.is_empty() || shape.contains(&0) => {
                Err(format!("invalid reshape target {shape:?}"))
            }
            Op::LayerNorm { axes } | Op::Reduce { axes, .. } => {
                let mut sorted = axes.clone();
                sorted.sort_unstable();
                sorted.dedup();
                if sorted.len() != axes.len() || axes.is_empty() {
                    Err(format!("axes {axes:?} must be non-empty and distinct"))
                } else {
                    Ok(())
                }
            }
            Op::Gather { indices, .. } if indices.is_empty() => Err("gather needs indices".into()),
            _ => Ok(()),
        }
    }
}

/// Elementwise operation applied after the base operator of a fused node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ElemOp {
    Unary(UnaryFn),
    /// Adds the node input at this position.
    Add(usize),
}

impl fmt::Display for ElemOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ElemOp::Unary(u) => f.write_str(u.name()),
            ElemOp::Add(i) => write!(f, "add({i})"),
        }
    }
}

/// Index maps and epilogue attached to an operator by the rewrite passes.
///
/// `input_maps[i]` maps the base operator's view of input `i` to the
/// stored tensor (for epilogue operands: from the output domain).
/// `output_map` maps the output tensor's coordinates to the coordinates of
/// the base operator's result.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct Fusion {
    pub input_maps: Vec<Option<IndexMap>>,
    pub epilogue: Vec<ElemOp>,
    pub output_map: Option<IndexMap>,
}

impl Fusion {
    pub fn is_empty(&self) -> bool {
        self.input_maps.iter().all(Option::is_none) && self.epilogue.is_empty() && self.output_map.is_none()
    }

    pub fn epilogue_operands(&self) -> usize {
        self.epilogue.iter().filter(|e| matches!(e, ElemOp::Add(_))).count()
    }

    pub fn input_map(&self, slot: usize) -> Option<&IndexMap> {
        self.input_maps.get(slot).and_then(Option::as_ref)
    }

    pub fn set_input_map(&mut self, slot: usize, map: Option<IndexMap>) {
        if self.input_maps.len() <= slot {
            self.input_maps.resize(slot + 1, None);
        }
        self.input_maps[slot] = map;
        while matches!(self.input_maps.last(), Some(None)) {
            self.input_maps.pop();
        }
    }
}
