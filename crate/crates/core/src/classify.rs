//! Operator classes, pairwise actions and outcomes.

use std::fmt;

use serde::Serialize;

use crate::graph::{ComputeGraph, GraphError, Op, OperatorNode};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum InputDependence {
    Ild,
    Ili,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum OutputFlexibility {
    Variable,
    Fixed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct OperatorClass {
    pub input: InputDependence,
    pub output: OutputFlexibility,
}

impl OperatorClass {
    pub const ILD_VARIABLE: Self = Self::new(InputDependence::Ild, OutputFlexibility::Variable);
    pub const ILI_VARIABLE: Self = Self::new(InputDependence::Ili, OutputFlexibility::Variable);
    pub const ILD_FIXED: Self = Self::new(InputDependence::Ild, OutputFlexibility::Fixed);
    pub const ILI_FIXED: Self = Self::new(InputDependence::Ili, OutputFlexibility::Fixed);
    pub const ALL: [Self; 4] = [Self::ILD_VARIABLE, Self::ILI_VARIABLE, Self::ILD_FIXED, Self::ILI_FIXED];

    pub const fn new(input: InputDependence, output: OutputFlexibility) -> Self {
        OperatorClass { input, output }
    }

    pub fn is_fixed(self) -> bool {
        self.output == OutputFlexibility::Fixed
    }

    fn index(self) -> usize {
        match (self.input, self.output) {
            (InputDependence::Ild, OutputFlexibility::Variable) => 0,
            (InputDependence::Ili, OutputFlexibility::Variable) => 1,
            (InputDependence::Ild, OutputFlexibility::Fixed) => 2,
            (InputDependence::Ili, OutputFlexibility::Fixed) => 3,
        }
    }
}

impl fmt::Display for OperatorClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let i = match self.input {
            InputDependence::Ild => "ILD",
            InputDependence::Ili => "ILI",
        };
        let o = match self.output {
            OutputFlexibility::Variable => "Variable",
            OutputFlexibility::Fixed => "Fixed",
        };
        write!(f, "{i}&{o}")
    }
}

impl Serialize for OperatorClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum CombinationAction {
    KeepBoth,
    TryFuse,
    EliminateFirst,
    EliminateSecond,
    EliminateBoth,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum SearchPolicy {
    SearchBoth,
    SearchFused,
    SearchFirst,
    SearchSecond,
    NoSearch,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct CombinationOutcome {
    /// `None` when both operators disappear.
    pub result_class: Option<OperatorClass>,
    pub search_policy: SearchPolicy,
}

/// Class of an operator kind. Fused nodes take the class of their base operator.
pub fn classify(op: &Op) -> OperatorClass {
    match op {
        Op::Conv2D { .. } | Op::MatMul | Op::LayerNorm { .. } | Op::Softmax { .. } | Op::Reduce { .. } => {
            OperatorClass::ILD_VARIABLE
        }
        Op::Reshape { .. }
        | Op::Transpose { .. }
        | Op::DepthToSpace { .. }
        | Op::SpaceToDepth { .. }
        | Op::Relayout { .. } => OperatorClass::ILD_FIXED,
        Op::Unary { .. } | Op::Add => OperatorClass::ILI_VARIABLE,
        Op::Gather { .. } | Op::Slice { .. } => OperatorClass::ILI_FIXED,
    }
}

pub fn classify_node(node: &OperatorNode) -> OperatorClass {
    classify(&node.op)
}

use CombinationAction::*;

const ACTIONS: [[CombinationAction; 4]; 4] = [
    [KeepBoth, TryFuse, EliminateSecond, EliminateSecond],
    [TryFuse, TryFuse, EliminateSecond, EliminateSecond],
    [EliminateFirst, EliminateFirst, EliminateBoth, EliminateBoth],
    [EliminateFirst, EliminateFirst, EliminateBoth, EliminateBoth],
];

/// Action for a producer (`first`) feeding a consumer (`second`).
pub fn combination_action(first: OperatorClass, second: OperatorClass) -> CombinationAction {
    ACTIONS[first.index()][second.index()]
}

/// Class of the surviving operator and the layout search it needs.
pub fn combination_outcome(first: OperatorClass, second: OperatorClass) -> CombinationOutcome {
    use SearchPolicy::*;
    let ild = Some(OperatorClass::ILD_VARIABLE);
    let ili = Some(OperatorClass::ILI_VARIABLE);
    let cell = |result_class, search_policy| CombinationOutcome {
        result_class,
        search_policy,
    };
    let row: [CombinationOutcome; 4] = match first.index() {
        0 => [
            cell(ild, SearchBoth),
            cell(ild, SearchFused),
            cell(ild, SearchFirst),
            cell(ild, SearchFirst),
        ],
        1 => [
            cell(ild, SearchFused),
            cell(ili, NoSearch),
            cell(ili, NoSearch),
            cell(ili, NoSearch),
        ],
        _ => [
            cell(ild, SearchSecond),
            cell(ili, NoSearch),
            cell(None, NoSearch),
            cell(None, NoSearch),
        ],
    };
    row[second.index()]
}

/// Dims of the base operator's view of input `slot` along which it aggregates.
///
/// Epilogue operands and the affine operands of normalizations have none.
pub fn reduction_dims(graph: &ComputeGraph, node: &OperatorNode, slot: usize) -> Result<Vec<usize>, GraphError> {
    if slot >= node.base_arity() {
        return Ok(Vec::new());
    }
    let view_rank = |slot: usize| -> Result<usize, GraphError> {
        Ok(match node.fusion.input_map(slot) {
            Some(m) => m.out_shape().rank(),
            None => graph.shape(&node.inputs[slot])?.rank(),
        })
    };
    Ok(match &node.op {
        Op::MatMul => {
            let r = view_rank(slot)?;
            if slot == 0 {
                vec![r - 1]
            } else {
                vec![r - 2]
            }
        }
        Op::Conv2D { .. } => {
            let w_shape = match node.fusion.input_map(1) {
                Some(m) => m.out_shape().clone(),
                None => graph.shape(&node.inputs[1])?.clone(),
            };
            match slot {
                0 if w_shape.dim(2) * w_shape.dim(3) > 1 => vec![1, 2, 3],
                0 => vec![1],
                1 => vec![1, 2, 3],
                _ => Vec::new(),
            }
        }
        Op::Reduce { axes, .. } | Op::LayerNorm { axes } if slot == 0 => {
            let mut a = axes.clone();
            a.sort_unstable();
            a
        }
        Op::Softmax { axis } if slot == 0 => vec![*axis],
        _ => Vec::new(),
    })
}
