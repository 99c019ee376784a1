use serde::Serialize;

use super::map::IndexError;
use crate::shape::TensorShape;

/// How one group of reshape output dims depends on the input dims.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DependencyKind {
    Identity { input: usize, output: usize },
    Split { input: usize, outputs: Vec<usize>, factors: Vec<usize> },
    Merge { inputs: Vec<usize>, output: usize },
    /// An extent-1 output dim with no input counterpart.
    Unit { output: usize },
}

/// Greedy run-matching of reshape extents into identity/split/merge groups.
///
/// Extent-1 dims are skipped on both sides (output ones are reported as
/// [`DependencyKind::Unit`]). A group that is several-to-several, such as
/// `[4,4] -> [2,8]`, is ambiguous and reported as an error.
pub fn classify_dependency(
    in_shape: &TensorShape,
    out_shape: &TensorShape,
) -> Result<Vec<DependencyKind>, IndexError> {
    if in_shape.numel() != out_shape.numel() {
        return Err(IndexError::CountMismatch {
            from: in_shape.clone(),
            to: out_shape.clone(),
            from_count: in_shape.numel(),
            to_count: out_shape.numel(),
        });
    }
    let ins: Vec<usize> = (0..in_shape.rank()).filter(|&i| in_shape.dim(i) > 1).collect();
    let outs: Vec<usize> = (0..out_shape.rank()).filter(|&j| out_shape.dim(j) > 1).collect();
    let mut kinds: Vec<DependencyKind> = Vec::new();
    let (mut i, mut j) = (0, 0);
    while i < ins.len() && j < outs.len() {
        let mut gi = vec![ins[i]];
        let mut go = vec![outs[j]];
        let mut pin = in_shape.dim(ins[i]);
        let mut pout = out_shape.dim(outs[j]);
        i += 1;
        j += 1;
        while pin != pout {
            if pin < pout {
                pin *= in_shape.dim(ins[i]);
                gi.push(ins[i]);
                i += 1;
            } else {
                pout *= out_shape.dim(outs[j]);
                go.push(outs[j]);
                j += 1;
            }
        }
        let kind = match (gi.len(), go.len()) {
            (1, 1) => DependencyKind::Identity {
                input: gi[0],
                output: go[0],
            },
            (1, _) => DependencyKind::Split {
                input: gi[0],
                factors: go.iter().map(|&o| out_shape.dim(o)).collect(),
                outputs: go,
            },
            (_, 1) => DependencyKind::Merge {
                inputs: gi,
                output: go[0],
            },
            _ => {
                return Err(IndexError::Ambiguous {
                    from: in_shape.clone(),
                    to: out_shape.clone(),
                })
            }
        };
        kinds.push(kind);
    }
    for j in (0..out_shape.rank()).filter(|&j| out_shape.dim(j) == 1) {
        kinds.push(DependencyKind::Unit { output: j });
    }
    kinds.sort_by_key(|k| match k {
        DependencyKind::Identity { output, .. }
        | DependencyKind::Merge { output, .. }
        | DependencyKind::Unit { output } => *output,
        DependencyKind::Split { outputs, .. } => outputs[0],
    });
    Ok(kinds)
}
