use std::fmt;

use serde::{Deserialize, Serialize};

/// Static extents of a tensor, outermost dimension first.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TensorShape(Vec<usize>);

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("shape must have rank >= 1")]
    EmptyRank,
    #[error("dimension {dim} has extent 0")]
    ZeroExtent { dim: usize },
    #[error("element count of {0:?} overflows u64")]
    Overflow(Vec<usize>),
}

impl TensorShape {
    pub fn new(dims: Vec<usize>) -> Result<Self, ShapeError> {
        if dims.is_empty() {
            return Err(ShapeError::EmptyRank);
        }
        if let Some(dim) = dims.iter().position(|&d| d == 0) {
            return Err(ShapeError::ZeroExtent { dim });
        }
        let mut count: u64 = 1;
        for &d in &dims {
            count = count
                .checked_mul(d as u64)
                .ok_or_else(|| ShapeError::Overflow(dims.clone()))?;
        }
        Ok(TensorShape(dims))
    }

    /// Builds a shape from extents known to be valid.
    ///
    /// Panics on an invalid shape; intended for literals in code and tests.
    pub fn from_slice(dims: &[usize]) -> Self {
        Self::new(dims.to_vec()).expect("invalid shape literal")
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn dim(&self, i: usize) -> usize {
        self.0[i]
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.rank()];
        for i in (0..self.rank().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn linearize(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.rank());
        index
            .iter()
            .zip(&self.0)
            .fold(0, |acc, (&i, &d)| acc * d + i)
    }

    pub fn delinearize(&self, mut flat: usize) -> Vec<usize> {
        let mut index = vec![0; self.rank()];
        for (slot, &d) in index.iter_mut().zip(&self.0).rev() {
            *slot = flat % d;
            flat /= d;
        }
        index
    }

    pub fn contains(&self, index: &[usize]) -> bool {
        index.len() == self.rank() && index.iter().zip(&self.0).all(|(&i, &d)| i < d)
    }

    /// Iterates every index of the shape in row-major order.
    pub fn indices(&self) -> IndexIter {
        IndexIter {
            dims: self.0.clone(),
            next: Some(vec![0; self.rank()]),
        }
    }

    /// Right-aligned broadcast with size-1 stretching.
    pub fn broadcast(&self, other: &TensorShape) -> Option<TensorShape> {
        let rank = self.rank().max(other.rank());
        let mut dims = vec![0; rank];
        for (k, slot) in dims.iter_mut().enumerate() {
            let a = ext_from_right(&self.0, rank - 1 - k);
            let b = ext_from_right(&other.0, rank - 1 - k);
            *slot = match (a, b) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => return None,
            };
        }
        Some(TensorShape(dims))
    }
}

fn ext_from_right(dims: &[usize], from_right: usize) -> usize {
    if from_right < dims.len() {
        dims[dims.len() - 1 - from_right]
    } else {
        1
    }
}

impl fmt::Display for TensorShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, "]")
    }
}

/// Row-major multi-index iterator.
pub struct IndexIter {
    dims: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl Iterator for IndexIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut k = succ.len();
        loop {
            if k == 0 {
                break;
            }
            k -= 1;
            succ[k] += 1;
            if succ[k] < self.dims[k] {
                self.next = Some(succ);
                break;
            }
            succ[k] = 0;
        }
        Some(current)
    }
}
