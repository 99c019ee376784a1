use std::fmt;
use std::sync::Arc;

use super::expr::IndexExpr;
use super::simplify::strength_reduce;
use crate::shape::TensorShape;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IndexError {
    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch {
        expected: TensorShape,
        found: TensorShape,
    },
    #[error("element count mismatch: {from} has {from_count} elements, {to} has {to_count}")]
    CountMismatch {
        from: TensorShape,
        to: TensorShape,
        from_count: usize,
        to_count: usize,
    },
    #[error("permutation not bijective: {0:?}")]
    NotBijective(Vec<usize>),
    #[error("index {index:?} out of range for {shape}")]
    OutOfRange { index: Vec<usize>, shape: TensorShape },
    #[error("map has {found} expressions, target rank is {expected}")]
    Arity { expected: usize, found: usize },
    #[error("block size {block} does not divide extent {extent}")]
    BadBlock { block: usize, extent: usize },
    #[error("invalid slice {start}..{end} step {step} on extent {extent}")]
    BadSlice {
        start: usize,
        end: usize,
        step: usize,
        extent: usize,
    },
    #[error("gather index {index} out of range for extent {extent}")]
    BadGather { index: usize, extent: usize },
    #[error("axis {axis} out of range for rank {rank}")]
    BadAxis { axis: usize, rank: usize },
    #[error("ambiguous factorization between {from} and {to}")]
    Ambiguous { from: TensorShape, to: TensorShape },
    #[error("{0}")]
    Shape(#[from] crate::shape::ShapeError),
}

/// Gather-form index map: for every coordinate of `out_shape`, the
/// expressions give the coordinate of `in_shape` that is read.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct IndexMap {
    out_shape: TensorShape,
    in_shape: TensorShape,
    exprs: Vec<IndexExpr>,
}

impl IndexMap {
    pub fn new(
        out_shape: TensorShape,
        in_shape: TensorShape,
        exprs: Vec<IndexExpr>,
    ) -> Result<Self, IndexError> {
        if exprs.len() != in_shape.rank() {
            return Err(IndexError::Arity {
                expected: in_shape.rank(),
                found: exprs.len(),
            });
        }
        let mut vars = Vec::new();
        for e in &exprs {
            e.vars(&mut vars);
        }
        if let Some(&v) = vars.iter().find(|&&v| v >= out_shape.rank()) {
            return Err(IndexError::BadAxis {
                axis: v,
                rank: out_shape.rank(),
            });
        }
        Ok(IndexMap {
            out_shape,
            in_shape,
            exprs,
        })
    }

    pub fn identity(shape: &TensorShape) -> Self {
        IndexMap {
            out_shape: shape.clone(),
            in_shape: shape.clone(),
            exprs: (0..shape.rank()).map(IndexExpr::Var).collect(),
        }
    }

    pub fn out_shape(&self) -> &TensorShape {
        &self.out_shape
    }

    pub fn in_shape(&self) -> &TensorShape {
        &self.in_shape
    }

    pub fn exprs(&self) -> &[IndexExpr] {
        &self.exprs
    }

    pub fn is_identity(&self) -> bool {
        self.out_shape == self.in_shape
            && self
                .exprs
                .iter()
                .enumerate()
                .all(|(i, e)| *e == IndexExpr::Var(i))
    }

    pub fn divmod_count(&self) -> usize {
        self.exprs.iter().map(IndexExpr::divmod_count).sum()
    }

    /// Evaluates the map at `out_index`, checking both domain and range.
    pub fn eval(&self, out_index: &[usize]) -> Result<Vec<usize>, IndexError> {
        if !self.out_shape.contains(out_index) {
            return Err(IndexError::OutOfRange {
                index: out_index.to_vec(),
                shape: self.out_shape.clone(),
            });
        }
        let vars: Vec<i64> = out_index.iter().map(|&v| v as i64).collect();
        let mut result = Vec::with_capacity(self.exprs.len());
        for (e, &d) in self.exprs.iter().zip(self.in_shape.dims()) {
            let v = e.eval(&vars);
            if v < 0 || v as usize >= d {
                let partial: Vec<usize> = self
                    .exprs
                    .iter()
                    .map(|e| e.eval(&vars).max(0) as usize)
                    .collect();
                return Err(IndexError::OutOfRange {
                    index: partial,
                    shape: self.in_shape.clone(),
                });
            }
            result.push(v as usize);
        }
        Ok(result)
    }

    /// Evaluates without range checks into `out`.
    pub fn eval_into(&self, vars: &[i64], out: &mut [usize]) {
        for (slot, e) in out.iter_mut().zip(&self.exprs) {
            *slot = e.eval(vars) as usize;
        }
    }

    /// Checks that every output coordinate maps inside `in_shape`.
    ///
    /// Uses interval analysis first and falls back to enumeration.
    pub fn check_range(&self) -> Result<(), IndexError> {
        let ext = self.out_shape.dims();
        let bounded = self
            .exprs
            .iter()
            .zip(self.in_shape.dims())
            .all(|(e, &d)| {
                let r = e.range(ext);
                r.lo >= 0 && r.hi < d as i64
            });
        if bounded {
            return Ok(());
        }
        for idx in self.out_shape.indices() {
            self.eval(&idx)?;
        }
        Ok(())
    }

    /// `compose(outer, inner)(o) = inner(outer(o))`.
    ///
    /// `outer` reads from the tensor that `inner` produces, so the result
    /// maps `outer.out_shape` straight to `inner.in_shape`.
    pub fn compose(outer: &IndexMap, inner: &IndexMap) -> Result<IndexMap, IndexError> {
        if outer.in_shape != inner.out_shape {
            return Err(IndexError::ShapeMismatch {
                expected: inner.out_shape.clone(),
                found: outer.in_shape.clone(),
            });
        }
        let exprs = inner
            .exprs
            .iter()
            .map(|e| e.substitute(&outer.exprs))
            .collect();
        Ok(IndexMap {
            out_shape: outer.out_shape.clone(),
            in_shape: inner.in_shape.clone(),
            exprs,
        })
    }

    /// Strength-reduces every expression over the output domain.
    pub fn reduced(&self) -> IndexMap {
        let ext = self.out_shape.dims();
        IndexMap {
            out_shape: self.out_shape.clone(),
            in_shape: self.in_shape.clone(),
            exprs: self.exprs.iter().map(|e| strength_reduce(e, ext)).collect(),
        }
    }

    /// Enumerates the domain and reports whether every input coordinate is
    /// hit exactly once.
    pub fn is_bijective(&self) -> bool {
        if self.out_shape.numel() != self.in_shape.numel() {
            return false;
        }
        let mut seen = vec![false; self.in_shape.numel()];
        for idx in self.out_shape.indices() {
            let Ok(src) = self.eval(&idx) else {
                return false;
            };
            let flat = self.in_shape.linearize(&src);
            if seen[flat] {
                return false;
            }
            seen[flat] = true;
        }
        true
    }

    /// IR literal form, `{[5,25]->[5,5,5]: o0, o1//5, o1%5}`.
    pub fn to_literal(&self) -> String {
        let body: Vec<String> = self.exprs.iter().map(|e| e.to_string()).collect();
        format!("{{{}->{}: {}}}", self.out_shape, self.in_shape, body.join(", "))
    }
}

impl fmt::Display for IndexMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "in[")?;
        for i in 0..self.in_shape.rank() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "d{i}")?;
        }
        write!(f, "] = (")?;
        for (i, e) in self.exprs.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{e}")?;
        }
        write!(f, ")")
    }
}

fn check_count(from: &TensorShape, to: &TensorShape) -> Result<(), IndexError> {
    if from.numel() != to.numel() {
        return Err(IndexError::CountMismatch {
            from: from.clone(),
            to: to.clone(),
            from_count: from.numel(),
            to_count: to.numel(),
        });
    }
    Ok(())
}

/// Row-major relinearization without any simplification.
pub fn relinearize(in_shape: &TensorShape, out_shape: &TensorShape) -> Result<IndexMap, IndexError> {
    check_count(in_shape, out_shape)?;
    let mut flat: Option<IndexExpr> = None;
    for (i, &d) in out_shape.dims().iter().enumerate() {
        flat = Some(match flat {
            None => IndexExpr::var(i),
            Some(acc) => IndexExpr::add(IndexExpr::mul(acc, d as i64), IndexExpr::var(i)),
        });
    }
    let flat = flat.expect("rank >= 1");
    let strides = in_shape.strides();
    let exprs = in_shape
        .dims()
        .iter()
        .zip(&strides)
        .enumerate()
        .map(|(k, (&d, &s))| {
            let mut e = flat.clone();
            if s > 1 {
                e = IndexExpr::floor_div(e, s as i64);
            }
            if k > 0 {
                e = IndexExpr::modulo(e, d as i64);
            }
            e
        })
        .collect();
    IndexMap::new(out_shape.clone(), in_shape.clone(), exprs)
}

/// Reshape as a strength-reduced relinearization.
pub fn map_of_reshape(in_shape: &TensorShape, out_shape: &TensorShape) -> Result<IndexMap, IndexError> {
    Ok(relinearize(in_shape, out_shape)?.reduced())
}

pub fn transpose_shape(perm: &[usize], in_shape: &TensorShape) -> Result<TensorShape, IndexError> {
    check_perm(perm, in_shape.rank())?;
    Ok(TensorShape::new(perm.iter().map(|&p| in_shape.dim(p)).collect())?)
}

pub fn check_perm(perm: &[usize], rank: usize) -> Result<(), IndexError> {
    let mut seen = vec![false; rank];
    if perm.len() != rank {
        return Err(IndexError::NotBijective(perm.to_vec()));
    }
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(IndexError::NotBijective(perm.to_vec()));
        }
        seen[p] = true;
    }
    Ok(())
}

/// `out[j] = in[perm[j]]`, so input dim `perm[j]` reads variable `o_j`.
pub fn map_of_transpose(perm: &[usize], in_shape: &TensorShape) -> Result<IndexMap, IndexError> {
    let out_shape = transpose_shape(perm, in_shape)?;
    let mut exprs = vec![IndexExpr::Const(0); perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        exprs[p] = IndexExpr::var(j);
    }
    IndexMap::new(out_shape, in_shape.clone(), exprs)
}

fn nchw(in_shape: &TensorShape) -> Result<[usize; 4], IndexError> {
    match in_shape.dims() {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(IndexError::Arity {
            expected: 4,
            found: in_shape.rank(),
        }),
    }
}

pub fn depth_to_space_shape(in_shape: &TensorShape, block: usize) -> Result<TensorShape, IndexError> {
    let [n, c, h, w] = nchw(in_shape)?;
    if block == 0 || c % (block * block) != 0 {
        return Err(IndexError::BadBlock {
            block: block * block,
            extent: c,
        });
    }
    Ok(TensorShape::new(vec![n, c / (block * block), h * block, w * block])?)
}

/// DepthToSpace in DCR order: `out[n,c,h,w] = in[n, ((h%b)*b + w%b)*C' + c, h//b, w//b]`.
pub fn map_of_depth_to_space(in_shape: &TensorShape, block: usize) -> Result<IndexMap, IndexError> {
    let out_shape = depth_to_space_shape(in_shape, block)?;
    let b = block as i64;
    let c_out = out_shape.dim(1) as i64;
    let (h, w) = (IndexExpr::var(2), IndexExpr::var(3));
    let chan = IndexExpr::add(
        IndexExpr::add(
            IndexExpr::mul(IndexExpr::modulo(h.clone(), b), b * c_out),
            IndexExpr::mul(IndexExpr::modulo(w.clone(), b), c_out),
        ),
        IndexExpr::var(1),
    );
    let exprs = vec![
        IndexExpr::var(0),
        chan,
        IndexExpr::floor_div(h, b),
        IndexExpr::floor_div(w, b),
    ];
    Ok(IndexMap::new(out_shape, in_shape.clone(), exprs)?.reduced())
}

pub fn space_to_depth_shape(in_shape: &TensorShape, block: usize) -> Result<TensorShape, IndexError> {
    let [n, c, h, w] = nchw(in_shape)?;
    for extent in [h, w] {
        if block == 0 || extent % block != 0 {
            return Err(IndexError::BadBlock { block, extent });
        }
    }
    Ok(TensorShape::new(vec![n, c * block * block, h / block, w / block])?)
}

/// Inverse of [`map_of_depth_to_space`]:
/// `out[n,c',h,w] = in[n, c'%C, h*b + c'//(b*C), w*b + (c'//C)%b]`.
pub fn map_of_space_to_depth(in_shape: &TensorShape, block: usize) -> Result<IndexMap, IndexError> {
    let out_shape = space_to_depth_shape(in_shape, block)?;
    let b = block as i64;
    let c_in = in_shape.dim(1) as i64;
    let c = IndexExpr::var(1);
    let exprs = vec![
        IndexExpr::var(0),
        IndexExpr::modulo(c.clone(), c_in),
        IndexExpr::add(
            IndexExpr::mul(IndexExpr::var(2), b),
            IndexExpr::floor_div(c.clone(), b * c_in),
        ),
        IndexExpr::add(
            IndexExpr::mul(IndexExpr::var(3), b),
            IndexExpr::modulo(IndexExpr::floor_div(c, c_in), b),
        ),
    ];
    Ok(IndexMap::new(out_shape, in_shape.clone(), exprs)?.reduced())
}

pub fn slice_shape(
    in_shape: &TensorShape,
    axis: usize,
    start: usize,
    end: usize,
    step: usize,
) -> Result<TensorShape, IndexError> {
    if axis >= in_shape.rank() {
        return Err(IndexError::BadAxis {
            axis,
            rank: in_shape.rank(),
        });
    }
    let extent = in_shape.dim(axis);
    if step == 0 || start >= end || end > extent {
        return Err(IndexError::BadSlice {
            start,
            end,
            step,
            extent,
        });
    }
    let mut dims = in_shape.dims().to_vec();
    dims[axis] = (end - start).div_ceil(step);
    Ok(TensorShape::new(dims)?)
}

/// `in[axis] = start + step*o_axis`, other dims pass through.
pub fn map_of_slice(
    in_shape: &TensorShape,
    axis: usize,
    start: usize,
    end: usize,
    step: usize,
) -> Result<IndexMap, IndexError> {
    let out_shape = slice_shape(in_shape, axis, start, end, step)?;
    let mut exprs: Vec<IndexExpr> = (0..in_shape.rank()).map(IndexExpr::var).collect();
    let scaled = if step == 1 {
        IndexExpr::var(axis)
    } else {
        IndexExpr::mul(IndexExpr::var(axis), step as i64)
    };
    exprs[axis] = if start == 0 {
        scaled
    } else {
        IndexExpr::add(scaled, IndexExpr::Const(start as i64))
    };
    IndexMap::new(out_shape, in_shape.clone(), exprs)
}

pub fn gather_shape(
    in_shape: &TensorShape,
    axis: usize,
    indices: &[usize],
) -> Result<TensorShape, IndexError> {
    if axis >= in_shape.rank() {
        return Err(IndexError::BadAxis {
            axis,
            rank: in_shape.rank(),
        });
    }
    let extent = in_shape.dim(axis);
    if let Some(&index) = indices.iter().find(|&&i| i >= extent) {
        return Err(IndexError::BadGather { index, extent });
    }
    let mut dims = in_shape.dims().to_vec();
    dims[axis] = indices.len();
    Ok(TensorShape::new(dims)?)
}

/// `in[axis] = indices[o_axis]` as a constant-table lookup.
pub fn map_of_gather(
    in_shape: &TensorShape,
    axis: usize,
    indices: &[usize],
) -> Result<IndexMap, IndexError> {
    let out_shape = gather_shape(in_shape, axis, indices)?;
    let table: Arc<[i64]> = indices.iter().map(|&i| i as i64).collect();
    let mut exprs: Vec<IndexExpr> = (0..in_shape.rank()).map(IndexExpr::var).collect();
    exprs[axis] = IndexExpr::lookup(table, IndexExpr::var(axis));
    Ok(IndexMap::new(out_shape, in_shape.clone(), exprs)?.reduced())
}

/// Map reading a right-aligned broadcast operand from the broadcast result.
pub fn broadcast_map(out_shape: &TensorShape, operand: &TensorShape) -> Result<IndexMap, IndexError> {
    let (ro, ri) = (out_shape.rank(), operand.rank());
    let compatible = ri <= ro
        && operand
            .dims()
            .iter()
            .enumerate()
            .all(|(k, &d)| d == 1 || d == out_shape.dim(ro - ri + k));
    if !compatible {
        return Err(IndexError::ShapeMismatch {
            expected: out_shape.clone(),
            found: operand.clone(),
        });
    }
    let exprs = operand
        .dims()
        .iter()
        .enumerate()
        .map(|(k, &d)| {
            if d == 1 {
                IndexExpr::Const(0)
            } else {
                IndexExpr::var(ro - ri + k)
            }
        })
        .collect();
    IndexMap::new(out_shape.clone(), operand.clone(), exprs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(d: &[usize]) -> TensorShape {
        TensorShape::from_slice(d)
    }

    #[test]
    fn reshape_splits_trailing_dim() {
        let m = map_of_reshape(&s(&[5, 5, 5]), &s(&[5, 25])).unwrap();
        assert_eq!(m.to_string(), "in[d0,d1,d2] = (o0, o1//5, o1%5)");
        assert_eq!(m.eval(&[2, 13]).unwrap(), vec![2, 2, 3]);
        let merge = map_of_reshape(&s(&[6]), &s(&[2, 3])).unwrap();
        assert_eq!(merge.to_string(), "in[d0] = (o0*3+o1)");
    }

    #[test]
    fn reshape_matches_flat_index_oracle() {
        let (a, b) = (s(&[4, 6]), s(&[3, 8]));
        let m = map_of_reshape(&a, &b).unwrap();
        for (flat, idx) in b.indices().enumerate() {
            assert_eq!(m.eval(&idx).unwrap(), a.delinearize(flat));
        }
        assert!(m.is_bijective());
    }

    #[test]
    fn reshape_rejects_count_mismatch() {
        assert!(matches!(
            map_of_reshape(&s(&[4]), &s(&[5])),
            Err(IndexError::CountMismatch { .. })
        ));
    }

    #[test]
    fn transpose_maps_and_round_trips() {
        let m = map_of_transpose(&[1, 0], &s(&[2, 3])).unwrap();
        assert_eq!(m.to_string(), "in[d0,d1] = (o1, o0)");
        assert_eq!(m.eval(&[1, 0]).unwrap(), vec![0, 1]);
        assert!(map_of_transpose(&[0, 1, 2], &s(&[2, 3, 4])).unwrap().is_identity());
        let fwd = map_of_transpose(&[2, 0, 1], &s(&[2, 3, 4])).unwrap();
        let back = map_of_transpose(&[1, 2, 0], fwd.out_shape()).unwrap();
        // back reads fwd's output
        let round = IndexMap::compose(&back, &fwd).unwrap();
        assert!(round.is_identity(), "{round}");
        assert!(matches!(
            map_of_transpose(&[0, 0], &s(&[2, 2])),
            Err(IndexError::NotBijective(_))
        ));
    }

    #[test]
    fn involution_and_identity_composition() {
        let t = map_of_transpose(&[1, 0], &s(&[2, 3])).unwrap();
        let t2 = map_of_transpose(&[1, 0], &s(&[3, 2])).unwrap();
        assert!(IndexMap::compose(&t2, &t).unwrap().is_identity());
        let id = IndexMap::identity(&s(&[2, 3]));
        assert_eq!(IndexMap::compose(&t, &id).unwrap(), t);
        assert!(IndexMap::compose(&t, &t).is_err());
    }

    #[test]
    fn reshape_transpose_chain_matches_sequential_oracle() {
        // [2,8] -> reshape [2,2,4] -> transpose [0,2,1] -> [2,4,2]
        let x = s(&[2, 8]);
        let r = map_of_reshape(&x, &s(&[2, 2, 4])).unwrap();
        let t = map_of_transpose(&[0, 2, 1], r.out_shape()).unwrap();
        let chain = IndexMap::compose(&t, &r).unwrap().reduced();
        for o in t.out_shape().indices() {
            let mid = [o[0], o[2], o[1]];
            let flat = mid[0] * 8 + mid[1] * 4 + mid[2];
            assert_eq!(chain.eval(&o).unwrap(), x.delinearize(flat));
        }
        assert_eq!(chain.to_string(), "in[d0,d1] = (o0, o2*4+o1)");
    }

    #[test]
    fn depth_space_pair_is_identity() {
        let x = s(&[1, 8, 3, 2]);
        let d2s = map_of_depth_to_space(&x, 2).unwrap();
        assert_eq!(d2s.out_shape().dims(), &[1, 2, 6, 4]);
        let s2d = map_of_space_to_depth(d2s.out_shape(), 2).unwrap();
        let round = IndexMap::compose(&s2d, &d2s).unwrap().reduced();
        assert!(round.is_identity(), "{round}");
        assert!(d2s.is_bijective() && s2d.is_bijective());
        // DCR oracle: out[0,c,h,w] reads channel ((h%2)*2 + w%2)*2 + c
        for o in d2s.out_shape().indices() {
            let c = ((o[2] % 2) * 2 + o[3] % 2) * 2 + o[1];
            assert_eq!(d2s.eval(&o).unwrap(), vec![0, c, o[2] / 2, o[3] / 2]);
        }
    }

    #[test]
    fn slice_and_gather_offsets() {
        let m = map_of_slice(&s(&[3, 10]), 1, 2, 9, 3).unwrap();
        assert_eq!(m.out_shape().dims(), &[3, 3]);
        assert_eq!(m.eval(&[1, 2]).unwrap(), vec![1, 8]);
        let g = map_of_gather(&s(&[4, 2]), 0, &[3, 1, 2]).unwrap();
        assert_eq!(g.to_string(), "in[d0,d1] = (tab[3,1,2](o0), o1)");
        assert_eq!(g.eval(&[0, 1]).unwrap(), vec![3, 1]);
        assert!(map_of_gather(&s(&[4]), 0, &[4]).is_err());
    }

    #[test]
    fn broadcast_reads_unit_dims_at_zero() {
        let m = broadcast_map(&s(&[2, 1, 6]), &s(&[6])).unwrap();
        assert_eq!(m.to_string(), "in[d0] = (o2)");
        let m2 = broadcast_map(&s(&[4, 6]), &s(&[4, 1])).unwrap();
        assert_eq!(m2.eval(&[3, 5]).unwrap(), vec![3, 0]);
    }

    #[test]
    fn literal_form() {
        let m = map_of_reshape(&s(&[5, 5, 5]), &s(&[5, 25])).unwrap();
        assert_eq!(m.to_literal(), "{[5,25]->[5,5,5]: o0, o1//5, o1%5}");
    }
}
