//! Reference kernels. Reductions run sequentially in row-major order of the
//! reduced coordinates.

use super::tensor::DenseTensor;
use crate::graph::{ReduceFn, UnaryFn};
use crate::shape::TensorShape;

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn shape(dims: Vec<usize>) -> TensorShape {
    TensorShape::new(dims).expect("kernel shapes are validated by inference")
}

pub fn conv2d(x: &DenseTensor, w: &DenseTensor, b: Option<&DenseTensor>, stride: usize, pad: usize) -> DenseTensor {
    let [n, c, h, wd]: [usize; 4] = x.shape().dims().try_into().expect("rank 4");
    let [o, _, kh, kw]: [usize; 4] = w.shape().dims().try_into().expect("rank 4");
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    DenseTensor::from_fn(shape(vec![n, o, oh, ow]), |idx| {
        let (bn, co, y, xo) = (idx[0], idx[1], idx[2], idx[3]);
        let mut acc = 0.0;
        for ci in 0..c {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (y * stride + ky) as isize - pad as isize;
                    let ix = (xo * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy as usize >= h || ix as usize >= wd {
                        continue;
                    }
                    acc += x.get(&[bn, ci, iy as usize, ix as usize]) * w.get(&[co, ci, ky, kx]);
                }
            }
        }
        if let Some(b) = b {
            acc += b.get(&[co]);
        }
        acc
    })
}

/// Maps an output batch index onto an operand batch, right-aligned with
/// size-1 broadcast.
fn batch_index(out_batch: &[usize], operand_batch: &[usize]) -> Vec<usize> {
    let offset = out_batch.len() - operand_batch.len();
    operand_batch
        .iter()
        .enumerate()
        .map(|(k, &d)| if d == 1 { 0 } else { out_batch[offset + k] })
        .collect()
}

pub fn matmul(a: &DenseTensor, b: &DenseTensor, out_shape: &TensorShape) -> DenseTensor {
    let (ad, bd) = (a.shape().dims(), b.shape().dims());
    let k = ad[ad.len() - 1];
    let a_batch = &ad[..ad.len() - 2];
    let b_batch = &bd[..bd.len() - 2];
    let r = out_shape.rank();
    DenseTensor::from_fn(out_shape.clone(), |idx| {
        let batch = &idx[..r - 2];
        let (i, j) = (idx[r - 2], idx[r - 1]);
        let mut ai = batch_index(batch, a_batch);
        let mut bi = batch_index(batch, b_batch);
        ai.extend([i, 0]);
        bi.extend([0, j]);
        let (ap, bp) = (ai.len() - 1, bi.len() - 2);
        let mut acc = 0.0;
        for kk in 0..k {
            ai[ap] = kk;
            bi[bp] = kk;
            acc += a.get(&ai) * b.get(&bi);
        }
        acc
    })
}

/// Groups of flat indices: one group per coordinate of the kept dims, each
/// listing the reduced elements in row-major order.
fn groups(s: &TensorShape, axes: &[usize]) -> Vec<Vec<usize>> {
    let kept: Vec<usize> = (0..s.rank()).filter(|d| !axes.contains(d)).collect();
    let mut sorted_axes = axes.to_vec();
    sorted_axes.sort_unstable();
    let red_shape = shape(sorted_axes.iter().map(|&d| s.dim(d)).collect());
    let kept_iter: Vec<Vec<usize>> = if kept.is_empty() {
        vec![vec![]]
    } else {
        shape(kept.iter().map(|&d| s.dim(d)).collect()).indices().collect()
    };
    kept_iter
        .into_iter()
        .map(|k| {
            red_shape
                .indices()
                .map(|r| {
                    let mut full = vec![0; s.rank()];
                    for (&d, &v) in kept.iter().zip(&k) {
                        full[d] = v;
                    }
                    for (&d, &v) in sorted_axes.iter().zip(&r) {
                        full[d] = v;
                    }
                    s.linearize(&full)
                })
                .collect()
        })
        .collect()
}

pub fn layer_norm(x: &DenseTensor, axes: &[usize], scale: Option<&DenseTensor>, bias: Option<&DenseTensor>) -> DenseTensor {
    let mut out = DenseTensor::zeros(x.shape().clone());
    for g in groups(x.shape(), axes) {
        let n = g.len() as f64;
        let mean = g.iter().map(|&i| x.data()[i]).sum::<f64>() / n;
        let var = g.iter().map(|&i| (x.data()[i] - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        for &i in &g {
            out.data_mut()[i] = (x.data()[i] - mean) * inv;
        }
    }
    if let Some(s) = scale {
        let s = s.broadcast_to(x.shape());
        for (o, v) in out.data_mut().iter_mut().zip(s.data()) {
            *o *= v;
        }
    }
    if let Some(b) = bias {
        let b = b.broadcast_to(x.shape());
        for (o, v) in out.data_mut().iter_mut().zip(b.data()) {
            *o += v;
        }
    }
    out
}

pub fn softmax(x: &DenseTensor, axis: usize) -> DenseTensor {
    let mut out = DenseTensor::zeros(x.shape().clone());
    for g in groups(x.shape(), &[axis]) {
        let max = g.iter().map(|&i| x.data()[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for &i in &g {
            let e = (x.data()[i] - max).exp();
            out.data_mut()[i] = e;
            sum += e;
        }
        for &i in &g {
            out.data_mut()[i] /= sum;
        }
    }
    out
}

pub fn reduce(x: &DenseTensor, axes: &[usize], func: ReduceFn, out_shape: &TensorShape) -> DenseTensor {
    let data = groups(x.shape(), axes)
        .into_iter()
        .map(|g| {
            let vals = g.iter().map(|&i| x.data()[i]);
            match func {
                ReduceFn::Sum => vals.sum(),
                ReduceFn::Mean => vals.sum::<f64>() / g.len() as f64,
                ReduceFn::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    DenseTensor::new(out_shape.clone(), data)
}

pub fn unary(x: &DenseTensor, f: UnaryFn) -> DenseTensor {
    DenseTensor::new(x.shape().clone(), x.data().iter().map(|&v| f.apply(v)).collect())
}

pub fn add(a: &DenseTensor, b: &DenseTensor, out_shape: &TensorShape) -> DenseTensor {
    let (a, b) = (a.broadcast_to(out_shape), b.broadcast_to(out_shape));
    DenseTensor::new(
        out_shape.clone(),
        a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect(),
    )
}

pub fn transpose(x: &DenseTensor, perm: &[usize]) -> DenseTensor {
    let out = shape(perm.iter().map(|&p| x.shape().dim(p)).collect());
    let mut src = vec![0; perm.len()];
    DenseTensor::from_fn(out, |o| {
        for (j, &p) in perm.iter().enumerate() {
            src[p] = o[j];
        }
        x.get(&src)
    })
}

/// DCR ordering: channel `((h%b)*b + w%b)*C' + c` lands at `(c, h, w)`.
pub fn depth_to_space(x: &DenseTensor, b: usize) -> DenseTensor {
    let [n, c, h, w]: [usize; 4] = x.shape().dims().try_into().expect("rank 4");
    let co = c / (b * b);
    DenseTensor::from_fn(shape(vec![n, co, h * b, w * b]), |o| {
        let (bh, bw) = (o[2] % b, o[3] % b);
        x.get(&[o[0], (bh * b + bw) * co + o[1], o[2] / b, o[3] / b])
    })
}

pub fn space_to_depth(x: &DenseTensor, b: usize) -> DenseTensor {
    let [n, c, h, w]: [usize; 4] = x.shape().dims().try_into().expect("rank 4");
    DenseTensor::from_fn(shape(vec![n, c * b * b, h / b, w / b]), |o| {
        let block = o[1] / c;
        let (bh, bw) = (block / b, block % b);
        x.get(&[o[0], o[1] % c, o[2] * b + bh, o[3] * b + bw])
    })
}

pub fn slice(x: &DenseTensor, axis: usize, start: usize, end: usize, step: usize) -> DenseTensor {
    let mut dims = x.shape().dims().to_vec();
    dims[axis] = (end - start).div_ceil(step);
    DenseTensor::from_fn(shape(dims), |o| {
        let mut src = o.to_vec();
        src[axis] = start + step * o[axis];
        x.get(&src)
    })
}

pub fn gather(x: &DenseTensor, axis: usize, indices: &[usize]) -> DenseTensor {
    let mut dims = x.shape().dims().to_vec();
    dims[axis] = indices.len();
    DenseTensor::from_fn(shape(dims), |o| {
        let mut src = o.to_vec();
        src[axis] = indices[o[axis]];
        x.get(&src)
    })
}
