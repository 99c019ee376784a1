use rand::Rng;

use crate::index::IndexMap;
use crate::shape::TensorShape;

/// Row-major f64 tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseTensor {
    shape: TensorShape,
    data: Vec<f64>,
}

impl DenseTensor {
    pub fn new(shape: TensorShape, data: Vec<f64>) -> Self {
        assert_eq!(shape.numel(), data.len(), "data length must match {shape}");
        DenseTensor { shape, data }
    }

    pub fn zeros(shape: TensorShape) -> Self {
        let n = shape.numel();
        DenseTensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn from_fn(shape: TensorShape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let data = shape.indices().map(|i| f(&i)).collect();
        DenseTensor { shape, data }
    }

    /// Uniform samples in `[-1, 1]`.
    pub fn random(shape: TensorShape, rng: &mut impl Rng) -> Self {
        let data = (0..shape.numel()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        DenseTensor { shape, data }
    }

    pub fn shape(&self) -> &TensorShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.shape.linearize(index)]
    }

    /// Same data under a new shape with equal element count.
    pub fn reshaped(&self, shape: TensorShape) -> Self {
        DenseTensor::new(shape, self.data.clone())
    }

    /// `out[o] = self[map(o)]` over the map's output domain.
    pub fn gather(&self, map: &IndexMap) -> Self {
        assert_eq!(map.in_shape(), &self.shape, "map reads a different shape");
        let out_shape = map.out_shape().clone();
        let mut vars = vec![0i64; out_shape.rank()];
        let mut src = vec![0usize; self.shape.rank()];
        let data = out_shape
            .indices()
            .map(|o| {
                for (v, &x) in vars.iter_mut().zip(&o) {
                    *v = x as i64;
                }
                map.eval_into(&vars, &mut src);
                self.get(&src)
            })
            .collect();
        DenseTensor { shape: out_shape, data }
    }

    /// Reads `self` broadcast (right-aligned) to `target`.
    pub fn broadcast_to(&self, target: &TensorShape) -> Self {
        if &self.shape == target {
            return self.clone();
        }
        let offset = target.rank() - self.shape.rank();
        let dims = self.shape.dims().to_vec();
        DenseTensor::from_fn(target.clone(), |o| {
            let idx: Vec<usize> = dims
                .iter()
                .enumerate()
                .map(|(k, &d)| if d == 1 { 0 } else { o[offset + k] })
                .collect();
            self.get(&idx)
        })
    }
}
