#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

use layoutsmith::graph::{op_map, Op};
use layoutsmith::index::IndexMap;
use layoutsmith::interp::{kernels, DenseTensor};
use layoutsmith::shape::TensorShape;

pub fn random_shape(rng: &mut impl Rng, max_rank: usize, max_dim: usize, max_numel: usize) -> TensorShape {
    loop {
        let rank = rng.gen_range(1..=max_rank);
        let dims: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=max_dim)).collect();
        if dims.iter().product::<usize>() <= max_numel {
            return TensorShape::from_slice(&dims);
        }
    }
}

/// Random factorization of `n` into `rank` dims.
pub fn factorize(rng: &mut impl Rng, mut n: usize, rank: usize) -> Vec<usize> {
    let mut dims = Vec::with_capacity(rank);
    for _ in 1..rank {
        let divisors: Vec<usize> = (1..=n).filter(|d| n % d == 0).collect();
        let d = *divisors.choose(rng).unwrap();
        dims.push(d);
        n /= d;
    }
    dims.push(n);
    dims.shuffle(rng);
    dims
}

/// One random Reshape/Transpose/DepthToSpace/SpaceToDepth applicable to `s`.
pub fn random_movement(rng: &mut impl Rng, s: &TensorShape) -> Op {
    let d = s.dims();
    match rng.gen_range(0..4) {
        0 => {
            let rank = rng.gen_range(1..=6);
            Op::Reshape {
                shape: factorize(rng, s.numel(), rank),
            }
        }
        2 if s.rank() == 4 && d[1] % 4 == 0 => Op::DepthToSpace { block: 2 },
        3 if s.rank() == 4 && d[2] % 2 == 0 && d[3] % 2 == 0 => Op::SpaceToDepth { block: 2 },
        _ => {
            let mut perm: Vec<usize> = (0..s.rank()).collect();
            perm.shuffle(rng);
            Op::Transpose { perm }
        }
    }
}

/// Chain of 1..=4 movement ops from a random source shape, with the
/// composed map built without strength reduction.
pub fn random_chain(rng: &mut impl Rng, max_numel: usize) -> (TensorShape, Vec<Op>, IndexMap) {
    let src = if rng.gen_bool(0.4) {
        // rank 4 with even dims so the depth/space ops apply
        let dims: Vec<usize> = (0..4).map(|_| 2 * rng.gen_range(1..=5)).collect();
        TensorShape::from_slice(&dims)
    } else {
        random_shape(rng, 6, 8, max_numel)
    };
    let mut map = IndexMap::identity(&src);
    let mut ops = Vec::new();
    for _ in 0..rng.gen_range(1..=4) {
        let op = random_movement(rng, map.out_shape());
        let m = op_map(&op, map.out_shape(), false).unwrap().unwrap();
        map = IndexMap::compose(&m, &map).unwrap();
        ops.push(op);
    }
    (src, ops, map)
}

/// Applies movement ops directly to tensor data.
pub fn move_data(x: &DenseTensor, op: &Op) -> DenseTensor {
    match op {
        Op::Reshape { shape } => x.reshaped(TensorShape::from_slice(shape)),
        Op::Transpose { perm } => kernels::transpose(x, perm),
        Op::DepthToSpace { block } => kernels::depth_to_space(x, *block),
        Op::SpaceToDepth { block } => kernels::space_to_depth(x, *block),
        other => panic!("not a movement op: {other:?}"),
    }
}

/// Tensor whose every element holds its own flat index.
pub fn iota(shape: &TensorShape) -> DenseTensor {
    DenseTensor::new(shape.clone(), (0..shape.numel()).map(|i| i as f64).collect())
}
