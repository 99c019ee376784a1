//! Symbolic index arithmetic: expressions, maps between tensor coordinate
//! spaces, reshape dependency analysis and strength reduction.

mod dependency;
mod expr;
mod map;
mod simplify;

pub use dependency::{classify_dependency, DependencyKind};
pub use expr::{IndexExpr, Interval};
pub use map::{
    broadcast_map, check_perm, depth_to_space_shape, gather_shape, map_of_depth_to_space,
    map_of_gather, map_of_reshape, map_of_slice, map_of_space_to_depth, map_of_transpose,
    relinearize, slice_shape, space_to_depth_shape, transpose_shape, IndexError, IndexMap,
};
pub use simplify::{strength_reduce, strength_reduce_counted};
