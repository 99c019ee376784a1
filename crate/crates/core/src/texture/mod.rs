//! 2.5D texture placement, cache model and access simulation.

mod cache;
mod mapping;
mod sim;

pub use cache::{CacheConfig, CacheModel, TEXEL_BYTES};
pub use mapping::{map_to_texture, Axis, TexelCoord, TextureError, TextureLayout, MAX_EXTENT};
pub use sim::{simulate, AccessKind, AccessTrace, NodeSim, SimError, SimOptions, SimReport, TraceEntry};
