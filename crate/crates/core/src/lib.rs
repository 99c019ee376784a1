pub mod classify;
pub mod elim;
pub mod fixtures;
pub mod graph;
pub mod index;
pub mod interp;
pub mod layout;
pub mod pipeline;
pub mod shape;
pub mod synth;
pub mod texture;
