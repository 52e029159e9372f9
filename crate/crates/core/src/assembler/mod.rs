//! Placing parts in depth, transferring textures between parts and merging
//! everything into one closed mesh.

pub mod idsc;
pub mod merge;
pub mod position;
pub mod transfer;
