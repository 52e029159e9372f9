pub mod assembler;
pub mod error;
pub mod export;
pub mod fixtures;
pub mod geometry;
pub mod inpaint;
pub mod linalg;
pub mod optimizer;
pub mod part_builder;
pub mod pipeline;
pub mod project;
pub mod synthetic;
pub mod texturer;

pub use error::{Error, Result};
