pub mod data;
pub mod diagnostics;
pub mod error;
pub mod graph;
pub mod kernel;
pub mod model;
pub mod predict;
pub mod presets;
pub mod sampler;

pub use error::{Error, Result};
