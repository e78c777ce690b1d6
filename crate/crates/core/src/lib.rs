pub mod cli;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod likelihood;
pub mod metrics;
pub mod model;
pub mod sampler;
pub mod spaces;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use likelihood::{LikelihoodConfig, LikelihoodMode};
pub use model::{Coefficients, QPolicy, Shape, ShapeModel};
