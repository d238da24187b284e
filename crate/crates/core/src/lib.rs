pub mod behaviors;
pub mod dataset;
pub mod error;
pub mod harness;
pub mod inference;
pub mod model;
pub mod problems;
pub mod seed;
pub mod trainer;

pub use error::{Error, Result};
