pub mod cloning;
pub mod dataset;
pub mod envs;
pub mod error;
pub mod graph;
pub mod independence;
pub mod masking;
pub mod rng;
pub mod scm;

pub use error::{Error, Result};
