//! Hyena language model trained under a learned, teacher-guided loss weighting.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod dln;
pub mod error;
pub mod hyena;
pub mod mlp;
pub mod optim;
pub mod report;
pub mod teacher;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Array, Parameters, Scalar};
