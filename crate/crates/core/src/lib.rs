//! Incremental dense 3D reconstruction from image sequences with a
//! two-tier spatial memory.

pub mod app;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod eval;
pub mod io;
pub mod memory;
pub mod model;
pub mod objective;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scenes;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use memory::{MemoryBank, MemoryConfig, ReadMode};
pub use model::{ConfidenceMap, Image, Model, ModelConfig, Pointmap, TokenGrid};
pub use tensor::Tensor;
