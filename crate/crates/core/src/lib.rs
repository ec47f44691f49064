//! Adaptive Domain Interest retrieval: a two-tower model for multi-domain
//! candidate retrieval, with the tensor engine, training loop, evaluation
//! and data tooling it needs.

pub mod ablation;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod model;
pub mod objective;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::Tensor;
