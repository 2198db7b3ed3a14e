//! Phase-aware token mixing vision MLP on a small reverse-mode autodiff core.

pub mod blocks;
pub mod config;
pub mod error;
pub mod gradcheck;
pub mod model;
pub mod ops;
pub mod patm;
pub mod suite;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod wave;

pub use error::{Error, Result};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
