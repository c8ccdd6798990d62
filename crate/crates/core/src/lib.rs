#![no_std]
//! Graph convolution with spline-based Kolmogorov-Arnold layers.

extern crate alloc;

pub mod baselines;
pub mod error;
pub mod featsel;
pub mod gcn;
pub mod graph;
pub mod kan;
pub mod preprocess;
pub mod rng;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use tape::{grad_check, GradCheck, Gradients, Tape, Var};
pub use tensor::Tensor;
