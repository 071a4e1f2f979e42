//! A small CPU tensor library: reverse-mode autodiff with support for
//! gradients of gradients, im2col convolutions, a handful of layers and Adam.
//!
//! Everything is single-threaded and runs in a fixed order so repeated runs
//! are bit-identical.

pub mod conv;
pub mod graph;
pub mod io;
pub mod nn;
pub mod ops;
pub mod optim;
pub mod tensor;

pub use conv::{ConvGeom, Padding};
pub use graph::{grad, grad_tensors, is_grad_enabled, no_grad, Backward, Var};
pub use nn::{Bound, ParamId, ParamStore};
pub use optim::{Adam, AdamConfig};
pub use tensor::Tensor;
