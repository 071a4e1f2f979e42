//! Inverse-graphics toolkit for virtual try-on.
//!
//! Two deterministic renderers (lipstick and hair color) are treated as
//! black boxes. A learned imitator approximates each renderer
//! differentiably, and an encoder maps a reference image back to renderer
//! parameters, trained through the frozen imitator.

pub mod checkpoint;
pub mod dataset;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod image;
pub mod imitator;
pub mod losses;
pub mod nets;
pub mod perceptual;
pub mod renderer;
pub mod sampler;
pub mod scene;
pub mod schema;

pub use error::{Error, Result};
