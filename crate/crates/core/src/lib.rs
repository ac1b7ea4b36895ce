//! Learned conditional video coding: motion/occlusion estimation, conditional
//! residual coding, entropy coding and the surrounding training and
//! evaluation tooling.

pub mod checkpoint;
pub mod coder;
pub mod entropy;
pub mod error;
pub mod eval;
pub mod motion;
pub mod nets;
pub mod train;
pub mod video_io;

pub use error::{Error, Result};
pub use lvc_autodiff::{Tensor, Var};
