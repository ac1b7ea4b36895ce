//! Reverse-mode automatic differentiation over NCHW `f64` tensors.
//!
//! Just enough machinery to train convolutional transform-coding networks on
//! a CPU: a recording [`Graph`], constant-or-tracked [`Var`] handles,
//! elementwise/layout ops, and im2col convolutions. Custom ops plug in
//! through [`Var::apply`].

mod conv;
mod graph;
mod ops;
mod tensor;

pub mod gradcheck;

pub use conv::ConvGeom;
pub use graph::{BackwardFn, Gradients, Graph, Var};
pub use ops::{sigmoid, softplus};
pub use tensor::{broadcast_shape, broadcast_zip, numel, sum_to, Shape, Tensor};
