//! Minimal dense-tensor kernel with reverse-mode automatic differentiation
//! and the RMSProp optimizer used by all training procedures.
//!
//! Everything is 64-bit floats on a single thread; forward passes are eager
//! and recorded on a tape ([`Graph`]), `backward` walks the tape in reverse.

mod checkpoint;
mod graph;
mod optim;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use graph::{Gradients, Graph, NodeId, LOG_CLAMP};
pub use optim::{Params, RmsProp};
pub use tensor::Tensor;
