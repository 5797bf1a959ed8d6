//! Minimal double-precision neural-network substrate: tensors, a tape-based
//! reverse-mode autodiff graph, parameter storage, and transformer layers.

pub mod attention;
pub mod graph;
pub mod init;
pub mod layers;
pub mod params;
pub mod posenc;
pub mod tensor;

pub use attention::{AttnOutput, MultiHeadAttention};
pub use graph::{Graph, Var};
pub use layers::{FeedForward, LayerNorm, Linear};
pub use params::{BoundParams, ParamSet, PId};
pub use tensor::Tensor;
