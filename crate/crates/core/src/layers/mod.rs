//! Forward and backward passes for each layer type and for the full stack.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod dropout;
pub mod network;
pub mod pool;
pub mod softmax;

pub use activation::{maxout, maxout2, prelu, relu, ActivationKind};
pub use conv::{conv2d_backward, conv2d_forward, ConvSpec, Padding};
pub use dense::{dense_backward, dense_forward, DenseSpec};
pub use dropout::{dropout, dropout_backward};
pub use network::{LayerTape, Mode, Network, NetworkTape};
pub use pool::{maxpool_freq, maxpool_freq_backward, PoolSpec};
pub use softmax::{log_softmax_backward, log_softmax_frames, softmax_frames};
