//! The 1-D CNN classifier: architecture, forward/backward passes, training
//! and full-precision checkpoints.

pub mod checkpoint;
pub mod network;
pub mod ops;
pub mod spec;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use network::{LayerParams, Network};
pub use ops::{argmax, cross_entropy, softmax, Gradients, Mode};
pub use spec::{default_ecgnet_spec, out_length, Activation, LayerKind, LayerSpec, NetworkSpec, Shape};
pub use train::{loss_and_gradient, mean_loss, train, Optimizer, TrainConfig, TrainReport};
