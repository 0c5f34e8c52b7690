//! 3D convolutional network: architecture presets, forward and backward
//! passes, Adam, checkpoints and the training loop.

mod adam;
mod arch;
pub mod checkpoint;
mod conv;
mod network;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use arch::{Activation, ArchSpec, LayerSpec};
pub use checkpoint::Checkpoint;
pub use network::{
    backward, backward_scaled, forward, forward_tensor, forward_trace, infer, init_weights, mse,
    ConvWeights, NetworkWeights,
};
pub use tensor::{Real, Tensor4D};
pub use train::{
    evaluate, read_log, train, train_from, LogRow, TrainConfig, TrainOutcome, LOG_FILE, LOG_HEADER,
};
