//! Block autoencoder: stride-2 convolutional encoder, transposed-convolution
//! decoder with separate magnitude and sign heads, the rate-distortion
//! objective, and its training loop.

pub mod conv;
pub mod loss;
pub mod model;
pub mod network;
pub mod train;

pub use loss::{SignMask, TopologyMasks};
pub use model::Model;
pub use network::{Architecture, Decoded, Network};
pub use train::{lambda_schedule, train, LossTerms, TrainConfig, TrainReport, TrainingBlock};
