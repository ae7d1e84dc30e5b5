//! Minimal deterministic CNN: representation, forward inference, toy
//! training, serialization, and the conv-layer replacement surgery that
//! swaps one layer for its low-rank pair.

pub mod io;
mod network;
mod tensor;
mod toy;
mod train;

pub use network::{
    apply_layer, conv_forward, softmax, ConvLayer, Layer, Network, ShapeState,
};
pub use tensor::Tensor;
pub use toy::{gen_toy_dataset, ToyDataset};
pub use train::{accuracy, argmax, toy_cnn, train_toy};
