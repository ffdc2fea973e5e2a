//! A small feed-forward inference engine with backpropagation and SGD.
//!
//! It serves as the default oracle, supplies exact input gradients for the
//! saliency and FGSM tooling, and trains the toy models used in experiments.

pub mod io;
mod layer;
mod model;
mod train;

pub use layer::{BatchNorm, Conv2d, Dense, Layer, MaxPool, Padding, ParamGrads, TensorShape};
pub use model::{arch, Model, ModelBuilder};
pub use train::{accuracy, train_toy, TrainConfig, TrainReport};
