//! Binarized neural networks whose binary weight blocks carry learnable
//! affine supports `a * w + b`, together with a behavioral simulator of the
//! in-SRAM analog datapath that executes them.
//!
//! - [`data`]: MNIST IDX loading and deterministic batching
//! - [`layer`], [`network`]: supported binary layers, forward and backward
//! - [`loss`], [`optim`], [`train`]: cross-entropy, ADAM, the training loop
//! - [`checkpoint`]: the `SBNN` binary checkpoint format
//! - [`compression`]: support quantization and block pruning
//! - [`hwsim`]: DAC / bitcell / ADC simulation and Monte Carlo variation
//! - [`report`]: CSV output

pub mod checkpoint;
pub mod compression;
pub mod data;
pub mod error;
pub mod hwsim;
pub mod layer;
pub mod loss;
pub mod network;
pub mod optim;
pub mod report;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use layer::SupportedBinaryLayer;
pub use network::{Network, NetworkSpec};
pub use scalar::Scalar;

pub type Layer32 = SupportedBinaryLayer<f32>;
pub type Layer64 = SupportedBinaryLayer<f64>;
pub type Network32 = Network<f32>;
pub type Network64 = Network<f64>;
pub type Gradients32 = network::Gradients<f32>;
pub type Gradients64 = network::Gradients<f64>;
