//! Domain-independent networks for turning Wi-Fi CSI images into human
//! skeleton images, trained adversarially so the learned features carry pose
//! but not subject identity.
//!
//! - [`tensor`], [`graph`]: dense tensors and reverse-mode differentiation
//! - [`model`]: feature extractor, generator, domain discriminator
//! - [`checkpoint`]: binary parameter files
//! - [`training`]: losses, Adam, the two-stage training loop
//! - [`synth`]: seeded subject-conditioned CSI/skeleton dataset
//! - [`eval`]: binarization and Percentage of Correct Skeletons

pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod graph;
mod kernels;
pub mod model;
pub mod synth;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Activation, Gradients, Graph, NodeId};
pub use model::{ModelConfig, ModelParams, Network};
pub use tensor::{Real, Tensor};
pub use training::{TrainConfig, Trainer};
