//! Spiking neural networks built around the leaky integrate-and-fire-or-burst
//! (LIFB) neuron: tri-state `{0, 1, κ}` emissions with a learnable,
//! channel-shared burst intensity κ.

pub mod capacity;
pub mod checkpoint;
pub mod data;
pub mod decouple;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod error;
pub mod neuron;
pub mod ode;
pub mod ops;
pub mod svg;
pub mod train;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{GradPair, Tensor};
