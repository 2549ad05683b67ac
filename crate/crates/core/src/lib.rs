//! Byte-level text classification in the frequency domain.
//!
//! Raw UTF-8 bytes are encoded by circularly rotating one learnable
//! wavetable, filtered, phase-shifted and framed into hidden states, then
//! passed through four parallel token channels (gated linear recurrence with
//! a positional decay bias, depthwise-separable convolution, and two
//! interference channels) fused by energy-proportional mixing. Everything is
//! differentiated by the small tape engine in [`graph`].

pub mod bench;
pub mod broadcast;
pub mod channels;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod fft;
pub mod frontend;
pub mod gradcheck;
pub mod graph;
pub mod head;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use graph::{Graph, Var};
pub use tensor::{Real, Tensor};
