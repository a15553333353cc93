//! Multimodal sentiment classification.
//!
//! Three modality encoders (video, audio, text) share one transformer
//! architecture. Their outputs are combined by majority vote over
//! per-modality predictions, by concatenating pooled states before a
//! classifier, or by an attention block over the pooled states. Everything,
//! including the autodiff, is implemented here on plain `Vec` storage.

pub mod cli;
pub mod data;
pub mod error;
pub mod experiment;
pub mod fusion;
pub mod kv;
pub mod params;
pub mod seed;
pub mod tensor;
pub mod training;
pub mod transformer;

pub use data::{Dataset, Modality, MultimodalSample, Sentiment};
pub use error::{Error, Result};
pub use fusion::{Approach, FusionMode, FusionModel, ModelConfig};
pub use tensor::{Scalar, Tape, Tensor, Var};

/// Negative, neutral, positive.
pub const NUM_CLASSES: usize = 3;
