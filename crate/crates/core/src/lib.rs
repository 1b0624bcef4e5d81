//! Temporally consistent video super-resolution on a small CPU tensor
//! engine.
//!
//! The network aligns neighbouring frames with a learned flow pyramid,
//! propagates a recurrent hidden state through the clip, stabilises the
//! features with spatial (position and channel) attention and temporal
//! self-attention over 3D patches, fuses the branches in a multi-scale
//! pyramid, refines, and upsamples with pixel shuffle.
//!
//! ```no_run
//! use tcvsr::{config::ModelConfig, data, model::TcNet};
//!
//! let hr = data::synth_sequence(data::Pattern::GradientNoise, &[(2.0, 1.0)], 4, 64, 64, 7)?;
//! let lr = data::degrade_sequence(&hr, data::DegradationKind::Bicubic, 4)?;
//! let model = TcNet::new(&ModelConfig::toy(), 0)?;
//! let sr = model.upscale(&lr)?;
//! assert_eq!(sr.frames[0].shape(), &[3, 64, 64]);
//! # Ok::<(), tcvsr::Error>(())
//! ```

pub mod ablation;
pub mod checks;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod flow;
pub mod fusion;
pub mod metrics;
pub mod model;
pub mod propagation;
pub mod stability;
pub mod train;

pub use error::{Error, Result};
pub use tcvsr_tensor as tensor;
