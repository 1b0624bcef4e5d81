//! Dense CPU tensors with a reverse-mode gradient tape.
//!
//! The op set is exactly what the video super-resolution network needs:
//! convolution and transposed convolution, matrix products, row softmax and
//! fused attention, pixel shuffle, bilinear warping, 2× pooling/upsampling
//! and the Charbonnier loss. Training runs in `f32`; gradient checks run the
//! same code in `f64`.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod io;
pub mod kernels;
pub mod nn;
mod ops;
pub mod optim;
pub mod rng;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use kernels::conv::PaddingMode;
pub use nn::{
    resblocks_forward, Binding, Builder, Conv2d, ConvTranspose2d, Init, Linear, ParamGroup, ParamId, ParamStore, ResBlock,
    LEAKY_SLOPE,
};
pub use optim::{adam_update, cosine_lr, AdamConfig, AdamState};
pub use rng::RngState;
pub use scalar::Real;
pub use tensor::Tensor;
