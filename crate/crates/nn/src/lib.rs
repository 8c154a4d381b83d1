//! Small NCHW tensor toolkit with hand-written backward passes.
//!
//! Only the layers needed by U-Net style encoder-decoders are provided:
//! dense and depthwise convolutions, 2x2 transposed convolution, batch
//! normalization, ReLU/ReLU6, 2x2 max pooling and nearest upsampling.
//! Every layer has an immutable `forward` (inference) and a caching
//! `forward_train` / `backward` pair. Frozen parameters never receive
//! gradient buffers.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod conv_transpose;
pub mod param;
pub mod resample;
pub mod scalar;
pub mod tensor;

pub use activation::Activation;
pub use batchnorm::BatchNorm2d;
pub use conv::{Conv2d, Conv2dConfig};
pub use conv_transpose::ConvTranspose2x2;
pub use param::{Buffer, Module, Param};
pub use resample::{upsample_nearest2x, upsample_nearest2x_backward, MaxPool2x2};
pub use scalar::{matmul, Layout, Scalar};
pub use tensor::Tensor;
