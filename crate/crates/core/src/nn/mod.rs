//! Minimal CPU network engine: explicit forward/backward layers over
//! im2col + GEMM, generic over `f32` (training) and `f64` (gradient checks).

mod layers;
mod optim;
mod scalar;
mod tensor;

pub(crate) use layers::conv_out;
pub use layers::{
    BatchNorm1d, Conv2d, ConvTranspose2d, Flatten, GlobalAvgPool, Layer, Linear, MaxPool2d, Param, Relu, RowNorm,
    Sequential, Unflatten,
};
pub use optim::Adam;
pub use scalar::{DType, Scalar};
pub use tensor::Tensor;
