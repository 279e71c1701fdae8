pub mod numerics;
pub mod entropy;
pub mod codec;
pub mod data;
pub mod training;
pub mod bitstream;
pub mod evaluation;
pub mod scenario;

/// Single-precision codec used for training and coding.
pub type Model32 = codec::Model<f32>;
/// Double-precision codec, for gradient checks.
pub type Model64 = codec::Model<f64>;
pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
