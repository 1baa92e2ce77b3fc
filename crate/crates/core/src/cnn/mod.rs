//! Frame-wise convolutional encoder shared by all temporal heads.

pub mod batchnorm;
pub mod conv;
mod encoder;
pub mod pool;

pub use batchnorm::{BatchNorm, BatchNormCache, BN_EPS, BN_MOMENTUM};
pub use conv::conv2d_3x3;
pub use encoder::{BlockCache, ConvBlock, EncoderCache, EncoderConfig, FrameEncoder, Pooling};
pub use pool::{global_avg_pool, maxpool_2x2};
