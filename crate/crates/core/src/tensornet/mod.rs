//! Minimal dense CHW tensor runtime: the handful of operators the ANN and SNN
//! stacks need, static op counting, and the portable weight container.

mod container;
mod conv;
mod ops;
mod tensor;

pub use container::{ContainerMetadata, ManifestEntry, WeightContainer, WEIGHT_MAGIC};
pub use conv::{conv2d, count_macs, Conv2d, ConvLayerSpec};
pub use ops::{
    add, avg_pool2, batch_norm_infer, concat_channels, leaky_relu, sigmoid, upsample_bilinear2,
    upsample_nearest2, BatchNorm, DEFAULT_BN_EPS, LEAKY_SLOPE,
};
pub use tensor::{Shape, Tensor};
