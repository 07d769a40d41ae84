//! Patch-based convolutional encoder-decoder for full-scene segmentation.

mod loss;
mod model;
pub mod ops;
mod patches;
mod tensor;
mod train;

pub use loss::masked_cross_entropy;
pub use model::{
    softmax, unet_init, Architecture, ConvSpec, ForwardCache, Gradients, Mode, UNetConfig, UNetModel,
};
pub use patches::{extract_patches, stitch, PatchSet};
pub use tensor::{Scalar, Tensor4};
pub use train::{predict_patches, predict_scene, train_unet, write_loss_history};
