//! From-scratch 3D UNet noise predictor: tensors, layers with reverse-mode
//! gradients, the network, training losses, AdamW, and checkpoints.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;
pub mod train;
pub mod unet;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint};
pub use loss::{grad_inpaint, grad_simple, loss_inpaint, loss_simple, Batch, InpaintLossMode};
pub use tensor::Tensor;
pub use train::{train, TrainConfig, TrainMode, TrainReport};
pub use unet::{DenoiserNet, ParamEntry, UNetConfig, UpMode};
