//! Differentiable miniature residual network.

mod checkpoint;
mod gradcheck;
mod layers;
mod loss;
mod model;
mod optim;
mod tensor;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, GradCheckReport};
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use model::{ForwardPass, Gradients, MiniResNet, MiniResNetConfig, Mode, Model};
pub use optim::{sgd_step, LrSchedule, OptState};
pub use tensor::{ParamSet, Tensor};
