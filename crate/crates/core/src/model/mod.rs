//! Toy depth-enhancement network with prompt fusion, its loss, training and
//! pretrained-weight loading.

mod config;
mod loss;
mod net;
mod pretrained;
mod train;

pub use config::{Ablation, ModelConfig, D_MAX, D_MIN};
pub use loss::{loss, loss_and_grad};
pub use net::{apply_freeze, enhance, expected_names, init_params, ForwardCache, Model};
pub use pretrained::{load_checkpoint, load_pretrained, LoadReport, FUSION_PREFIX};
pub use train::{
    batch_gradients, pretrain_foundation, train, train_step, train_with, Example, Optimizer, OptimizerConfig,
    OptimizerKind, StepReport, TrainConfig,
};

/// Parameter naming scheme.
pub mod names {
    pub use super::net::{block, dec, down, enc_concat, enc_depth, enc_guidance, head, resample};
}
