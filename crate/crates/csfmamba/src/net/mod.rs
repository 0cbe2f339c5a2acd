//! The two-branch CSFMamba classifier network.

mod config;
mod count;
mod extract;
mod model;
mod tokenize;

pub use config::ModelConfig;
pub use count::{conv2d_cost, conv3d_cost, count_params_flops, linear_cost, Budget};
pub use extract::{
    apply_bn_updates, hsi_extract, init_extractors, lidar_extract, BnUpdate, Mode, BN_MOMENTUM,
};
pub use model::{
    batch_loss, cross_entropy_mean, head_forward, init_model, model_forward, patch_batch,
    perturb_params, zero_based_labels, ForwardOutput,
};
pub use tokenize::{add_cls_pos, init_tokenizer, positional_table, tokenize};
