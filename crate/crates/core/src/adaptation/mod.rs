//! Pseudo-label finetuning of a feature head, checkpoint averaging, and
//! adapted-feature extraction.

mod finetune;
mod head;
mod optim;

pub use finetune::{
    average_checkpoints, average_heads, cross_entropy_grad, cross_entropy_loss, extract_features,
    finetune_head, hidden_matrix, AdaptConfig, CheckpointSet,
};
pub(crate) use finetune::widen;
pub use head::{argmax, log_sum_exp, softmax, ClusterHead, RowCache};
pub use optim::{Adam, AdamParams, CosineSchedule};
