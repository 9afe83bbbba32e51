//! Dense network engine: parameters, forward pass with class and one-vs-all
//! heads, reverse-mode gradients, SGD and the learning-rate schedule.

pub mod forward;
pub mod grad;
pub mod optim;
pub mod params;

pub use forward::{backward, forward, forward_trace, softmax, Prediction, Trace};
pub use grad::{finite_diff_grad, grad, max_relative_error, FlatGradient, Objective};
pub use optim::{cosine_lr, sgd_step, Velocity};
pub use params::{
    init_mlp, CheckpointMeta, DenseBlock, Layout, ModelParams, FLAT_ORDERING_VERSION,
};
