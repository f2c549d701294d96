//! Minimal deterministic dense-network engine.

mod model;
mod optim;
mod tensor;

pub use model::{
    cross_entropy, log_prob, softmax, weighted_ce_logit_grad, Affine, Forward, Gradients, Model,
    ModelConfig, OutputGrad, LOG_PROB_FLOOR, SPHERE_EPS,
};
pub use optim::{CosineSchedule, OptimizerState};
pub use tensor::Tensor;

pub(crate) use tensor::{argmax, dot, squared_distance};
