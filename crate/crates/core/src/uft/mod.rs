//! Amortized unsupervised fine-tuning: a task encoder over the frozen
//! zero-shot logits trained to maximize `E_tau J^N + gamma * R`.

pub mod encoder;
pub mod estimator;
pub mod train;

pub use encoder::{tau_for_instance, EncoderKind, EncoderLayout, TaskEncoder, TaskEncoderParams};
pub use estimator::{
    estimate, exact_expected_objective, grad_low_variance, grad_naive_reinforce, EstimatorKind, GradientEstimate,
};
pub use train::{
    batch_gradient, normalized_prior_entropy, predict_all, summed_gradient_variance, train_uft, train_uft_with,
    OptimizerKind, TrainConfig, TrainRecord, TrainTrace, REMOTE_SCALE_LEARNING_RATE,
};
