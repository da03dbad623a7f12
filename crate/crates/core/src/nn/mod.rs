//! Dense networks with analytic gradients, Adam, soft target updates and the
//! squashed Gaussian used by the soft actor-critic.

mod dist;
mod matrix;
mod mlp;
mod optim;

pub use dist::{
    squash_with_noise, squashed_gaussian_sample, squashed_grads, squashed_log_density,
    SquashedGrads, SquashedSample, LOG_STD_MAX, LOG_STD_MIN,
};
pub use matrix::Matrix;
pub use mlp::{sigmoid, Activation, GradientBuffer, Mlp, Tape};
pub use optim::{adam_step, binary_cross_entropy, polyak_update, AdamState, CROSS_ENTROPY_EPS};

use crate::label::PolicyLabel;

/// Cross-entropy of a controller prediction against a policy label
/// (label 1 is target 1.0, label 2 is target 0.0). Returns the loss and its
/// derivative with respect to the prediction.
pub fn cross_entropy(prediction: f64, label: PolicyLabel) -> (f64, f64) {
    binary_cross_entropy(prediction, label.target())
}
