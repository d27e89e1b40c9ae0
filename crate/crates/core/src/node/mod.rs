//! Latent dynamics: vector-field perceptron, RK2 Ralston integration on
//! absolute time grids, and the rollout loss through a frozen autoencoder.

mod rollout;
mod vector_field;

pub use rollout::{rollout_loss, rollout_loss_grad, window_errors, RolloutWindow};
pub use vector_field::{
    integrate, integrate_plain, mu_features, rk2_ralston_step, vector_field, vector_field_plain, vf_jacobian,
    VectorFieldParams, VfVars, HIDDEN, INPUT_DIM,
};
