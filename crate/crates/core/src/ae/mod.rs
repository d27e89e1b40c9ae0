//! Convolutional autoencoder, its training objective and checkpoint format.

pub mod checkpoint;
pub mod loss;
pub mod model;

pub use checkpoint::Checkpoint;
pub use loss::{ae_loss, ae_loss_grad, anchor_field, anchor_loss, recon_mse, AeObjective, LossComponents};
pub use model::{
    decode, decode_plain, decode_traced, encode, encode_plain, AeParams, DecoderTrace, DecoderVars,
    EncoderVars, FIELD_DIM, FIELD_SHAPE, LATENT_DIM, LATENT_SHAPE,
};
