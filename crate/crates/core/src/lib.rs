//! Reduced-order modeling lab: a finite-element advection-diffusion-reaction
//! solver, convolutional autoencoders with decoder geometry regularizers,
//! latent neural ODEs, and a paired evaluation harness.

pub mod ae;
pub mod cli;
pub mod error;
pub mod evalharness;
pub mod fom;
pub mod georeg;
pub mod ndnum;
pub mod node;
pub mod trainer;

pub use error::{Error, Result};
