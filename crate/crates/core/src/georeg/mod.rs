//! Decoder geometry regularizers: near-isometry (exact and Hutchinson),
//! directional gain, directional curvature, and Stiefel projection of the
//! first decoder convolution.
//!
//! Penalties are written once against [`Ops`] and act on a decoder given
//! as a [`LinearizableDecoder`], so the same code runs on constructed
//! linear test decoders and on the convolutional model, with values
//! (`Plain`) or with parameter gradients (`Tape`).

mod penalties;
mod stiefel;

pub use penalties::{
    curvature_penalty, curvature_sample, gain_penalty, gain_sample, iso_exact_sample, iso_hutchinson_sample,
    iso_penalty_exact, iso_penalty_hutchinson, ConvDecoder, LinearDecoder, LinearizableDecoder,
};
pub use stiefel::{orthonormality_residual, stiefel_project, EIGEN_FLOOR};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::{rng, Tensor};

/// Autoencoder training method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Vanilla,
    Isometry,
    Gain,
    Curvature,
    Stiefel,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Vanilla,
        Method::Isometry,
        Method::Gain,
        Method::Curvature,
        Method::Stiefel,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Vanilla => "vanilla",
            Method::Isometry => "isometry",
            Method::Gain => "gain",
            Method::Curvature => "curvature",
            Method::Stiefel => "stiefel",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown method {s:?}")))
    }

    /// Whether the method adds a loss penalty (Stiefel acts on weights).
    pub fn has_penalty(self) -> bool {
        matches!(self, Method::Isometry | Method::Gain | Method::Curvature)
    }

    /// Default penalty weight.
    pub fn default_weight(self) -> f64 {
        match self {
            Method::Isometry | Method::Gain => 0.1,
            Method::Curvature => 1.0,
            Method::Vanilla | Method::Stiefel => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegularizerConfig {
    pub method: Method,
    /// `λ_reg`, reached at the end of the ramp.
    pub weight: f64,
    /// Probe directions per latent point.
    pub probes: usize,
    /// One-sided finite-difference step of the gain penalty.
    pub eps_gain: f64,
    /// Basepoint shift of the curvature penalty.
    pub eps_curvature: f64,
    /// Target gain `α`.
    pub alpha: f64,
    /// Penalties see latents as constants (no encoder gradient).
    pub detach: bool,
    /// Stochastic isometry estimator instead of the 16-JVP exact Gram.
    pub hutchinson: bool,
}

impl RegularizerConfig {
    pub fn for_method(method: Method) -> Self {
        RegularizerConfig {
            method,
            weight: method.default_weight(),
            probes: 4,
            eps_gain: 1e-3,
            eps_curvature: 1e-2,
            alpha: 1.0,
            detach: true,
            hutchinson: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0) || !(self.eps_gain > 0.0) || !(self.eps_curvature > 0.0) || self.probes == 0 {
            return Err(Error::invalid(format!("invalid regularizer configuration {self:?}")));
        }
        Ok(())
    }

    /// Probe directions for one latent point: Rademacher for the
    /// Hutchinson estimator, uniform on the unit sphere otherwise.
    pub fn draw_probes(&self, stream: &mut rng::Stream, shape: &[usize]) -> Vec<Tensor> {
        let d: usize = shape.iter().product();
        (0..self.probes)
            .map(|_| {
                let v = if self.method == Method::Isometry && self.hutchinson {
                    rng::rademacher(stream, d)
                } else {
                    rng::unit_sphere(stream, d)
                };
                Tensor::new(shape.to_vec(), v).expect("probe shape")
            })
            .collect()
    }
}
