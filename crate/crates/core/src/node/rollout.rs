use rayon::prelude::*;

use super::vector_field::{integrate, vector_field, VectorFieldParams, VfVars};
use crate::ae::model::{decode_traced, fault, AeParams, DecoderVars, FIELD_DIM, FIELD_SHAPE, LATENT_SHAPE};
use crate::ae::encode_plain;
use crate::error::{Error, Result};
use crate::fom::mesh::Param;
use crate::ndnum::{Ops, Plain, Tape, Tensor};

/// A training or validation window: normalized snapshots `u_0..u_ℓ` at
/// absolute times `t_0..t_ℓ`, with the frozen encoding of `u_0`.
#[derive(Clone, Debug)]
pub struct RolloutWindow {
    pub mu: Param,
    pub times: Vec<f64>,
    pub targets: Vec<Tensor>,
    pub z0: Tensor,
}

impl RolloutWindow {
    pub fn new(ae: &AeParams, mu: Param, times: Vec<f64>, targets: Vec<Tensor>) -> Result<Self> {
        let z0 = encode_plain(ae, targets.first().ok_or_else(|| Error::invalid("empty window"))?)?;
        Self::with_latent(mu, times, targets, z0)
    }

    /// Uses a precomputed `E(u_0)`.
    pub fn with_latent(mu: Param, times: Vec<f64>, targets: Vec<Tensor>, z0: Tensor) -> Result<Self> {
        if times.len() != targets.len() || times.is_empty() {
            return Err(Error::invalid(format!(
                "window has {} times and {} snapshots",
                times.len(),
                targets.len()
            )));
        }
        if targets.iter().any(|u| u.shape() != FIELD_SHAPE) || z0.shape() != LATENT_SHAPE {
            return Err(Error::invalid("window snapshot or latent has the wrong shape"));
        }
        Ok(RolloutWindow { mu, times, targets, z0 })
    }

    pub fn horizon(&self) -> usize {
        self.times.len() - 1
    }
}

/// Per-step reconstruction errors `(1/n) ‖D(ẑ_i) − u_i‖²`, `i = 0..ℓ`.
pub fn window_errors(ae: &AeParams, vf: &VectorFieldParams, w: &RolloutWindow) -> Result<Vec<f64>> {
    let mut b = Plain::new();
    let p = VfVars::from_flat(&vf.tensors);
    let mut f = |b: &mut Plain, t: f64, z: &Tensor| vector_field(b, &p, t, z, &w.mu);
    let states = integrate(&mut b, &mut f, &w.z0, &w.times)?;
    let dec = DecoderVars::from_flat(&ae.decoder);
    let errs = states
        .iter()
        .zip(&w.targets)
        .map(|(z, u)| {
            let tr = decode_traced(&mut b, &dec, z);
            let r = b.sub(&tr.output, u);
            r.dot(&r) / FIELD_DIM as f64
        })
        .collect();
    fault(&b)?;
    Ok(errs)
}

/// Mean over windows of the step-averaged rollout error.
pub fn rollout_loss(ae: &AeParams, vf: &VectorFieldParams, windows: &[RolloutWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::invalid("no rollout windows"));
    }
    let per: Vec<Result<f64>> = windows
        .par_iter()
        .map(|w| {
            let e = window_errors(ae, vf, w)?;
            Ok(e.iter().sum::<f64>() / e.len() as f64)
        })
        .collect();
    let mut s = 0.0;
    for v in per {
        s += v?;
    }
    Ok(s / windows.len() as f64)
}

/// Rollout loss and its gradient with respect to the vector field.
///
/// The autoencoder is frozen, so the cotangent of every latent state is
/// the exact decoder VJP of its residual; one reverse sweep through the
/// integrator then carries all of them back to the parameters. The first
/// state is the encoding of `u_0` and does not depend on the vector field.
pub fn rollout_loss_grad(
    ae: &AeParams,
    vf: &VectorFieldParams,
    windows: &[RolloutWindow],
) -> Result<(f64, VectorFieldParams)> {
    if windows.is_empty() {
        return Err(Error::invalid("no rollout windows"));
    }
    let nw = windows.len() as f64;
    let per: Vec<Result<(f64, Vec<Tensor>)>> = windows
        .par_iter()
        .map(|w| {
            let mut t = Tape::new();
            let vars: Vec<_> = vf.tensors.iter().map(|x| t.var(x.clone())).collect();
            let p = VfVars::from_flat(&vars);
            let z0 = t.constant(w.z0.clone());
            let mut f = |t: &mut Tape, time: f64, z: &_| vector_field(t, &p, time, z, &w.mu);
            let states = integrate(&mut t, &mut f, &z0, &w.times)?;
            let steps = states.len() as f64;
            let dec = DecoderVars::from_flat(&ae.decoder);
            let mut pb = Plain::new();
            let mut loss = 0.0;
            let mut seed = None;
            for (i, (z, u)) in states.iter().zip(&w.targets).enumerate() {
                let tr = decode_traced(&mut pb, &dec, t.value(*z));
                let r = pb.sub(&tr.output, u);
                loss += r.dot(&r) / FIELD_DIM as f64;
                if i == 0 {
                    continue;
                }
                let gr = pb.scale(&r, 2.0 / (FIELD_DIM as f64 * steps * nw));
                let gz = t.constant(tr.vjp(&mut pb, &dec, &gr));
                let term = t.dot(&gz, z);
                seed = Some(match seed {
                    None => term,
                    Some(acc) => t.add(&acc, &term),
                });
            }
            fault(&pb)?;
            let grads = match seed {
                Some(s) => {
                    let mut g = t.backward(s);
                    vars.iter().map(|&v| g.take(v)).collect()
                }
                None => vf.tensors.iter().map(|x| Tensor::zeros(x.shape())).collect(),
            };
            Ok((loss / steps, grads))
        })
        .collect();
    let mut total = 0.0;
    let mut grad = VectorFieldParams::zeros();
    for r in per {
        let (l, g) = r?;
        total += l;
        for (acc, gi) in grad.tensors.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    let total = total / nw;
    if !total.is_finite() {
        return Err(Error::numerical("rollout_loss", "non-finite rollout loss"));
    }
    Ok((total, grad))
}
