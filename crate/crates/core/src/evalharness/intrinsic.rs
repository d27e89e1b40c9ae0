use serde::{Deserialize, Serialize};

use super::model::{EvalData, RomModel};
use super::windows::WindowSpec;
use crate::error::{Error, Result};
use crate::ndnum::{svd_small, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRecord {
    pub window_id: usize,
    /// Step within the window, `1..=H`.
    pub time_index: usize,
    pub dyn_sigma_max: f64,
    pub dyn_sigma_min: f64,
    pub dyn_cond: f64,
    pub dec_gain: f64,
    pub latent_err: f64,
}

/// Terms of `‖u − û‖ ≤ ε_recon + L_D ‖z − ẑ‖` at one state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBudget {
    pub ambient_err: f64,
    pub recon_err: f64,
    pub latent_err: f64,
    /// Local gain at the predicted latent, standing in for `L_D`.
    pub gain: f64,
}

impl ErrorBudget {
    pub fn bound(&self) -> f64 {
        self.recon_err + self.gain * self.latent_err
    }
}

fn dist(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// `n_steps` roughly evenly spaced steps in `1..=H`, ending at `H`.
pub fn intrinsic_steps(horizon: usize, n_steps: usize) -> Vec<usize> {
    let mut out: Vec<usize> = (1..=n_steps)
        .map(|j| ((j * horizon) as f64 / n_steps as f64).round().max(1.0) as usize)
        .collect();
    out.dedup();
    out
}

/// Budget at true state `u` for predicted latent `z_pred`.
pub fn error_budget(model: &dyn RomModel, u: &Tensor, z_pred: &Tensor, gain_iters: usize) -> Result<ErrorBudget> {
    let z = model.encode(u)?;
    let gain = model.decoder_gain(z_pred, gain_iters)?;
    Ok(budget_with(model, u, &z, z_pred, gain)?)
}

fn budget_with(model: &dyn RomModel, u: &Tensor, z_true: &Tensor, z_pred: &Tensor, gain: f64) -> Result<ErrorBudget> {
    Ok(ErrorBudget {
        ambient_err: dist(u, &model.decode(z_pred)?),
        recon_err: dist(u, &model.decode(z_true)?),
        latent_err: dist(z_true, z_pred),
        gain,
    })
}

/// Dynamics-Jacobian spectrum, decoder gain, latent tracking error and
/// error budget at the intrinsic steps of one window.
pub fn intrinsic_diagnostics(
    spec: &WindowSpec,
    model: &dyn RomModel,
    data: &EvalData,
    n_steps: usize,
    gain_iters: usize,
) -> Result<Vec<(IntrinsicRecord, ErrorBudget)>> {
    let (p, k0, h) = (spec.param_index, spec.k0, spec.horizon);
    if h == 0 || p >= data.n_param() || k0 + h >= data.n_time() {
        return Err(Error::invalid(format!("window {} lies outside the data", spec.window_id)));
    }
    let mu = data.params[p];
    let times = &data.times[k0..=k0 + h];
    let z0 = model.encode(&data.snapshot(p, k0))?;
    let zs = model.rollout(&mu, &z0, times)?;
    intrinsic_steps(h, n_steps)
        .into_iter()
        .map(|i| {
            let z = &zs[i];
            let j = model.dynamics_jacobian(times[i], z, &mu)?;
            let (_, s, _) = svd_small(&j)?;
            let smax = s.iter().copied().fold(0.0, f64::max);
            let smin = s.iter().copied().fold(f64::INFINITY, f64::min);
            let u = data.snapshot(p, k0 + i);
            let z_true = model.encode(&u)?;
            let gain = model.decoder_gain(z, gain_iters)?;
            let budget = budget_with(model, &u, &z_true, z, gain)?;
            let rec = IntrinsicRecord {
                window_id: spec.window_id,
                time_index: i,
                dyn_sigma_max: smax,
                dyn_sigma_min: smin,
                dyn_cond: smax / (smin + 1e-12),
                dec_gain: gain,
                latent_err: budget.latent_err,
            };
            if ![rec.dyn_sigma_max, rec.dyn_cond, rec.dec_gain, rec.latent_err].iter().all(|v| v.is_finite()) {
                return Err(Error::numerical("intrinsic_diagnostics", format!("non-finite record at step {i}")));
            }
            Ok((rec, budget))
        })
        .collect()
}
