use serde::{Deserialize, Serialize};

use super::model::{EvalData, RomModel};
use super::windows::WindowSpec;
use crate::error::{Error, Result};
use crate::ndnum::Tensor;

/// Denominator guard of the relative errors.
pub const REL_EPS: f64 = 1e-8;

/// Error of one rollout step: `‖e_i‖`, `‖u_i‖` and `‖e_i‖²/n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepError {
    pub e_norm: f64,
    pub u_norm: f64,
    pub mse: f64,
}

impl StepError {
    pub fn between(pred: &Tensor, truth: &Tensor) -> Self {
        let e2: f64 = pred.data().iter().zip(truth.data()).map(|(a, b)| (a - b) * (a - b)).sum();
        StepError {
            e_norm: e2.sqrt(),
            u_norm: truth.norm(),
            mse: e2 / truth.len() as f64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutMetrics {
    pub abs_mean: f64,
    pub abs_max: f64,
    pub abs_fin: f64,
    pub rel_mean: f64,
    pub rel_max: f64,
    pub rel_fin: f64,
    pub mse_fin: f64,
}

impl RolloutMetrics {
    /// Metrics over steps `i = 1..H` (the initial point is not included).
    pub fn from_steps(steps: &[StepError]) -> Result<Self> {
        let last = steps.last().ok_or_else(|| Error::invalid("no rollout steps"))?;
        let h = steps.len() as f64;
        let rel = |s: &StepError| s.e_norm / (s.u_norm + REL_EPS);
        let m = RolloutMetrics {
            abs_mean: steps.iter().map(|s| s.e_norm).sum::<f64>() / h,
            abs_max: steps.iter().map(|s| s.e_norm).fold(0.0, f64::max),
            abs_fin: last.e_norm,
            rel_mean: steps.iter().map(rel).sum::<f64>() / h,
            rel_max: steps.iter().map(rel).fold(0.0, f64::max),
            rel_fin: rel(last),
            mse_fin: last.mse,
        };
        if ![m.abs_mean, m.abs_max, m.rel_mean, m.rel_max, m.mse_fin].iter().all(|v| v.is_finite()) {
            return Err(Error::numerical("rollout_metrics", "non-finite rollout error"));
        }
        Ok(m)
    }
}

/// Encodes `u_0`, integrates on the window's absolute times, decodes and
/// compares with the normalized ground truth.
pub fn rollout_window(spec: &WindowSpec, model: &dyn RomModel, data: &EvalData) -> Result<RolloutMetrics> {
    let (k0, h) = (spec.k0, spec.horizon);
    if h == 0 || spec.param_index >= data.n_param() || k0 + h >= data.n_time() {
        return Err(Error::invalid(format!("window {} lies outside the data", spec.window_id)));
    }
    let mu = data.params[spec.param_index];
    let z0 = model.encode(&data.snapshot(spec.param_index, k0))?;
    let zs = model.rollout(&mu, &z0, &data.times[k0..=k0 + h])?;
    let steps = (1..=h)
        .map(|i| {
            let pred = model.decode(&zs[i])?;
            Ok(StepError::between(&pred, &data.snapshot(spec.param_index, k0 + i)))
        })
        .collect::<Result<Vec<_>>>()?;
    RolloutMetrics::from_steps(&steps)
}
