//! Parameter splits and min–max normalization.

use serde::{Deserialize, Serialize};

use super::mesh::{in_box, Param, P_HI, P_LO, P_TRAIN_HI, P_TRAIN_LO};
use crate::error::{Error, Result};
use crate::ndnum::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    /// Points per dimension of the train/val tensor grid over `P_train`.
    pub grid_points: usize,
    pub train_fraction: f64,
    /// Number of rejection-sampled parameters in `P \ P_train`.
    pub extrap_count: usize,
    /// Time markers as fractions of the final time.
    pub t1_fraction: f64,
    pub t2_fraction: f64,
}

impl SplitConfig {
    pub fn full() -> Self {
        SplitConfig {
            grid_points: 10,
            train_fraction: 0.8,
            extrap_count: 200,
            t1_fraction: 0.4,
            t2_fraction: 0.5,
        }
    }

    pub fn desk() -> Self {
        SplitConfig {
            grid_points: 3,
            extrap_count: 20,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.grid_points >= 2
            && self.train_fraction > 0.0
            && self.train_fraction < 1.0
            && 0.0 < self.t1_fraction
            && self.t1_fraction <= self.t2_fraction
            && self.t2_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("invalid split configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<Param>,
    pub val: Vec<Param>,
    pub interp: Vec<Param>,
    pub extrap: Vec<Param>,
    /// End of the training time window.
    pub t1: f64,
    pub t2: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn tensor_grid(axes: &[Vec<f64>; 3]) -> Vec<Param> {
    let mut out = Vec::new();
    for &a in &axes[0] {
        for &b in &axes[1] {
            for &c in &axes[2] {
                out.push([a, b, c]);
            }
        }
    }
    out
}

/// Train/val grid over `P_train`, shuffled 80/20; coordinate-wise
/// midpoints for interpolation; rejection samples in `P \ P_train` for
/// extrapolation.
pub fn build_splits(seed: u64, cfg: &SplitConfig, t_final: f64) -> Result<SplitSpec> {
    cfg.validate()?;
    let n = cfg.grid_points;
    let axes: [Vec<f64>; 3] = std::array::from_fn(|d| linspace(P_TRAIN_LO[d], P_TRAIN_HI[d], n));
    let grid = tensor_grid(&axes);
    let mut r = rng::stream(seed, &[rng::tag("split")]);
    let order = rng::permutation(&mut r, grid.len());
    let n_train = (grid.len() as f64 * cfg.train_fraction).round() as usize;
    let train = order[..n_train].iter().map(|&i| grid[i]).collect();
    let val = order[n_train..].iter().map(|&i| grid[i]).collect();

    let mids: [Vec<f64>; 3] = std::array::from_fn(|d| axes[d].windows(2).map(|w| 0.5 * (w[0] + w[1])).collect());
    let interp = tensor_grid(&mids);

    let mut r = rng::stream(seed, &[rng::tag("extrap")]);
    let mut extrap = Vec::with_capacity(cfg.extrap_count);
    while extrap.len() < cfg.extrap_count {
        let u = rng::uniform_vec(&mut r, 3, 0.0, 1.0);
        let mu: Param = std::array::from_fn(|d| P_LO[d] + (P_HI[d] - P_LO[d]) * u[d]);
        if !in_box(&mu, &P_TRAIN_LO, &P_TRAIN_HI) {
            extrap.push(mu);
        }
    }
    Ok(SplitSpec {
        train,
        val,
        interp,
        extrap,
        t1: cfg.t1_fraction * t_final,
        t2: cfg.t2_fraction * t_final,
    })
}

/// Min–max statistics mapping `[u_min_val, u_max_val]` onto `[-1, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub u_min_val: f64,
    pub u_max_val: f64,
}

impl NormStats {
    pub fn new(u_min_val: f64, u_max_val: f64) -> Result<Self> {
        if !(u_max_val - u_min_val >= 1e-12) {
            return Err(Error::invalid(format!(
                "degenerate normalization range [{u_min_val}, {u_max_val}]"
            )));
        }
        Ok(NormStats { u_min_val, u_max_val })
    }

    /// Statistics over every value of the given snapshots.
    pub fn from_values<'a>(snapshots: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in snapshots {
            for &v in s {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        Self::new(lo, hi)
    }

    pub fn normalize(&self, u: f64) -> f64 {
        2.0 * (u - self.u_min_val) / (self.u_max_val - self.u_min_val) - 1.0
    }

    pub fn denormalize(&self, x: f64) -> f64 {
        (x + 1.0) * 0.5 * (self.u_max_val - self.u_min_val) + self.u_min_val
    }

    pub fn normalize_field(&self, u: &[f64]) -> Vec<f64> {
        u.iter().map(|&v| self.normalize(v)).collect()
    }

    pub fn denormalize_field(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.denormalize(v)).collect()
    }
}
