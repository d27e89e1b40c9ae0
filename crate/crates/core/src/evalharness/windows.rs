use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::fom::{Grid, Split};
use crate::ndnum::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplingConfig {
    /// Parameter indices drawn with replacement.
    pub n_mu: usize,
    /// Start indices drawn per sampled parameter.
    pub n_starts: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { n_mu: 100, n_starts: 10 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_id: usize,
    pub param_index: usize,
    pub k0: usize,
    pub horizon: usize,
    pub split: Split,
    pub grid: Grid,
}

/// Draws `n_mu · n_starts` windows whose starts satisfy `k0 + H ≤ k_max`,
/// where `k_max = n_time − 1` is the last stored index. Repeated
/// `(μ, k0)` pairs keep distinct ids.
pub fn sample_windows(
    split: Split,
    grid: Grid,
    n_param: usize,
    n_time: usize,
    horizon: usize,
    seed: u64,
    cfg: &SamplingConfig,
) -> Result<Vec<WindowSpec>> {
    if n_param == 0 || n_time == 0 {
        return Err(Error::invalid(format!("split {} has no data", split.name())));
    }
    if horizon == 0 || horizon > n_time - 1 {
        return Err(Error::invalid(format!(
            "horizon {horizon} does not fit the admissible segment of {n_time} indices"
        )));
    }
    if cfg.n_mu == 0 || cfg.n_starts == 0 {
        return Err(Error::invalid("sampling counts must be positive"));
    }
    let k_max = n_time - 1;
    let mut r = rng::stream(
        seed,
        &[rng::tag("windows"), rng::tag(split.name()), rng::tag(grid.name()), horizon as u64],
    );
    let mut out = Vec::with_capacity(cfg.n_mu * cfg.n_starts);
    for _ in 0..cfg.n_mu {
        let p = r.gen_range(0..n_param);
        for _ in 0..cfg.n_starts {
            out.push(WindowSpec {
                window_id: out.len(),
                param_index: p,
                k0: r.gen_range(0..=k_max - horizon),
                horizon,
                split,
                grid,
            });
        }
    }
    Ok(out)
}

/// SHA-256 of the spec list; equal digests mean identical windows.
pub fn windows_digest(specs: &[WindowSpec]) -> String {
    let mut h = Sha256::new();
    for s in specs {
        h.update(format!("{},{},{},{},{},{};", s.window_id, s.param_index, s.k0, s.horizon, s.split.name(), s.grid.name()));
    }
    hex::encode(h.finalize())
}
