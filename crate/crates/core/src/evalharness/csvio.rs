use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One row per `(method, run, window_id)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutRow {
    pub method: String,
    pub run: String,
    pub window_id: usize,
    pub param_index: usize,
    pub k0: usize,
    pub horizon: usize,
    pub abs_mean: f64,
    pub abs_max: f64,
    pub abs_fin: f64,
    pub rel_mean: f64,
    pub rel_max: f64,
    pub rel_fin: f64,
    pub mse_fin: f64,
}

impl RolloutRow {
    pub fn metric(&self, name: &str) -> Result<f64> {
        Ok(match name {
            "abs_mean" => self.abs_mean,
            "abs_max" => self.abs_max,
            "abs_fin" => self.abs_fin,
            "rel_mean" => self.rel_mean,
            "rel_max" => self.rel_max,
            "rel_fin" => self.rel_fin,
            "mse_fin" => self.mse_fin,
            _ => return Err(Error::invalid(format!("unknown metric {name:?}"))),
        })
    }
}

/// One row per `(method, run, window_id, time_index)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntrinsicRow {
    pub method: String,
    pub run: String,
    pub window_id: usize,
    pub time_index: usize,
    pub dyn_sigma_max: f64,
    pub dyn_sigma_min: f64,
    pub dyn_cond: f64,
    pub dec_gain: f64,
    pub latent_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetRow {
    pub method: String,
    pub run: String,
    pub window_id: usize,
    pub time_index: usize,
    pub ambient_err: f64,
    pub recon_err: f64,
    pub latent_err: f64,
    pub gain: f64,
    pub bound: f64,
}

/// Empty `ci95`/`p_value`/`std` cells mark undefined statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub selection: String,
    pub horizon: usize,
    pub method: String,
    pub baseline: String,
    pub metric: String,
    pub n_pairs: usize,
    pub delta_mean: f64,
    pub std: Option<f64>,
    pub ci95: Option<f64>,
    pub p_value: Option<f64>,
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::invalid(format!("missing input {}", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|x| x.map_err(Error::from)).collect()
}
