//! Two-stage training: autoencoder pretraining with ramped regularizers and
//! post-step Stiefel projection, then latent NODE training on frozen
//! autoencoders with paired initializations; checkpoint selection and SWA.

mod adam;
mod ae_run;
mod layout;
mod node_run;
mod select;

pub use adam::{Adam, OptimizerConfig};
pub use ae_run::{train_ae, AeRunMeta};
pub use layout::{read_json, write_json, RunLayout};
pub use node_run::{digest, train_node, NodeData, NodeRunMeta, NodeRunSpec, SeedPairing};
pub use select::{best_epoch, select_checkpoint_shared_target, shared_target, swa_average, swa_epochs, SwaPlan};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::georeg::Method;

/// `0` for `e ≤ e_warm`, then a linear ramp reaching `λ_reg` at `e = E`.
pub fn ramp_lambda(e: usize, e_warm: usize, epochs: usize, lambda: f64) -> Result<f64> {
    if e_warm >= epochs {
        return Err(Error::invalid(format!("warmup {e_warm} must be below the epoch budget {epochs}")));
    }
    if e > epochs {
        return Err(Error::invalid(format!("epoch {e} exceeds the budget {epochs}")));
    }
    if e <= e_warm {
        return Ok(0.0);
    }
    Ok(lambda * (e - e_warm) as f64 / (epochs - e_warm) as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub e_warm: usize,
    pub batch_size: usize,
    /// Penalty evaluated on the first `k` samples of each batch.
    pub reg_subset: Option<usize>,
    /// Probe directions per sample for the stochastic penalties.
    pub probes: usize,
    pub w_anc: f64,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Training windows drawn per epoch (with replacement).
    pub windows_per_epoch: usize,
    /// Window horizon on the coarse grid, for training and validation.
    pub horizon: usize,
    /// Evenly spaced validation starts per validation parameter.
    pub val_starts: usize,
    pub optimizer: OptimizerConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub methods: Vec<Method>,
    pub ae_seeds: Vec<u64>,
    pub node_seeds: Vec<u64>,
    pub ae: AeTrainConfig,
    pub node: NodeTrainConfig,
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            methods: Method::ALL.to_vec(),
            ae_seeds: vec![1, 2],
            node_seeds: (1..=16).collect(),
            ae: AeTrainConfig {
                epochs: 200,
                e_warm: 20,
                batch_size: 64,
                reg_subset: None,
                probes: 4,
                w_anc: 1.0,
                optimizer: OptimizerConfig::default(),
            },
            node: NodeTrainConfig {
                epochs: 50,
                batch_size: 16,
                windows_per_epoch: 1024,
                horizon: 40,
                val_starts: 4,
                optimizer: OptimizerConfig::default(),
            },
        }
    }

    /// Reduced budget that runs end to end on a workstation.
    pub fn desk() -> Self {
        TrainConfig {
            methods: Method::ALL.to_vec(),
            ae_seeds: vec![1, 2],
            node_seeds: (1..=4).collect(),
            ae: AeTrainConfig {
                epochs: 30,
                e_warm: 3,
                batch_size: 16,
                reg_subset: Some(4),
                probes: 1,
                w_anc: 1.0,
                optimizer: OptimizerConfig::default(),
            },
            node: NodeTrainConfig {
                epochs: 20,
                batch_size: 16,
                windows_per_epoch: 64,
                horizon: 4,
                val_starts: 2,
                optimizer: OptimizerConfig::default(),
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let a = &self.ae;
        let n = &self.node;
        if self.methods.is_empty() || self.ae_seeds.is_empty() || self.node_seeds.is_empty() {
            return Err(Error::invalid("method and seed lists must be nonempty"));
        }
        if a.e_warm >= a.epochs {
            return Err(Error::invalid("autoencoder warmup must be below the epoch budget"));
        }
        if a.batch_size == 0 || a.probes == 0 || a.reg_subset == Some(0) || !(a.w_anc >= 0.0) {
            return Err(Error::invalid("autoencoder batch size, probes and subset must be positive"));
        }
        if n.epochs == 0 || n.batch_size == 0 || n.windows_per_epoch == 0 || n.horizon == 0 || n.val_starts == 0 {
            return Err(Error::invalid("node epochs, batch, windows, horizon and validation starts must be positive"));
        }
        a.optimizer.validate()?;
        n.optimizer.validate()
    }
}
