use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{best_epoch, swa_epochs, Adam, NodeTrainConfig, RunLayout, SwaPlan};
use crate::ae::{encode_plain, AeParams, Checkpoint};
use crate::error::{Error, Result};
use crate::fom::{Dataset, FieldArray, Grid, NormStats, Param, Split};
use crate::georeg::Method;
use crate::ndnum::{rng, Tensor};
use crate::node::{rollout_loss, rollout_loss_grad, RolloutWindow, VectorFieldParams};
use crate::trainer::layout::write_json;

/// NODE seed → initial vector-field parameters, shared by every method.
#[derive(Clone, Debug)]
pub struct SeedPairing {
    inits: BTreeMap<u64, VectorFieldParams>,
}

impl SeedPairing {
    pub fn new(seeds: &[u64]) -> Self {
        SeedPairing {
            inits: seeds.iter().map(|&s| (s, VectorFieldParams::init(s))).collect(),
        }
    }

    pub fn get(&self, seed: u64) -> Result<&VectorFieldParams> {
        self.inits
            .get(&seed)
            .ok_or_else(|| Error::invalid(format!("node seed {seed} is not in the pairing")))
    }
}

/// Frozen-encoder data for one autoencoder: training latents at every
/// admissible window start and the fixed validation windows.
pub struct NodeData {
    train: FieldArray,
    train_params: Vec<Param>,
    norm: NormStats,
    times: Vec<f64>,
    horizon: usize,
    /// `latents[p][k]` for starts `k ≤ max_start`.
    latents: Vec<Vec<Tensor>>,
    pub val_windows: Vec<RolloutWindow>,
}

impl NodeData {
    pub fn prepare(ds: &Dataset, ae: &AeParams, cfg: &NodeTrainConfig) -> Result<Self> {
        let time = ds.manifest.time();
        let n = time.n_coarse();
        let h = cfg.horizon;
        if h + 1 > n {
            return Err(Error::invalid(format!("horizon {h} exceeds the {n}-point coarse grid")));
        }
        let max_start = ds.manifest.coarse_t1_index().min(n - 1 - h);
        let times: Vec<f64> = (0..n).map(|k| time.coarse_time(k)).collect();
        let norm = *ds.norm();
        let train = ds.array(Split::Train, Grid::Coarse)?;
        let latents = (0..train.n_param)
            .into_par_iter()
            .map(|p| (0..=max_start).map(|k| encode_plain(ae, &train.normalized(p, k, &norm))).collect())
            .collect::<Result<Vec<Vec<Tensor>>>>()?;

        let val = ds.array(Split::Val, Grid::Coarse)?;
        let val_params = ds.manifest.params(Split::Val);
        let last = n - 1 - h;
        let starts: Vec<usize> = if cfg.val_starts == 1 {
            vec![0]
        } else {
            (0..cfg.val_starts)
                .map(|j| ((j * last) as f64 / (cfg.val_starts - 1) as f64).round() as usize)
                .collect()
        };
        let mut val_windows = Vec::new();
        for (p, mu) in val_params.iter().enumerate() {
            for &k0 in &starts {
                let targets: Vec<Tensor> = (k0..=k0 + h).map(|k| val.normalized(p, k, &norm)).collect();
                val_windows.push(RolloutWindow::new(ae, *mu, times[k0..=k0 + h].to_vec(), targets)?);
            }
        }
        if val_windows.is_empty() || train.n_param == 0 {
            return Err(Error::invalid("no training or validation windows"));
        }
        Ok(NodeData {
            train,
            train_params: ds.manifest.params(Split::Train).to_vec(),
            norm,
            times,
            horizon: h,
            latents,
            val_windows,
        })
    }

    fn window(&self, p: usize, k0: usize) -> Result<RolloutWindow> {
        let h = self.horizon;
        let targets = (k0..=k0 + h).map(|k| self.train.normalized(p, k, &self.norm)).collect();
        RolloutWindow::with_latent(
            self.train_params[p],
            self.times[k0..=k0 + h].to_vec(),
            targets,
            self.latents[p][k0].clone(),
        )
    }

    fn max_start(&self) -> usize {
        self.latents[0].len() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRunMeta {
    pub method: Method,
    pub ae_seed: u64,
    pub ae_epoch: usize,
    pub node_seed: u64,
    pub dataset_sha256: String,
    pub config: NodeTrainConfig,
    /// Digest of the initial parameters (identical across methods).
    pub init_sha256: String,
    /// Digest of the frozen autoencoder parameters, before and after.
    pub ae_sha256_before: String,
    pub ae_sha256_after: String,
    pub train_curve: Vec<f64>,
    pub val_curve: Vec<f64>,
    pub best_epoch: usize,
    pub swa: SwaPlan,
}

/// SHA-256 over names and little-endian values of named arrays.
pub fn digest(named: &[(String, Tensor)]) -> String {
    let mut h = Sha256::new();
    for (name, t) in named {
        h.update(name.as_bytes());
        for v in t.data() {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub struct NodeRunSpec<'a> {
    pub method: Method,
    pub ae_seed: u64,
    pub ae_epoch: usize,
    pub node_seed: u64,
    pub dataset_sha256: &'a str,
}

/// Trains one latent NODE on a frozen autoencoder, writing `epoch0.ckpt`
/// (the paired initialization), one checkpoint per epoch and `meta.json`.
pub fn train_node(
    spec: &NodeRunSpec,
    ae: &AeParams,
    data: &NodeData,
    init: &VectorFieldParams,
    cfg: &NodeTrainConfig,
    dir: &Path,
) -> Result<NodeRunMeta> {
    RunLayout::ensure_fresh(dir)?;
    let ae_before = digest(&ae.named());
    let save = |vf: &VectorFieldParams, epoch: usize, curve: &[f64]| -> Result<()> {
        Checkpoint {
            method: spec.method.name().to_string(),
            seed: spec.node_seed,
            epoch: epoch as u32,
            arrays: vf.named(),
            val_curve: curve.to_vec(),
        }
        .save(&RunLayout::checkpoint(dir, epoch))
    };
    save(init, 0, &[])?;

    let mut vf = init.clone();
    let mut opt = Adam::new(cfg.optimizer, &vf.tensors);
    let mut train_curve = Vec::new();
    let mut val_curve = Vec::new();
    let n_param = data.latents.len();
    let max_start = data.max_start();
    for epoch in 1..=cfg.epochs {
        // window draws depend on the seeds only, so every method sees the same windows
        let mut r = rng::stream(spec.node_seed, &[rng::tag("node-windows"), spec.ae_seed, epoch as u64]);
        let picks: Vec<(usize, usize)> = (0..cfg.windows_per_epoch)
            .map(|_| (r.gen_range(0..n_param), r.gen_range(0..=max_start)))
            .collect();
        let mut total = 0.0;
        for chunk in picks.chunks(cfg.batch_size) {
            let windows = chunk.iter().map(|&(p, k)| data.window(p, k)).collect::<Result<Vec<_>>>()?;
            let (loss, g) = rollout_loss_grad(ae, &vf, &windows).map_err(|e| diverged(e, spec, epoch))?;
            total += loss * windows.len() as f64;
            opt.update(&mut vf.tensors, &g.tensors).map_err(|e| diverged(e, spec, epoch))?;
        }
        let v = rollout_loss(ae, &vf, &data.val_windows).map_err(|e| diverged(e, spec, epoch))?;
        if !v.is_finite() {
            return Err(diverged(Error::numerical("train_node", "non-finite validation loss"), spec, epoch));
        }
        train_curve.push(total / picks.len() as f64);
        val_curve.push(v);
        log::info!(
            "node {} ae{} node{} epoch {epoch}: val {v:.4e}",
            spec.method.name(),
            spec.ae_seed,
            spec.node_seed
        );
        save(&vf, epoch, &val_curve)?;
    }
    let ae_after = digest(&ae.named());
    let best = best_epoch(&val_curve)?;
    let meta = NodeRunMeta {
        method: spec.method,
        ae_seed: spec.ae_seed,
        ae_epoch: spec.ae_epoch,
        node_seed: spec.node_seed,
        dataset_sha256: spec.dataset_sha256.to_string(),
        config: cfg.clone(),
        init_sha256: digest(&init.named()),
        ae_sha256_before: ae_before,
        ae_sha256_after: ae_after,
        train_curve,
        val_curve,
        best_epoch: best,
        swa: swa_epochs(best)?,
    };
    write_json(&RunLayout::meta(dir), &meta)?;
    Ok(meta)
}

fn diverged(e: Error, spec: &NodeRunSpec, epoch: usize) -> Error {
    match e {
        Error::Numerical { op, detail } => Error::numerical(
            op,
            format!(
                "{detail} ({} ae{} node{}, epoch {epoch})",
                spec.method.name(),
                spec.ae_seed,
                spec.node_seed
            ),
        ),
        other => other,
    }
}
