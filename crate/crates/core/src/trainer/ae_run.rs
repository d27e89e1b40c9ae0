use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Adam, AeTrainConfig, RunLayout};
use crate::ae::model::DECODER_FIRST_WEIGHT;
use crate::ae::{ae_loss_grad, loss::recon_mse, AeObjective, AeParams, Checkpoint};
use crate::error::{Error, Result};
use crate::fom::{Dataset, Grid, Split};
use crate::georeg::{orthonormality_residual, stiefel_project, Method, RegularizerConfig};
use crate::ndnum::{rng, Tensor};
use crate::trainer::layout::write_json;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeRunMeta {
    pub method: Method,
    pub seed: u64,
    pub dataset_sha256: String,
    pub config: AeTrainConfig,
    pub regularizer: RegularizerConfig,
    pub train_snapshots: usize,
    pub val_snapshots: usize,
    /// Mean training objective per epoch.
    pub train_curve: Vec<f64>,
    /// Validation reconstruction MSE per epoch.
    pub val_curve: Vec<f64>,
    pub penalty_calls: usize,
    pub projection_calls: usize,
    /// First-layer orthonormality residual per epoch (Stiefel runs only).
    pub stiefel_residuals: Vec<f64>,
}

/// Normalized coarse snapshots with `t ≤ T₁` for every parameter of a split.
pub(crate) fn snapshots(ds: &Dataset, split: Split) -> Result<Vec<Tensor>> {
    let a = ds.array(split, Grid::Coarse)?;
    let k1 = ds.manifest.coarse_t1_index();
    let norm = ds.norm();
    Ok((0..a.n_param)
        .flat_map(|p| (0..=k1).map(move |k| (p, k)))
        .map(|(p, k)| a.normalized(p, k, norm))
        .collect())
}

fn flat(p: &AeParams) -> Vec<Tensor> {
    p.encoder.iter().chain(&p.decoder).cloned().collect()
}

fn unflat(p: &mut AeParams, f: Vec<Tensor>) {
    let ne = p.encoder.len();
    let mut it = f.into_iter();
    p.encoder = it.by_ref().take(ne).collect();
    p.decoder = it.collect();
}

/// Trains one autoencoder, writing a checkpoint per epoch and `meta.json`
/// into `dir`.
pub fn train_ae(method: Method, seed: u64, ds: &Dataset, cfg: &AeTrainConfig, dir: &Path) -> Result<AeRunMeta> {
    RunLayout::ensure_fresh(dir)?;
    let train = snapshots(ds, Split::Train)?;
    let val = snapshots(ds, Split::Val)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("dataset has no training or validation snapshots"));
    }
    let reg = RegularizerConfig {
        probes: cfg.probes,
        ..RegularizerConfig::for_method(method)
    };
    let obj = AeObjective {
        reg,
        w_anc: cfg.w_anc,
        e_warm: cfg.e_warm,
        epochs: cfg.epochs,
        reg_subset: cfg.reg_subset,
    };
    let mut params = AeParams::init(seed);
    let mut opt = Adam::new(cfg.optimizer, &flat(&params));
    let mut meta = AeRunMeta {
        method,
        seed,
        dataset_sha256: ds.manifest.content_sha256.clone(),
        config: cfg.clone(),
        regularizer: reg,
        train_snapshots: train.len(),
        val_snapshots: val.len(),
        train_curve: Vec::new(),
        val_curve: Vec::new(),
        penalty_calls: 0,
        projection_calls: 0,
        stiefel_residuals: Vec::new(),
    };

    for epoch in 1..=cfg.epochs {
        let mut order = rng::stream(seed, &[rng::tag("ae-shuffle"), epoch as u64]);
        let perm = rng::permutation(&mut order, train.len());
        let mut total = 0.0;
        for (bi, idx) in perm.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<Tensor> = idx.iter().map(|&i| train[i].clone()).collect();
            let probe_seed = rng::derive(seed, &[rng::tag("ae-probe"), epoch as u64, bi as u64]);
            let (comps, grads) = ae_loss_grad(&params, &batch, epoch, &obj, probe_seed)
                .map_err(|e| diverged(e, method, seed, epoch))?;
            total += comps.total * batch.len() as f64;
            meta.penalty_calls += comps.penalty_calls;
            let mut f = flat(&params);
            opt.update(&mut f, &flat(&grads)).map_err(|e| diverged(e, method, seed, epoch))?;
            unflat(&mut params, f);
            if method == Method::Stiefel && epoch > cfg.e_warm {
                let w = &mut params.decoder[DECODER_FIRST_WEIGHT];
                *w = stiefel_project(w)?;
                meta.projection_calls += 1;
            }
        }
        let v = recon_mse(&params, &val)?;
        if !v.is_finite() {
            return Err(Error::numerical(
                "train_ae",
                format!("{} seed {seed}: validation loss diverged at epoch {epoch}", method.name()),
            ));
        }
        meta.train_curve.push(total / train.len() as f64);
        meta.val_curve.push(v);
        if method == Method::Stiefel {
            meta.stiefel_residuals.push(orthonormality_residual(&params.decoder[DECODER_FIRST_WEIGHT])?);
        }
        log::info!("ae {} seed {seed} epoch {epoch}: val {v:.4e}", method.name());
        Checkpoint {
            method: method.name().to_string(),
            seed,
            epoch: epoch as u32,
            arrays: params.named(),
            val_curve: meta.val_curve.clone(),
        }
        .save(&RunLayout::checkpoint(dir, epoch))?;
    }
    write_json(&RunLayout::meta(dir), &meta)?;
    Ok(meta)
}

fn diverged(e: Error, method: Method, seed: u64, epoch: usize) -> Error {
    match e {
        Error::Numerical { op, detail } => Error::numerical(
            op,
            format!("{detail} ({} seed {seed}, epoch {epoch})", method.name()),
        ),
        other => other,
    }
}
