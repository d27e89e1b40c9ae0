//! Autoencoder objective: reconstruction, anchor and ramped regularizer.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{constants, decode, encode, fault, AeParams, DecoderVars, EncoderVars, FIELD_DIM, FIELD_SHAPE, LATENT_SHAPE};
use crate::error::{Error, Result};
use crate::georeg::{
    curvature_sample, gain_sample, iso_exact_sample, iso_hutchinson_sample, ConvDecoder, Method, RegularizerConfig,
};
use crate::ndnum::{rng, Ops, Plain, Tape, Tensor};
use crate::trainer::ramp_lambda;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AeObjective {
    pub reg: RegularizerConfig,
    /// Weight of the anchor term.
    pub w_anc: f64,
    pub e_warm: usize,
    pub epochs: usize,
    /// Evaluate the penalty on the first `k` batch elements only (the batch
    /// is already shuffled); `None` uses the whole batch.
    pub reg_subset: Option<usize>,
}

impl AeObjective {
    pub fn lambda(&self, epoch: usize) -> Result<f64> {
        if !self.reg.method.has_penalty() {
            return Ok(0.0);
        }
        ramp_lambda(epoch, self.e_warm, self.epochs, self.reg.weight)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub mse: f64,
    pub anchor: f64,
    /// Unweighted penalty (zero when inactive).
    pub reg: f64,
    pub lambda: f64,
    pub total: f64,
    /// Per-sample penalty evaluations performed.
    pub penalty_calls: usize,
}

/// The constant minimum field `u_min = -1`.
pub fn anchor_field() -> Tensor {
    Tensor::full(&FIELD_SHAPE, -1.0)
}

fn recon_error<B: Ops>(b: &mut B, enc: &EncoderVars<B::V>, dec: &DecoderVars<B::V>, u: &B::V) -> Result<(B::V, B::V)> {
    let z = encode(b, enc, u)?;
    let r = decode(b, dec, &z)?;
    let e = b.sub(&r, u);
    let s = b.sum_sq(&e);
    Ok((b.scale(&s, 1.0 / FIELD_DIM as f64), z))
}

fn penalty<B: Ops>(b: &mut B, dec: &DecoderVars<B::V>, z: &B::V, cfg: &RegularizerConfig, probes: &[Tensor]) -> B::V {
    let z = if cfg.detach { b.constant(b.primal(z).clone()) } else { z.clone() };
    let d = ConvDecoder(dec);
    match cfg.method {
        Method::Isometry if cfg.hutchinson => iso_hutchinson_sample(b, &d, &z, probes),
        Method::Isometry => iso_exact_sample(b, &d, &z),
        Method::Gain => gain_sample(b, &d, &z, probes, cfg.alpha, cfg.eps_gain),
        Method::Curvature => curvature_sample(b, &d, &z, probes, cfg.eps_curvature),
        Method::Vanilla | Method::Stiefel => unreachable!("method without penalty"),
    }
}

/// `(1/n) ‖D(E(u_min)) − u_min‖²`.
pub fn anchor_loss(params: &AeParams) -> Result<f64> {
    let mut b = Plain::new();
    let enc = EncoderVars::from_flat(&params.encoder);
    let dec = DecoderVars::from_flat(&params.decoder);
    let (v, _) = recon_error(&mut b, &enc, &dec, &anchor_field())?;
    fault(&b)?;
    Ok(v.item())
}

struct Plan {
    lambda: f64,
    active: bool,
    n_reg: usize,
}

fn plan(params_batch: usize, epoch: usize, obj: &AeObjective) -> Result<Plan> {
    if params_batch == 0 {
        return Err(Error::invalid("empty batch"));
    }
    obj.reg.validate()?;
    let lambda = obj.lambda(epoch)?;
    let active = obj.reg.method.has_penalty() && lambda > 0.0;
    let n_reg = obj.reg_subset.unwrap_or(params_batch).clamp(1, params_batch);
    Ok(Plan { lambda, active, n_reg })
}

fn probes_for(obj: &AeObjective, probe_seed: u64, i: usize) -> Vec<Tensor> {
    let mut s = rng::stream(probe_seed, &[i as u64]);
    obj.reg.draw_probes(&mut s, &LATENT_SHAPE)
}

fn check_batch(batch: &[Tensor]) -> Result<()> {
    if let Some(u) = batch.iter().find(|u| u.shape() != FIELD_SHAPE) {
        return Err(Error::invalid(format!("batch field has shape {:?}", u.shape())));
    }
    Ok(())
}

/// Objective value on a batch at epoch `e` (1-based).
pub fn ae_loss(params: &AeParams, batch: &[Tensor], epoch: usize, obj: &AeObjective, probe_seed: u64) -> Result<LossComponents> {
    let p = plan(batch.len(), epoch, obj)?;
    check_batch(batch)?;
    let terms: Vec<Result<(f64, Option<f64>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut b = Plain::new();
            let enc = EncoderVars::from_flat(&params.encoder);
            let dec = DecoderVars::from_flat(&params.decoder);
            let (mse, z) = recon_error(&mut b, &enc, &dec, u)?;
            let pen = (p.active && i < p.n_reg).then(|| {
                let probes = probes_for(obj, probe_seed, i);
                penalty(&mut b, &dec, &z, &obj.reg, &probes).item()
            });
            fault(&b)?;
            Ok((mse.item(), pen))
        })
        .collect();
    let anchor = anchor_loss(params)?;
    combine(terms, anchor, &p, obj)
}

fn combine(terms: Vec<Result<(f64, Option<f64>)>>, anchor: f64, p: &Plan, obj: &AeObjective) -> Result<LossComponents> {
    let n = terms.len() as f64;
    let (mut mse, mut reg, mut calls) = (0.0, 0.0, 0);
    for t in terms {
        let (m, r) = t?;
        mse += m;
        if let Some(r) = r {
            reg += r;
            calls += 1;
        }
    }
    mse /= n;
    if calls > 0 {
        reg /= calls as f64;
    }
    let total = mse + p.lambda * reg + obj.w_anc * anchor;
    if !total.is_finite() {
        return Err(Error::numerical("ae_loss", "non-finite objective"));
    }
    Ok(LossComponents {
        mse,
        anchor,
        reg,
        lambda: p.lambda,
        total,
        penalty_calls: calls,
    })
}

fn param_vars(t: &mut Tape, ts: &[Tensor]) -> Vec<crate::ndnum::Var> {
    ts.iter().map(|x| t.var(x.clone())).collect()
}

/// Objective value and its gradient with respect to every parameter.
///
/// Each sample is differentiated on its own tape (in parallel); the
/// per-sample gradients are then summed in batch order, so the result does
/// not depend on the number of worker threads.
pub fn ae_loss_grad(
    params: &AeParams,
    batch: &[Tensor],
    epoch: usize,
    obj: &AeObjective,
    probe_seed: u64,
) -> Result<(LossComponents, AeParams)> {
    let p = plan(batch.len(), epoch, obj)?;
    check_batch(batch)?;
    let n = batch.len() as f64;
    let per_sample: Vec<Result<((f64, Option<f64>), Vec<Tensor>, Vec<Tensor>)>> = batch
        .par_iter()
        .enumerate()
        .map(|(i, u)| {
            let mut t = Tape::new();
            let ev = param_vars(&mut t, &params.encoder);
            let dv = param_vars(&mut t, &params.decoder);
            let enc = EncoderVars::from_flat(&ev);
            let dec = DecoderVars::from_flat(&dv);
            let uu = t.constant(u.clone());
            let (mse, z) = recon_error(&mut t, &enc, &dec, &uu)?;
            let mse_v = t.value(mse).item();
            let mut loss = t.scale(&mse, 1.0 / n);
            let mut pen_v = None;
            if p.active && i < p.n_reg {
                let probes = probes_for(obj, probe_seed, i);
                let pen = penalty(&mut t, &dec, &z, &obj.reg, &probes);
                pen_v = Some(t.value(pen).item());
                let w = t.scale(&pen, p.lambda / p.n_reg as f64);
                loss = t.add(&loss, &w);
            }
            if let Some(op) = t.fault() {
                return Err(Error::numerical(op, "non-finite value in autoencoder objective"));
            }
            let mut g = t.backward(loss);
            let ge = ev.iter().map(|&v| g.take(v)).collect();
            let gd = dv.iter().map(|&v| g.take(v)).collect();
            Ok(((mse_v, pen_v), ge, gd))
        })
        .collect();

    // anchor term on its own tape
    let mut t = Tape::new();
    let ev = param_vars(&mut t, &params.encoder);
    let dv = param_vars(&mut t, &params.decoder);
    let ua = t.constant(anchor_field());
    let (anc, _) = recon_error(
        &mut t,
        &EncoderVars::from_flat(&ev),
        &DecoderVars::from_flat(&dv),
        &ua,
    )?;
    let anchor = t.value(anc).item();
    let wa = t.scale(&anc, obj.w_anc);
    let mut ga = t.backward(wa);
    let mut grad = AeParams {
        encoder: ev.iter().map(|&v| ga.take(v)).collect(),
        decoder: dv.iter().map(|&v| ga.take(v)).collect(),
    };

    let mut terms = Vec::with_capacity(per_sample.len());
    for r in per_sample {
        let (vals, ge, gd) = r?;
        for (acc, g) in grad.encoder.iter_mut().zip(&ge) {
            acc.add_assign(g);
        }
        for (acc, g) in grad.decoder.iter_mut().zip(&gd) {
            acc.add_assign(g);
        }
        terms.push(Ok(vals));
    }
    let comps = combine(terms, anchor, &p, obj)?;
    Ok((comps, grad))
}

/// Mean reconstruction MSE over fields (validation metric).
pub fn recon_mse(params: &AeParams, fields: &[Tensor]) -> Result<f64> {
    if fields.is_empty() {
        return Err(Error::invalid("empty field set"));
    }
    check_batch(fields)?;
    let vals: Vec<Result<f64>> = fields
        .par_iter()
        .map(|u| {
            let mut b = Plain::new();
            let enc = EncoderVars::from_flat(&params.encoder);
            let dec = DecoderVars::from_flat(&params.decoder);
            let (m, _) = recon_error(&mut b, &enc, &dec, u)?;
            fault(&b)?;
            Ok(m.item())
        })
        .collect();
    let mut s = 0.0;
    for v in vals {
        s += v?;
    }
    Ok(s / fields.len() as f64)
}

/// Lifts plain parameter tensors into a backend as constants.
pub fn frozen<B: Ops>(b: &mut B, params: &AeParams) -> (EncoderVars<B::V>, DecoderVars<B::V>) {
    let e = constants(b, &params.encoder);
    let d = constants(b, &params.decoder);
    (EncoderVars::from_flat(&e), DecoderVars::from_flat(&d))
}
