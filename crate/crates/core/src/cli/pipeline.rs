use std::collections::BTreeMap;
use std::fs;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{RunConfig, SelectionMode, Workdir};
use crate::ae::{AeParams, Checkpoint};
use crate::error::{Error, Result};
use crate::evalharness::{
    intrinsic_diagnostics, paired_compare, read_csv, rollout_window, sample_windows, windows_digest, write_csv,
    BudgetRow, ComparisonRow, EvalData, IntrinsicRow, RolloutRow, TrainedRom, WindowSpec,
};
use crate::fom::{generate, Dataset, Manifest};
use crate::georeg::Method;
use crate::node::VectorFieldParams;
use crate::trainer::{
    read_json, select_checkpoint_shared_target, swa_average, train_ae, train_node, write_json, AeRunMeta, NodeData,
    NodeRunMeta, NodeRunSpec, RunLayout, SeedPairing,
};

/// Optional restriction of the jobs a command runs; empty lists mean "all
/// from the configuration".
#[derive(Clone, Debug, Default)]
pub struct JobFilter {
    pub methods: Vec<Method>,
    pub ae_seeds: Vec<u64>,
    pub node_seeds: Vec<u64>,
}

impl JobFilter {
    fn pick<T: Copy + PartialEq>(want: &[T], all: &[T], what: &str) -> Result<Vec<T>> {
        if want.is_empty() {
            return Ok(all.to_vec());
        }
        if want.iter().any(|w| !all.contains(w)) {
            return Err(Error::invalid(format!("requested {what} is not in the configuration")));
        }
        Ok(want.to_vec())
    }
}

pub fn cmd_generate(wd: &Workdir, cfg: &RunConfig) -> Result<Manifest> {
    wd.store_config(cfg)?;
    let dir = wd.data();
    if dir.join("manifest.json").exists() {
        let ds = Dataset::open(&dir)?;
        if ds.manifest.config != cfg.dataset {
            return Err(Error::invalid(format!("{} holds a dataset with another configuration", dir.display())));
        }
        ds.verify()?;
        log::info!("dataset already present at {}", dir.display());
        return Ok(ds.manifest);
    }
    generate(&cfg.dataset, &dir)
}

pub fn open_dataset(wd: &Workdir) -> Result<Dataset> {
    let ds = Dataset::open(&wd.data())?;
    ds.verify()?;
    Ok(ds)
}

fn clear_partial(dir: &std::path::Path) -> Result<bool> {
    if RunLayout::meta(dir).exists() {
        log::info!("{} is complete; skipping", dir.display());
        return Ok(false);
    }
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(true)
}

pub fn cmd_train_ae(wd: &Workdir, filter: &JobFilter) -> Result<()> {
    let cfg = wd.load_config()?;
    let ds = open_dataset(wd)?;
    let layout = RunLayout::new(wd.runs());
    let methods = JobFilter::pick(&filter.methods, &cfg.train.methods, "method")?;
    let seeds = JobFilter::pick(&filter.ae_seeds, &cfg.train.ae_seeds, "AE seed")?;
    let jobs: Vec<(Method, u64)> = methods.iter().flat_map(|&m| seeds.iter().map(move |&s| (m, s))).collect();
    jobs.par_iter()
        .map(|&(m, s)| {
            let dir = layout.ae_dir(m, s);
            if clear_partial(&dir)? {
                train_ae(m, s, &ds, &cfg.train.ae, &dir)?;
            }
            Ok(())
        })
        .collect::<Vec<Result<()>>>()
        .into_iter()
        .collect()
}

/// Per-method AE epochs for one AE seed, by the shared validation target.
pub fn ae_selection(wd: &Workdir, cfg: &RunConfig, ae_seed: u64) -> Result<BTreeMap<Method, usize>> {
    let layout = RunLayout::new(wd.runs());
    let mut curves = Vec::new();
    let mut missing = Vec::new();
    for &m in &cfg.train.methods {
        let p = RunLayout::meta(&layout.ae_dir(m, ae_seed));
        if p.exists() {
            let meta: AeRunMeta = read_json(&p)?;
            curves.push(meta.val_curve);
        } else {
            missing.push(format!("{}/ae{ae_seed}", m.name()));
        }
    }
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "autoencoder runs incomplete: {}; run train-ae first",
            missing.join(", ")
        )));
    }
    let epochs = select_checkpoint_shared_target(&curves, None)?;
    Ok(cfg.train.methods.iter().copied().zip(epochs).collect())
}

pub fn load_ae(wd: &Workdir, method: Method, ae_seed: u64, epoch: usize) -> Result<AeParams> {
    let dir = RunLayout::new(wd.runs()).ae_dir(method, ae_seed);
    AeParams::from_named(&Checkpoint::load(&RunLayout::checkpoint(&dir, epoch))?.arrays)
}

pub fn cmd_train_node(wd: &Workdir, filter: &JobFilter) -> Result<()> {
    let cfg = wd.load_config()?;
    let ds = open_dataset(wd)?;
    let layout = RunLayout::new(wd.runs());
    let methods = JobFilter::pick(&filter.methods, &cfg.train.methods, "method")?;
    let ae_seeds = JobFilter::pick(&filter.ae_seeds, &cfg.train.ae_seeds, "AE seed")?;
    let node_seeds = JobFilter::pick(&filter.node_seeds, &cfg.train.node_seeds, "node seed")?;
    let pairing = SeedPairing::new(&cfg.train.node_seeds);
    let hash = ds.manifest.content_sha256.clone();
    for &a in &ae_seeds {
        let sel = ae_selection(wd, &cfg, a)?;
        let groups: Vec<Method> = methods.clone();
        groups
            .par_iter()
            .map(|&m| {
                let pending: Vec<u64> = node_seeds
                    .iter()
                    .copied()
                    .filter(|&n| !RunLayout::meta(&layout.node_dir(m, a, n)).exists())
                    .collect();
                if pending.is_empty() {
                    return Ok(());
                }
                let ae_epoch = sel[&m];
                let ae = load_ae(wd, m, a, ae_epoch)?;
                let data = NodeData::prepare(&ds, &ae, &cfg.train.node)?;
                pending
                    .par_iter()
                    .map(|&n| {
                        let dir = layout.node_dir(m, a, n);
                        clear_partial(&dir)?;
                        let spec = NodeRunSpec {
                            method: m,
                            ae_seed: a,
                            ae_epoch,
                            node_seed: n,
                            dataset_sha256: &hash,
                        };
                        train_node(&spec, &ae, &data, pairing.get(n)?, &cfg.train.node, &dir).map(|_| ())
                    })
                    .collect::<Vec<Result<()>>>()
                    .into_iter()
                    .collect::<Result<()>>()
            })
            .collect::<Vec<Result<()>>>()
            .into_iter()
            .collect::<Result<()>>()?;
    }
    Ok(())
}

/// A completed NODE run and its metadata.
#[derive(Clone, Debug)]
pub struct NodeRun {
    pub method: Method,
    pub ae_seed: u64,
    pub node_seed: u64,
    pub meta: NodeRunMeta,
}

impl NodeRun {
    pub fn id(&self) -> String {
        run_id(self.ae_seed, self.node_seed)
    }
}

pub fn run_id(ae_seed: u64, node_seed: u64) -> String {
    format!("ae{ae_seed}-node{node_seed}")
}

/// Completed NODE runs in configuration order, plus the missing ones.
pub fn collect_node_runs(wd: &Workdir, cfg: &RunConfig) -> Result<(Vec<NodeRun>, Vec<String>)> {
    let layout = RunLayout::new(wd.runs());
    let mut done = Vec::new();
    let mut missing = Vec::new();
    for &m in &cfg.train.methods {
        for &a in &cfg.train.ae_seeds {
            for &n in &cfg.train.node_seeds {
                let p = RunLayout::meta(&layout.node_dir(m, a, n));
                if p.exists() {
                    done.push(NodeRun {
                        method: m,
                        ae_seed: a,
                        node_seed: n,
                        meta: read_json(&p)?,
                    });
                } else {
                    missing.push(format!("{}/{}", m.name(), run_id(a, n)));
                }
            }
        }
    }
    Ok((done, missing))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSelection {
    pub method: Method,
    pub run: String,
    pub ae_seed: u64,
    pub node_seed: u64,
    pub ae_epoch: usize,
    pub node_epochs: Vec<usize>,
    pub swa_fallback: bool,
    pub target: Option<f64>,
}

pub fn select_nodes(runs: &[NodeRun], mode: SelectionMode) -> Result<Vec<NodeSelection>> {
    let base = |r: &NodeRun| NodeSelection {
        method: r.method,
        run: r.id(),
        ae_seed: r.ae_seed,
        node_seed: r.node_seed,
        ae_epoch: r.meta.ae_epoch,
        node_epochs: r.meta.swa.epochs.clone(),
        swa_fallback: r.meta.swa.fallback,
        target: None,
    };
    match mode {
        SelectionMode::BestValSwa => Ok(runs.iter().map(base).collect()),
        SelectionMode::SharedTarget => {
            let mut out: Vec<NodeSelection> = runs.iter().map(base).collect();
            let mut by_ae: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
            for (i, r) in runs.iter().enumerate() {
                by_ae.entry(r.ae_seed).or_default().push(i);
            }
            for idx in by_ae.values() {
                let curves: Vec<Vec<f64>> = idx.iter().map(|&i| runs[i].meta.val_curve.clone()).collect();
                let target = crate::trainer::shared_target(&curves)?;
                let epochs = select_checkpoint_shared_target(&curves, Some(target))?;
                for (&i, e) in idx.iter().zip(epochs) {
                    out[i].node_epochs = vec![e];
                    out[i].swa_fallback = false;
                    out[i].target = Some(target);
                }
            }
            Ok(out)
        }
    }
}

fn load_node(wd: &Workdir, s: &NodeSelection) -> Result<VectorFieldParams> {
    let dir = RunLayout::new(wd.runs()).node_dir(s.method, s.ae_seed, s.node_seed);
    let snaps = s
        .node_epochs
        .iter()
        .map(|&e| Ok(VectorFieldParams::from_named(&Checkpoint::load(&RunLayout::checkpoint(&dir, e))?.arrays)?.tensors))
        .collect::<Result<Vec<_>>>()?;
    Ok(VectorFieldParams {
        tensors: swa_average(&snaps)?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRow {
    pub method: String,
    pub run: String,
    pub horizon: usize,
    pub window_id: usize,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub selection: SelectionMode,
    pub dataset_sha256: String,
    pub split: String,
    pub grid: String,
    pub horizons: Vec<usize>,
    pub windows_sha256: Vec<(usize, String)>,
    pub runs: Vec<NodeSelection>,
    pub incomplete: Vec<String>,
    pub failed_windows: usize,
}

#[derive(Serialize)]
struct WindowRow {
    window_id: usize,
    param_index: usize,
    k0: usize,
    horizon: usize,
    split: String,
    grid: String,
}

pub fn cmd_eval(wd: &Workdir, mode: SelectionMode) -> Result<EvalSummary> {
    let cfg = wd.load_config()?;
    let ds = open_dataset(wd)?;
    let e = &cfg.eval;
    let data = EvalData::load(&ds, e.split, e.grid)?;
    let (runs, incomplete) = collect_node_runs(wd, &cfg)?;
    if runs.is_empty() {
        return Err(Error::invalid("no completed NODE runs to evaluate"));
    }
    for m in &incomplete {
        log::warn!("incomplete run {m} skipped");
    }
    let selections = select_nodes(&runs, mode)?;
    let windows: Vec<Vec<WindowSpec>> = e
        .horizons
        .iter()
        .map(|&h| sample_windows(e.split, e.grid, data.n_param(), data.n_time(), h, e.sampling_seed, &e.sampling))
        .collect::<Result<_>>()?;

    let nh = e.horizons.len();
    let mut rollout: Vec<Vec<RolloutRow>> = vec![Vec::new(); nh];
    let mut intrinsic: Vec<Vec<IntrinsicRow>> = vec![Vec::new(); nh];
    let mut budget: Vec<Vec<BudgetRow>> = vec![Vec::new(); nh];
    let mut failures = Vec::new();
    for s in &selections {
        let model = TrainedRom {
            ae: load_ae(wd, s.method, s.ae_seed, s.ae_epoch)?,
            vf: load_node(wd, s)?,
        };
        let method = s.method.name().to_string();
        for (hi, specs) in windows.iter().enumerate() {
            let results: Vec<_> = specs.par_iter().map(|w| rollout_window(w, &model, &data)).collect();
            for (w, r) in specs.iter().zip(results) {
                match r {
                    Ok(m) => rollout[hi].push(RolloutRow {
                        method: method.clone(),
                        run: s.run.clone(),
                        window_id: w.window_id,
                        param_index: w.param_index,
                        k0: w.k0,
                        horizon: w.horizon,
                        abs_mean: m.abs_mean,
                        abs_max: m.abs_max,
                        abs_fin: m.abs_fin,
                        rel_mean: m.rel_mean,
                        rel_max: m.rel_max,
                        rel_fin: m.rel_fin,
                        mse_fin: m.mse_fin,
                    }),
                    Err(err) => {
                        log::warn!("{method} {} window {} failed: {err}", s.run, w.window_id);
                        failures.push(FailureRow {
                            method: method.clone(),
                            run: s.run.clone(),
                            horizon: w.horizon,
                            window_id: w.window_id,
                            reason: err.to_string(),
                        });
                    }
                }
            }
            let subset = &specs[..e.n_intr.min(specs.len())];
            let diag: Vec<_> = subset
                .par_iter()
                .map(|w| intrinsic_diagnostics(w, &model, &data, e.n_steps, e.gain_iters))
                .collect();
            for (w, r) in subset.iter().zip(diag) {
                match r {
                    Ok(recs) => {
                        for (rec, b) in recs {
                            intrinsic[hi].push(IntrinsicRow {
                                method: method.clone(),
                                run: s.run.clone(),
                                window_id: rec.window_id,
                                time_index: rec.time_index,
                                dyn_sigma_max: rec.dyn_sigma_max,
                                dyn_sigma_min: rec.dyn_sigma_min,
                                dyn_cond: rec.dyn_cond,
                                dec_gain: rec.dec_gain,
                                latent_err: rec.latent_err,
                            });
                            budget[hi].push(BudgetRow {
                                method: method.clone(),
                                run: s.run.clone(),
                                window_id: rec.window_id,
                                time_index: rec.time_index,
                                ambient_err: b.ambient_err,
                                recon_err: b.recon_err,
                                latent_err: b.latent_err,
                                gain: b.gain,
                                bound: b.bound(),
                            });
                        }
                    }
                    Err(err) => failures.push(FailureRow {
                        method: method.clone(),
                        run: s.run.clone(),
                        horizon: w.horizon,
                        window_id: w.window_id,
                        reason: format!("intrinsic: {err}"),
                    }),
                }
            }
        }
        log::info!("evaluated {method} {}", s.run);
    }

    let out = wd.eval(mode);
    for (hi, &h) in e.horizons.iter().enumerate() {
        let dir = wd.eval_horizon(mode, h);
        let wrows: Vec<WindowRow> = windows[hi]
            .iter()
            .map(|w| WindowRow {
                window_id: w.window_id,
                param_index: w.param_index,
                k0: w.k0,
                horizon: w.horizon,
                split: w.split.name().into(),
                grid: w.grid.name().into(),
            })
            .collect();
        write_csv(&dir.join("windows.csv"), &wrows)?;
        write_csv(&dir.join("rollout.csv"), &rollout[hi])?;
        write_csv(&dir.join("intrinsic.csv"), &intrinsic[hi])?;
        write_csv(&dir.join("budget.csv"), &budget[hi])?;
    }
    write_csv(&out.join("failures.csv"), &failures)?;
    let summary = EvalSummary {
        selection: mode,
        dataset_sha256: ds.manifest.content_sha256.clone(),
        split: e.split.name().into(),
        grid: e.grid.name().into(),
        horizons: e.horizons.clone(),
        windows_sha256: e.horizons.iter().copied().zip(windows.iter().map(|w| windows_digest(w))).collect(),
        runs: selections,
        incomplete,
        failed_windows: failures.len(),
    };
    write_json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

pub fn read_eval_summary(wd: &Workdir, mode: SelectionMode) -> Result<EvalSummary> {
    let p = wd.eval(mode).join("summary.json");
    if !p.exists() {
        return Err(Error::invalid(format!("no evaluation at {}; run eval first", p.display())));
    }
    read_json(&p)
}

/// Paired comparisons against the baseline for every method, metric and
/// horizon of one selection mode.
pub fn cmd_compare(
    wd: &Workdir,
    mode: SelectionMode,
    baseline: Option<Method>,
    metrics: &[String],
) -> Result<Vec<ComparisonRow>> {
    let cfg = wd.load_config()?;
    let summary = read_eval_summary(wd, mode)?;
    let baseline = baseline.unwrap_or(cfg.eval.baseline);
    let metrics: Vec<String> = if metrics.is_empty() { cfg.eval.metrics.clone() } else { metrics.to_vec() };
    let mut out = Vec::new();
    for &h in &summary.horizons {
        let rows: Vec<RolloutRow> = read_csv(&wd.eval_horizon(mode, h).join("rollout.csv"))?;
        let pick = |m: &str, metric: &str| -> Result<Vec<(String, usize, f64)>> {
            rows.iter()
                .filter(|r| r.method == m)
                .map(|r| Ok((r.run.clone(), r.window_id, r.metric(metric)?)))
                .collect()
        };
        if !rows.iter().any(|r| r.method == baseline.name()) {
            return Err(Error::invalid(format!(
                "baseline {} has no evaluation rows at H={h}",
                baseline.name()
            )));
        }
        for &m in cfg.train.methods.iter().filter(|&&m| m != baseline) {
            if !rows.iter().any(|r| r.method == m.name()) {
                log::warn!("{} has no evaluation rows at H={h}", m.name());
                continue;
            }
            for metric in &metrics {
                let c = paired_compare(m.name(), baseline.name(), metric, &pick(m.name(), metric)?, &pick(baseline.name(), metric)?)?;
                out.push(ComparisonRow {
                    selection: mode.name().into(),
                    horizon: h,
                    method: c.method,
                    baseline: c.baseline,
                    metric: c.metric,
                    n_pairs: c.run_deltas.len(),
                    delta_mean: c.delta_mean,
                    std: c.std,
                    ci95: c.ci95,
                    p_value: c.p_value,
                });
            }
        }
    }
    let dir = wd.compare(mode);
    write_csv(&dir.join("comparison.csv"), &out)?;
    let mut text = format!(
        "Paired differences Δ = ε({b}) − ε(method); positive means the method improves on {b}.\n",
        b = baseline.name()
    );
    for r in &out {
        let p = r.p_value.map_or("undefined".to_string(), |p| format!("{p:.4}"));
        let verdict = match r.p_value {
            Some(p) if p < 0.05 => "improves (p < 0.05)",
            Some(_) => "no significant improvement",
            None => "test undefined",
        };
        text.push_str(&format!(
            "H={} {} {}: Δ = {:+.4e} ± {}, p = {p}, {verdict}\n",
            r.horizon,
            r.method,
            r.metric,
            r.delta_mean,
            r.ci95.map_or("n/a".to_string(), |c| format!("{c:.2e}"))
        ));
    }
    fs::write(dir.join("significance.txt"), text).map_err(|e| Error::io(&dir, e))?;
    Ok(out)
}
