use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalharness::SamplingConfig;
use crate::fom::{DatasetConfig, Grid, Split};
use crate::georeg::Method;
use crate::trainer::{read_json, write_json, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Best validation epoch with SWA over it and the two preceding epochs.
    BestValSwa,
    /// First epoch reaching a validation target shared within each AE seed.
    SharedTarget,
}

impl SelectionMode {
    pub const ALL: [SelectionMode; 2] = [SelectionMode::BestValSwa, SelectionMode::SharedTarget];

    pub fn name(self) -> &'static str {
        match self {
            SelectionMode::BestValSwa => "best-val-swa",
            SelectionMode::SharedTarget => "shared-target",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown selection mode {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub split: Split,
    pub grid: Grid,
    pub horizons: Vec<usize>,
    pub sampling: SamplingConfig,
    pub sampling_seed: u64,
    /// Leading windows (by id) that get intrinsic diagnostics.
    pub n_intr: usize,
    pub n_steps: usize,
    pub gain_iters: usize,
    pub baseline: Method,
    pub metrics: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub desk_scale: bool,
    pub master_seed: u64,
    pub dataset: DatasetConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn full(seed: u64) -> Self {
        RunConfig {
            desk_scale: false,
            master_seed: seed,
            dataset: DatasetConfig::full(seed),
            train: TrainConfig::full(),
            eval: EvalConfig {
                split: Split::Extrap,
                grid: Grid::Fine,
                horizons: vec![80, 160, 240, 320],
                sampling: SamplingConfig::default(),
                sampling_seed: seed,
                n_intr: 80,
                n_steps: 6,
                gain_iters: 50,
                baseline: Method::Vanilla,
                metrics: vec!["rel_mean".into(), "rel_max".into()],
            },
        }
    }

    pub fn desk(seed: u64) -> Self {
        RunConfig {
            desk_scale: true,
            master_seed: seed,
            dataset: DatasetConfig::desk(seed),
            train: TrainConfig::desk(),
            eval: EvalConfig {
                horizons: vec![10, 20, 30, 40],
                sampling: SamplingConfig { n_mu: 10, n_starts: 2 },
                n_intr: 4,
                gain_iters: 20,
                ..RunConfig::full(seed).eval
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.dataset.time.validate()?;
        self.dataset.splits.validate()?;
        let e = &self.eval;
        if e.horizons.is_empty() || e.horizons.contains(&0) {
            return Err(Error::invalid("evaluation horizons must be nonempty and positive"));
        }
        if e.n_steps == 0 || e.gain_iters == 0 {
            return Err(Error::invalid("intrinsic steps and gain iterations must be positive"));
        }
        if !self.train.methods.contains(&e.baseline) {
            return Err(Error::invalid(format!("baseline {} is not among the methods", e.baseline.name())));
        }
        let n_time = match e.grid {
            Grid::Fine => self.dataset.time.n_fine(),
            Grid::Coarse => self.dataset.time.n_coarse(),
        };
        if let Some(h) = e.horizons.iter().find(|&&h| h >= n_time) {
            return Err(Error::invalid(format!("horizon {h} exceeds the {n_time}-point evaluation grid")));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: RunConfig = read_json(path)?;
        c.validate()?;
        Ok(c)
    }
}

/// Paths inside a working directory.
#[derive(Clone, Debug)]
pub struct Workdir {
    pub root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Workdir { root: root.into() }
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn data(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn eval(&self, mode: SelectionMode) -> PathBuf {
        self.root.join("eval").join(mode.name())
    }
    pub fn eval_horizon(&self, mode: SelectionMode, h: usize) -> PathBuf {
        self.eval(mode).join(format!("H{h}"))
    }
    pub fn compare(&self, mode: SelectionMode) -> PathBuf {
        self.root.join("compare").join(mode.name())
    }
    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn load_config(&self) -> Result<RunConfig> {
        let p = self.config();
        if !p.exists() {
            return Err(Error::invalid(format!(
                "no configuration at {}; run `generate` first",
                p.display()
            )));
        }
        RunConfig::load(&p)
    }

    /// Stores `cfg`, refusing to replace a different existing config.
    pub fn store_config(&self, cfg: &RunConfig) -> Result<()> {
        cfg.validate()?;
        let p = self.config();
        if p.exists() {
            let old: RunConfig = read_json(&p)?;
            if &old != cfg {
                return Err(Error::invalid(format!(
                    "{} already holds a different configuration",
                    p.display()
                )));
            }
            return Ok(());
        }
        write_json(&p, cfg)
    }
}
