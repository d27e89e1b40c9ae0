use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::georeg::Method;

/// `runs/<method>/ae<seed>/epoch<k>.ckpt` and
/// `runs/<method>/ae<seed>/node<seed>/epoch<k>.ckpt`, each run with a
/// `meta.json`.
#[derive(Clone, Debug)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        RunLayout { root: root.into() }
    }

    pub fn ae_dir(&self, method: Method, ae_seed: u64) -> PathBuf {
        self.root.join(method.name()).join(format!("ae{ae_seed}"))
    }

    pub fn node_dir(&self, method: Method, ae_seed: u64, node_seed: u64) -> PathBuf {
        self.ae_dir(method, ae_seed).join(format!("node{node_seed}"))
    }

    pub fn checkpoint(dir: &Path, epoch: usize) -> PathBuf {
        dir.join(format!("epoch{epoch}.ckpt"))
    }

    pub fn meta(dir: &Path) -> PathBuf {
        dir.join("meta.json")
    }

    /// Errors if `dir` already holds a finished run.
    pub fn ensure_fresh(dir: &Path) -> Result<()> {
        if Self::meta(dir).exists() {
            return Err(Error::invalid(format!(
                "run directory {} is already complete; remove it to retrain",
                dir.display()
            )));
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}
