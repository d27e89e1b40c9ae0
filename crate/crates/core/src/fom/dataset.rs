//! On-disk dataset container: `manifest.json` plus one `ADRD` array per
//! split and time grid, holding raw `f32` snapshots `[n_param, n_time, 1, 32, 32]`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::mesh::{MeshP1, Param};
use super::solver::{simulate, TimeConfig, Trajectory};
use super::splits::{build_splits, NormStats, SplitConfig, SplitSpec};
use crate::error::{Error, Result};
use crate::ndnum::Tensor;

pub const ARRAY_MAGIC: &[u8; 4] = b"ADRD";
pub const ARRAY_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const MESH_SUBDIVISIONS: usize = 31;
pub const SIDE: usize = MESH_SUBDIVISIONS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Interp,
    Extrap,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Val, Split::Interp, Split::Extrap];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Interp => "interp",
            Split::Extrap => "extrap",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    Fine,
    Coarse,
}

impl Grid {
    pub fn name(self) -> &'static str {
        match self {
            Grid::Fine => "fine",
            Grid::Coarse => "coarse",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fine" => Ok(Grid::Fine),
            "coarse" => Ok(Grid::Coarse),
            _ => Err(Error::invalid(format!("unknown grid {s:?}"))),
        }
    }
}

fn file_name(split: Split, grid: Grid) -> String {
    format!("{}_{}.adrd", split.name(), grid.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub desk_scale: bool,
    pub seed: u64,
    pub time: TimeConfig,
    pub splits: SplitConfig,
}

impl DatasetConfig {
    pub fn full(seed: u64) -> Self {
        DatasetConfig {
            desk_scale: false,
            seed,
            time: TimeConfig::full(),
            splits: SplitConfig::full(),
        }
    }

    pub fn desk(seed: u64) -> Self {
        DatasetConfig {
            desk_scale: true,
            seed,
            time: TimeConfig::desk(),
            splits: SplitConfig::desk(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub train_val: usize,
    pub train: usize,
    pub val: usize,
    pub interp: usize,
    pub extrap: usize,
    pub fine_snapshots: usize,
    pub coarse_snapshots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub dataset_version: u32,
    pub desk_scale: bool,
    pub config: DatasetConfig,
    pub counts: Counts,
    pub splits: SplitSpec,
    pub norm: NormStats,
    /// Array file per `<split>_<grid>` key.
    pub files: Vec<(String, String)>,
    pub content_sha256: String,
}

impl Manifest {
    pub fn params(&self, split: Split) -> &[Param] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Interp => &self.splits.interp,
            Split::Extrap => &self.splits.extrap,
        }
    }

    pub fn time(&self) -> &TimeConfig {
        &self.config.time
    }

    /// Last coarse index with `t ≤ T₁`.
    pub fn coarse_t1_index(&self) -> usize {
        self.config.time.coarse_index_at(self.splits.t1)
    }

    pub fn fine_t1_index(&self) -> usize {
        self.config.time.fine_index_at(self.splits.t1)
    }
}

struct ArrayWriter {
    out: BufWriter<File>,
    path: PathBuf,
}

impl ArrayWriter {
    fn create(path: &Path, shape: &[u64]) -> Result<Self> {
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(f);
        let mut header = Vec::new();
        header.extend_from_slice(ARRAY_MAGIC);
        header.extend_from_slice(&ARRAY_VERSION.to_le_bytes());
        header.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for e in shape {
            header.extend_from_slice(&e.to_le_bytes());
        }
        out.write_all(&header).map_err(|e| Error::io(path, e))?;
        Ok(ArrayWriter {
            out,
            path: path.to_path_buf(),
        })
    }

    fn write(&mut self, values: &[f64]) -> Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for &v in values {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        self.out.write_all(&buf).map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Raw snapshots of one split on one grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldArray {
    pub n_param: usize,
    pub n_time: usize,
    data: Vec<f32>,
}

impl FieldArray {
    pub const FIELD: usize = SIDE * SIDE;

    pub fn raw(&self, p: usize, k: usize) -> &[f32] {
        let off = (p * self.n_time + k) * Self::FIELD;
        &self.data[off..off + Self::FIELD]
    }

    /// Snapshot as a normalized `[1, 32, 32]` tensor.
    pub fn normalized(&self, p: usize, k: usize, norm: &NormStats) -> Tensor {
        let v = self.raw(p, k).iter().map(|&x| norm.normalize(x as f64)).collect();
        Tensor::new(vec![1, SIDE, SIDE], v).expect("field size")
    }
}

pub fn read_array(path: &Path) -> Result<FieldArray> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(f);
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::format(path, d);
    if bytes.len() < 12 || &bytes[..4] != ARRAY_MAGIC {
        return Err(bad("missing ADRD magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != ARRAY_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let head = 12 + 8 * rank;
    if rank != 5 || bytes.len() < head {
        return Err(bad(&format!("expected rank 5, got {rank}")));
    }
    let shape: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[12 + 8 * i..20 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    if shape[2..] != [1, SIDE, SIDE] {
        return Err(bad(&format!("unexpected field extents {shape:?}")));
    }
    let count: usize = shape.iter().product();
    if bytes.len() != head + 4 * count {
        return Err(bad("payload length does not match extents"));
    }
    let data = bytes[head..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(FieldArray {
        n_param: shape[0],
        n_time: shape[1],
        data,
    })
}

/// SHA-256 over every array file (name, then bytes) in manifest order.
pub fn content_hash(dir: &Path, files: &[(String, String)]) -> Result<String> {
    let mut h = Sha256::new();
    for (_, name) in files {
        let p = dir.join(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        h.update(name.as_bytes());
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

const SIM_CHUNK: usize = 16;

/// Simulates every parameter and writes the container to `out_dir`, which
/// must not exist yet. Work happens in a sibling staging directory that is
/// removed on failure.
pub fn generate(cfg: &DatasetConfig, out_dir: &Path) -> Result<Manifest> {
    if out_dir.join("manifest.json").exists() {
        return Err(Error::invalid(format!(
            "dataset already exists at {}",
            out_dir.display()
        )));
    }
    cfg.time.validate()?;
    let splits = build_splits(cfg.seed, &cfg.splits, cfg.time.t_final)?;
    let staging = staging_dir(out_dir);
    if staging.exists() {
        fs::remove_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    }
    fs::create_dir_all(&staging).map_err(|e| Error::io(&staging, e))?;
    let result = write_all(cfg, &splits, &staging);
    match result {
        Ok(manifest) => {
            if out_dir.exists() {
                fs::remove_dir(out_dir).map_err(|e| Error::io(out_dir, e))?;
            }
            fs::rename(&staging, out_dir).map_err(|e| Error::io(out_dir, e))?;
            Ok(manifest)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

fn staging_dir(out_dir: &Path) -> PathBuf {
    let mut name = out_dir.file_name().map(|s| s.to_os_string()).unwrap_or_default();
    name.push(".partial");
    out_dir.with_file_name(name)
}

fn write_all(cfg: &DatasetConfig, splits: &SplitSpec, dir: &Path) -> Result<Manifest> {
    let mesh = MeshP1::unit_square(MESH_SUBDIVISIONS);
    let time = cfg.time;
    let k_t1 = time.coarse_index_at(splits.t1);
    let mut files = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for split in Split::ALL {
        let params = match split {
            Split::Train => &splits.train,
            Split::Val => &splits.val,
            Split::Interp => &splits.interp,
            Split::Extrap => &splits.extrap,
        };
        let mut writers = Vec::new();
        for (grid, n_time) in [(Grid::Fine, time.n_fine()), (Grid::Coarse, time.n_coarse())] {
            let name = file_name(split, grid);
            let shape = [params.len() as u64, n_time as u64, 1, SIDE as u64, SIDE as u64];
            writers.push(ArrayWriter::create(&dir.join(&name), &shape)?);
            files.push((format!("{}_{}", split.name(), grid.name()), name));
        }
        for chunk in params.chunks(SIM_CHUNK) {
            let trajs: Vec<Result<Trajectory>> = chunk.par_iter().map(|mu| simulate(&mesh, &time, *mu)).collect();
            let failures: Vec<String> = trajs
                .iter()
                .zip(chunk)
                .filter_map(|(t, mu)| t.as_ref().err().map(|e| format!("{mu:?}: {e}")))
                .collect();
            if !failures.is_empty() {
                return Err(Error::numerical("generate", failures.join("; ")));
            }
            for t in trajs {
                let t = t?;
                writers[0].write(&t.fine)?;
                writers[1].write(&t.coarse)?;
                if split == Split::Train {
                    for k in 0..=k_t1 {
                        for &v in t.coarse_snapshot(k) {
                            // statistics of the stored (f32) values
                            let v = v as f32 as f64;
                            lo = lo.min(v);
                            hi = hi.max(v);
                        }
                    }
                }
            }
        }
        for w in writers {
            w.finish()?;
        }
    }
    let norm = NormStats::new(lo, hi)?;
    let content_sha256 = content_hash(dir, &files)?;
    let manifest = Manifest {
        format: "ADRD".into(),
        dataset_version: DATASET_VERSION,
        desk_scale: cfg.desk_scale,
        config: cfg.clone(),
        counts: Counts {
            train_val: splits.train.len() + splits.val.len(),
            train: splits.train.len(),
            val: splits.val.len(),
            interp: splits.interp.len(),
            extrap: splits.extrap.len(),
            fine_snapshots: time.n_fine(),
            coarse_snapshots: time.n_coarse(),
        },
        splits: splits.clone(),
        norm,
        files,
        content_sha256,
    };
    let path = dir.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest)?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// A dataset directory with its manifest; arrays load on demand.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub dir: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::invalid(format!("no dataset found at {}", dir.display())));
        }
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        Ok(Dataset {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn array(&self, split: Split, grid: Grid) -> Result<FieldArray> {
        let a = read_array(&self.dir.join(file_name(split, grid)))?;
        let want_t = match grid {
            Grid::Fine => self.manifest.counts.fine_snapshots,
            Grid::Coarse => self.manifest.counts.coarse_snapshots,
        };
        if a.n_param != self.manifest.params(split).len() || a.n_time != want_t {
            return Err(Error::format(
                &self.dir.join(file_name(split, grid)),
                "array extents disagree with manifest",
            ));
        }
        Ok(a)
    }

    /// Recomputes the content hash and compares it to the manifest.
    pub fn verify(&self) -> Result<()> {
        let h = content_hash(&self.dir, &self.manifest.files)?;
        if h != self.manifest.content_sha256 {
            return Err(Error::format(&self.dir, "content hash mismatch"));
        }
        Ok(())
    }

    pub fn norm(&self) -> &NormStats {
        &self.manifest.norm
    }
}
