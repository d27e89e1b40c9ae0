//! `CKPT` container shared by autoencoder and vector-field checkpoints.
//!
//! Layout (little-endian): magic `CKPT`, `u32` version, method tag
//! (`u32` length + UTF-8), `u64` seed, `u32` epoch, `u32` array count, then
//! per array: name (`u32` length + bytes), `u32` rank, `u64` extents, `f64`
//! payload; finally the validation curve (`u32` length + `f64` values).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

pub const MAGIC: &[u8; 4] = b"CKPT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub method: String,
    pub seed: u64,
    /// 1-based epoch; 0 marks an initialization snapshot.
    pub epoch: u32,
    pub arrays: Vec<(String, Tensor)>,
    /// Validation loss per completed epoch up to and including `epoch`.
    pub val_curve: Vec<f64>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.method);
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&self.epoch.to_le_bytes());
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, t) in &self.arrays {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &e in t.shape() {
                out.extend_from_slice(&(e as u64).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&(self.val_curve.len() as u32).to_le_bytes());
        for &v in &self.val_curve {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { b: bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(Error::format(path, "missing CKPT magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(path, format!("unsupported version {version}")));
        }
        let method = r.string()?;
        let seed = r.u64()?;
        let epoch = r.u32()?;
        let n = r.u32()? as usize;
        let mut arrays = Vec::with_capacity(n);
        for _ in 0..n {
            let name = r.string()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
            let count: usize = shape.iter().product();
            let data = (0..count).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            arrays.push((name, Tensor::new(shape, data)?));
        }
        let m = r.u32()? as usize;
        let val_curve = (0..m).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::format(path, "trailing bytes after validation curve"));
        }
        Ok(Checkpoint {
            method,
            seed,
            epoch,
            arrays,
            val_curve,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub fn array(&self, name: &str) -> Option<&Tensor> {
        self.arrays.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.b.len() {
            return Err(Error::format(self.path, "truncated checkpoint"));
        }
        let s = &self.b[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::format(self.path, "invalid UTF-8 name"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_truncation() {
        let c = Checkpoint {
            method: "isometry".into(),
            seed: 7,
            epoch: 3,
            arrays: vec![
                ("a.w".into(), Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.0, 1e-300, 7.0]).unwrap()),
                ("s".into(), Tensor::scalar(4.0)),
            ],
            val_curve: vec![0.5, 0.25, 0.125],
        };
        let bytes = c.to_bytes();
        let p = Path::new("mem");
        assert_eq!(Checkpoint::from_bytes(&bytes, p).unwrap(), c);
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1], p).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, p).is_err());
    }
}
