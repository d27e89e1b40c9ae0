use crate::ae::model::{decode_traced, DecoderVars, LATENT_DIM, LATENT_SHAPE};
use crate::ae::{decode_plain, encode_plain, AeParams};
use crate::error::{Error, Result};
use crate::fom::{Dataset, FieldArray, Grid, NormStats, Param, Split};
use crate::ndnum::{power_iter_gain, Plain, SmallMatrix, Tensor};
use crate::node::{integrate_plain, vf_jacobian, VectorFieldParams};

/// What the evaluation needs from a reduced model. Implemented by the
/// trained autoencoder + NODE pair and by analytic stubs in tests.
pub trait RomModel: Sync {
    fn encode(&self, u: &Tensor) -> Result<Tensor>;
    fn decode(&self, z: &Tensor) -> Result<Tensor>;
    /// Latent states on `times`, starting from `z0`.
    fn rollout(&self, mu: &Param, z0: &Tensor, times: &[f64]) -> Result<Vec<Tensor>>;
    /// `∂f/∂z` of the latent dynamics.
    fn dynamics_jacobian(&self, t: f64, z: &Tensor, mu: &Param) -> Result<SmallMatrix>;
    /// `‖J_D(z)‖₂` by power iteration from a fixed probe.
    fn decoder_gain(&self, z: &Tensor, iters: usize) -> Result<f64>;
}

pub struct TrainedRom {
    pub ae: AeParams,
    pub vf: VectorFieldParams,
}

impl RomModel for TrainedRom {
    fn encode(&self, u: &Tensor) -> Result<Tensor> {
        encode_plain(&self.ae, u)
    }

    fn decode(&self, z: &Tensor) -> Result<Tensor> {
        decode_plain(&self.ae, z)
    }

    fn rollout(&self, mu: &Param, z0: &Tensor, times: &[f64]) -> Result<Vec<Tensor>> {
        integrate_plain(&self.vf, mu, z0, times)
    }

    fn dynamics_jacobian(&self, t: f64, z: &Tensor, mu: &Param) -> Result<SmallMatrix> {
        vf_jacobian(&self.vf, t, z, mu)
    }

    fn decoder_gain(&self, z: &Tensor, iters: usize) -> Result<f64> {
        let dec = DecoderVars::from_flat(&self.ae.decoder);
        let mut b = Plain::new();
        let tr = decode_traced(&mut b, &dec, z);
        let probe = Tensor::full(&LATENT_SHAPE, 1.0);
        let g = power_iter_gain(
            |v| Ok(tr.jvp(&mut Plain::new(), &dec, v)),
            |w| Ok(tr.vjp(&mut Plain::new(), &dec, w)),
            LATENT_DIM,
            iters,
            &probe,
        )?;
        if !g.is_finite() {
            return Err(Error::numerical("decoder_gain", "non-finite gain estimate"));
        }
        Ok(g)
    }
}

enum Store {
    Array(FieldArray, NormStats),
    Memory(Vec<Vec<Tensor>>),
}

/// Normalized trajectories of one split on one grid.
pub struct EvalData {
    pub params: Vec<Param>,
    pub times: Vec<f64>,
    store: Store,
}

impl EvalData {
    pub fn load(ds: &Dataset, split: Split, grid: Grid) -> Result<Self> {
        let array = ds.array(split, grid)?;
        let t = ds.manifest.time();
        let times = (0..array.n_time)
            .map(|k| match grid {
                Grid::Fine => t.fine_time(k),
                Grid::Coarse => t.coarse_time(k),
            })
            .collect();
        Ok(EvalData {
            params: ds.manifest.params(split).to_vec(),
            times,
            store: Store::Array(array, *ds.norm()),
        })
    }

    /// In-memory trajectories, `fields[p][k]`, already normalized.
    pub fn from_fields(params: Vec<Param>, times: Vec<f64>, fields: Vec<Vec<Tensor>>) -> Result<Self> {
        if fields.len() != params.len() || fields.iter().any(|f| f.len() != times.len()) {
            return Err(Error::invalid("trajectory extents disagree with parameters and times"));
        }
        Ok(EvalData {
            params,
            times,
            store: Store::Memory(fields),
        })
    }

    pub fn n_param(&self) -> usize {
        self.params.len()
    }

    pub fn n_time(&self) -> usize {
        self.times.len()
    }

    pub fn snapshot(&self, p: usize, k: usize) -> Tensor {
        match &self.store {
            Store::Array(a, n) => a.normalized(p, k, n),
            Store::Memory(f) => f[p][k].clone(),
        }
    }
}
