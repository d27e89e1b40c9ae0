use crate::ae::model::LATENT_DIM;
use crate::error::{Error, Result};
use crate::fom::mesh::{Param, P_HI, P_LO};
use crate::ndnum::{rng, DualOver, Ops, Plain, SmallMatrix, Tensor};

pub const HIDDEN: usize = 128;
/// `[vec(z); sin t; cos t; μ]`.
pub const INPUT_DIM: usize = LATENT_DIM + 2 + 3;

const NAMES: [&str; 6] = ["vf.l1.w", "vf.l1.b", "vf.l2.w", "vf.l2.b", "vf.l3.w", "vf.l3.b"];

fn shapes() -> [Vec<usize>; 6] {
    [
        vec![HIDDEN, INPUT_DIM],
        vec![HIDDEN],
        vec![HIDDEN, HIDDEN],
        vec![HIDDEN],
        vec![LATENT_DIM, HIDDEN],
        vec![LATENT_DIM],
    ]
}

/// Weights and biases of the three dense layers.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorFieldParams {
    pub tensors: Vec<Tensor>,
}

impl VectorFieldParams {
    pub fn init(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tag("node-init")]);
        let tensors = shapes()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                // fan-in of the layer this tensor belongs to
                let fan_in = shapes()[i - i % 2][1];
                let bound = 1.0 / (fan_in as f64).sqrt();
                let n: usize = s.iter().product();
                Tensor::new(s.clone(), rng::uniform_vec(&mut r, n, -bound, bound)).unwrap()
            })
            .collect();
        VectorFieldParams { tensors }
    }

    pub fn zeros() -> Self {
        VectorFieldParams {
            tensors: shapes().iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    pub fn names() -> Vec<String> {
        NAMES.iter().map(|s| s.to_string()).collect()
    }

    pub fn named(&self) -> Vec<(String, Tensor)> {
        Self::names().into_iter().zip(self.tensors.iter().cloned()).collect()
    }

    pub fn from_named(named: &[(String, Tensor)]) -> Result<Self> {
        let tensors = NAMES
            .iter()
            .zip(shapes())
            .map(|(n, s)| {
                let t = named
                    .iter()
                    .find(|(k, _)| k == n)
                    .map(|(_, t)| t.clone())
                    .ok_or_else(|| Error::invalid(format!("missing parameter {n}")))?;
                if t.shape() != s.as_slice() {
                    return Err(Error::invalid(format!("parameter {n} has shape {:?}", t.shape())));
                }
                Ok(t)
            })
            .collect::<Result<_>>()?;
        Ok(VectorFieldParams { tensors })
    }
}

/// Vector-field parameters as backend values.
#[derive(Clone, Debug)]
pub struct VfVars<V> {
    pub w: [V; 3],
    pub b: [V; 3],
}

impl<V: Clone> VfVars<V> {
    pub fn from_flat(flat: &[V]) -> Self {
        assert_eq!(flat.len(), 6);
        VfVars {
            w: [flat[0].clone(), flat[2].clone(), flat[4].clone()],
            b: [flat[1].clone(), flat[3].clone(), flat[5].clone()],
        }
    }
}

/// `μ` rescaled coordinate-wise from the admissible box to `[-1, 1]`.
pub fn mu_features(mu: &Param) -> [f64; 3] {
    std::array::from_fn(|i| 2.0 * (mu[i] - P_LO[i]) / (P_HI[i] - P_LO[i]) - 1.0)
}

/// `f_θ(t, z, μ)`, returned with the shape of `z`.
pub fn vector_field<B: Ops>(b: &mut B, p: &VfVars<B::V>, t: f64, z: &B::V, mu: &Param) -> B::V {
    let shape = b.primal(z).shape().to_vec();
    let zf = b.reshape(z, &[LATENT_DIM]);
    let m = mu_features(mu);
    let feats = b.constant(Tensor::vector(vec![t.sin(), t.cos(), m[0], m[1], m[2]]));
    let x = b.concat(&[zf, feats]);
    let a1 = b.matvec(&p.w[0], &x);
    let a1 = b.add(&a1, &p.b[0]);
    let h1 = b.tanh(&a1);
    let a2 = b.matvec(&p.w[1], &h1);
    let a2 = b.add(&a2, &p.b[1]);
    let h2 = b.tanh(&a2);
    let o = b.matvec(&p.w[2], &h2);
    let o = b.add(&o, &p.b[2]);
    b.reshape(&o, &shape)
}

pub fn vector_field_plain(params: &VectorFieldParams, t: f64, z: &Tensor, mu: &Param) -> Result<Tensor> {
    if z.len() != LATENT_DIM {
        return Err(Error::invalid(format!("latent has {} entries, expected {LATENT_DIM}", z.len())));
    }
    let mut b = Plain::new();
    let p = VfVars::from_flat(&params.tensors);
    let out = vector_field(&mut b, &p, t, z, mu);
    match b.fault() {
        Some(op) => Err(Error::numerical(op, "non-finite vector field output")),
        None => Ok(out),
    }
}

/// `∂f/∂z` at `(t, z, μ)`, one forward-mode pass per latent coordinate.
pub fn vf_jacobian(params: &VectorFieldParams, t: f64, z: &Tensor, mu: &Param) -> Result<SmallMatrix> {
    let d = z.len();
    let mut cols = Vec::with_capacity(d);
    for i in 0..d {
        let mut b = DualOver::plain();
        let consts: Vec<_> = params.tensors.iter().map(|x| b.constant(x.clone())).collect();
        let p = VfVars::from_flat(&consts);
        let mut e = Tensor::zeros(z.shape());
        e.data_mut()[i] = 1.0;
        let zd = b.seed(z.clone(), e);
        let out = vector_field(&mut b, &p, t, &zd, mu);
        if let Some(op) = b.fault() {
            return Err(Error::numerical(op, "non-finite vector field Jacobian"));
        }
        let col = b.tangent_of(&out);
        cols.push(col.into_data());
    }
    Ok(SmallMatrix::from_columns(&cols))
}

/// One Ralston step: `k₁ = f(t, z)`, `k₂ = f(t + ⅔h, z + ⅔h k₁)`,
/// `z + h(¼k₁ + ¾k₂)`.
pub fn rk2_ralston_step<B: Ops, F>(b: &mut B, f: &mut F, t: f64, z: &B::V, h: f64) -> B::V
where
    F: FnMut(&mut B, f64, &B::V) -> B::V,
{
    let k1 = f(b, t, z);
    let s = b.scale(&k1, 2.0 * h / 3.0);
    let z2 = b.add(z, &s);
    let k2 = f(b, t + 2.0 * h / 3.0, &z2);
    let a = b.scale(&k1, 0.25 * h);
    let c = b.scale(&k2, 0.75 * h);
    let inc = b.add(&a, &c);
    b.add(z, &inc)
}

/// One Ralston step per interval of `grid`; element 0 is `z₀`.
pub fn integrate<B: Ops, F>(b: &mut B, f: &mut F, z0: &B::V, grid: &[f64]) -> Result<Vec<B::V>>
where
    F: FnMut(&mut B, f64, &B::V) -> B::V,
{
    if grid.is_empty() {
        return Err(Error::invalid("time grid must contain at least one point"));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::invalid("time grid must be strictly increasing"));
    }
    let mut out = Vec::with_capacity(grid.len());
    out.push(z0.clone());
    for (k, w) in grid.windows(2).enumerate() {
        let next = rk2_ralston_step(b, f, w[0], out.last().unwrap(), w[1] - w[0]);
        if !b.primal(&next).is_finite() {
            return Err(Error::numerical("integrate", format!("non-finite latent state at step {}", k + 1)));
        }
        out.push(next);
    }
    Ok(out)
}

/// Latent trajectory of the learned dynamics on `grid`.
pub fn integrate_plain(params: &VectorFieldParams, mu: &Param, z0: &Tensor, grid: &[f64]) -> Result<Vec<Tensor>> {
    let mut b = Plain::new();
    let p = VfVars::from_flat(&params.tensors);
    let mut f = |b: &mut Plain, t: f64, z: &Tensor| vector_field(b, &p, t, z, mu);
    integrate(&mut b, &mut f, z0, grid)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_parameters_give_zero_field() {
        let p = VectorFieldParams::zeros();
        let z = Tensor::full(&[1, 4, 4], 0.7);
        let f = vector_field_plain(&p, 1.3, &z, &[0.03, 0.5, 0.5]).unwrap();
        assert_eq!(f.shape(), &[1, 4, 4]);
        assert!(f.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ralston_linear_and_constant_maps() {
        let mut b = Plain::new();
        let z = Tensor::vector(vec![1.5]);
        let h = 0.1;
        let mut decay = |b: &mut Plain, _t: f64, z: &Tensor| b.scale(z, -1.0);
        let z1 = rk2_ralston_step(&mut b, &mut decay, 0.0, &z, h);
        assert!((z1.item() - (1.0 - h + h * h / 2.0) * 1.5).abs() < 1e-14);
        let mut one = |b: &mut Plain, _t: f64, z: &Tensor| b.constant(Tensor::full(z.shape(), 1.0));
        let z1 = rk2_ralston_step(&mut b, &mut one, 0.0, &z, h);
        assert_eq!(z1.item(), 1.5 + h);
    }

    #[test]
    fn grid_validation() {
        let p = VectorFieldParams::init(1);
        let z = Tensor::zeros(&[1, 4, 4]);
        assert_eq!(integrate_plain(&p, &[0.03, 0.5, 0.5], &z, &[2.0]).unwrap().len(), 1);
        assert!(integrate_plain(&p, &[0.03, 0.5, 0.5], &z, &[]).is_err());
        assert!(integrate_plain(&p, &[0.03, 0.5, 0.5], &z, &[0.0, 0.0]).is_err());
    }
}
