use crate::ae::model::{decode_traced, DecoderTrace, DecoderVars};
use crate::error::{Error, Result};
use crate::ndnum::{Ops, Plain, Tensor};

/// A decoder whose Jacobian can be applied at a fixed latent point.
///
/// `linearize` runs the primal pass once; `jvp`/`vjp` then apply `J_D(z)`
/// and `J_D(z)ᵀ` reusing it, which is what makes the Hutchinson pattern
/// `vjp(jvp(v))` cheap.
pub trait LinearizableDecoder<B: Ops> {
    type Lin;
    fn linearize(&self, b: &mut B, z: &B::V) -> Self::Lin;
    fn output<'a>(&self, lin: &'a Self::Lin) -> &'a B::V;
    fn jvp(&self, b: &mut B, lin: &Self::Lin, v: &B::V) -> B::V;
    fn vjp(&self, b: &mut B, lin: &Self::Lin, w: &B::V) -> B::V;

    fn decode(&self, b: &mut B, z: &B::V) -> B::V {
        let lin = self.linearize(b, z);
        self.output(&lin).clone()
    }
}

/// The convolutional decoder.
pub struct ConvDecoder<'a, V>(pub &'a DecoderVars<V>);

impl<'a, B: Ops> LinearizableDecoder<B> for ConvDecoder<'a, B::V> {
    type Lin = DecoderTrace<B::V>;

    fn linearize(&self, b: &mut B, z: &B::V) -> Self::Lin {
        decode_traced(b, self.0, z)
    }
    fn output<'l>(&self, lin: &'l Self::Lin) -> &'l B::V {
        &lin.output
    }
    fn jvp(&self, b: &mut B, lin: &Self::Lin, v: &B::V) -> B::V {
        lin.jvp(b, self.0, v)
    }
    fn vjp(&self, b: &mut B, lin: &Self::Lin, w: &B::V) -> B::V {
        lin.vjp(b, self.0, w)
    }
}

/// Affine decoder `D(z) = W z + c` on flat latents, `W` of shape `[n, d]`.
pub struct LinearDecoder<V> {
    pub w: V,
    pub c: Option<V>,
}

impl<B: Ops> LinearizableDecoder<B> for LinearDecoder<B::V> {
    type Lin = B::V;

    fn linearize(&self, b: &mut B, z: &B::V) -> B::V {
        let y = b.matvec(&self.w, z);
        match &self.c {
            Some(c) => b.add(&y, c),
            None => y,
        }
    }
    fn output<'l>(&self, lin: &'l B::V) -> &'l B::V {
        lin
    }
    fn jvp(&self, b: &mut B, _lin: &B::V, v: &B::V) -> B::V {
        b.matvec(&self.w, v)
    }
    fn vjp(&self, b: &mut B, _lin: &B::V, w: &B::V) -> B::V {
        b.matvec_t(&self.w, w)
    }
}

fn mean<B: Ops>(b: &mut B, terms: Vec<B::V>) -> B::V {
    let n = terms.len() as f64;
    let mut it = terms.into_iter();
    let first = it.next().expect("at least one term");
    let total = it.fold(first, |acc, t| b.add(&acc, &t));
    b.scale(&total, 1.0 / n)
}

fn basis(shape: &[usize], i: usize) -> Tensor {
    let mut t = Tensor::zeros(shape);
    t.data_mut()[i] = 1.0;
    t
}

/// `‖G(z) − I‖_F²` with `G` assembled from one JVP per latent coordinate.
pub fn iso_exact_sample<B: Ops, D: LinearizableDecoder<B>>(b: &mut B, dec: &D, z: &B::V) -> B::V {
    let lin = dec.linearize(b, z);
    let shape = b.primal(z).shape().to_vec();
    let d = b.primal(z).len();
    let cols: Vec<B::V> = (0..d)
        .map(|i| {
            let e = b.constant(basis(&shape, i));
            dec.jvp(b, &lin, &e)
        })
        .collect();
    let mut terms = Vec::with_capacity(d * (d + 1) / 2);
    for i in 0..d {
        for j in i..d {
            let g = b.dot(&cols[i], &cols[j]);
            let t = if i == j {
                let g1 = b.add_scalar(&g, -1.0);
                b.sum_sq(&g1)
            } else {
                let s = b.sum_sq(&g);
                b.scale(&s, 2.0)
            };
            terms.push(t);
        }
    }
    let n = terms.len() as f64;
    let m = mean(b, terms);
    b.scale(&m, n)
}

/// Mean over probes of `‖(JᵀJ − I) v‖²`, each term computed as
/// `vjp(jvp(v)) − v` without forming `J`.
pub fn iso_hutchinson_sample<B: Ops, D: LinearizableDecoder<B>>(
    b: &mut B,
    dec: &D,
    z: &B::V,
    probes: &[Tensor],
) -> B::V {
    let lin = dec.linearize(b, z);
    let terms = probes
        .iter()
        .map(|v| {
            let v = b.constant(v.clone());
            let jv = dec.jvp(b, &lin, &v);
            let jtjv = dec.vjp(b, &lin, &jv);
            let r = b.sub(&jtjv, &v);
            b.sum_sq(&r)
        })
        .collect();
    mean(b, terms)
}

/// Mean over unit probes of `(‖(D(z + εv) − D(z))/ε‖ − α)²`.
pub fn gain_sample<B: Ops, D: LinearizableDecoder<B>>(
    b: &mut B,
    dec: &D,
    z: &B::V,
    probes: &[Tensor],
    alpha: f64,
    eps: f64,
) -> B::V {
    let y0 = dec.decode(b, z);
    let terms = probes
        .iter()
        .map(|v| {
            let step = b.constant(v.map(|x| eps * x));
            let zs = b.add(z, &step);
            let y1 = dec.decode(b, &zs);
            let diff = b.sub(&y1, &y0);
            let jv = b.scale(&diff, 1.0 / eps);
            let sq = b.sum_sq(&jv);
            let norm = b.sqrt(&sq);
            let dev = b.add_scalar(&norm, -alpha);
            b.sum_sq(&dev)
        })
        .collect();
    mean(b, terms)
}

/// Mean over unit probes of `‖(J(z + εv) v − J(z) v)/ε‖²`, both JVPs exact.
pub fn curvature_sample<B: Ops, D: LinearizableDecoder<B>>(
    b: &mut B,
    dec: &D,
    z: &B::V,
    probes: &[Tensor],
    eps: f64,
) -> B::V {
    let lin0 = dec.linearize(b, z);
    let terms = probes
        .iter()
        .map(|v| {
            let step = b.constant(v.map(|x| eps * x));
            let zs = b.add(z, &step);
            let lin1 = dec.linearize(b, &zs);
            let vv = b.constant(v.clone());
            let j0 = dec.jvp(b, &lin0, &vv);
            let j1 = dec.jvp(b, &lin1, &vv);
            let diff = b.sub(&j1, &j0);
            let dd = b.scale(&diff, 1.0 / eps);
            b.sum_sq(&dd)
        })
        .collect();
    mean(b, terms)
}

fn batch_value(name: &'static str, values: Vec<(f64, Option<&'static str>)>) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::invalid(format!("{name}: empty latent batch")));
    }
    let mut total = 0.0;
    for (v, fault) in &values {
        if let Some(op) = fault {
            return Err(Error::numerical(*op, format!("{name}: non-finite value")));
        }
        if !v.is_finite() {
            return Err(Error::numerical(name, "non-finite penalty"));
        }
        total += v;
    }
    Ok(total / values.len() as f64)
}

fn eval_plain(f: impl FnOnce(&mut Plain) -> Tensor) -> (f64, Option<&'static str>) {
    let mut b = Plain::new();
    let v = f(&mut b).item();
    (v, b.fault())
}

/// `(1/B) Σ_b ‖G(z_b) − I‖_F²`.
pub fn iso_penalty_exact<D: LinearizableDecoder<Plain>>(dec: &D, zs: &[Tensor]) -> Result<f64> {
    let vals = zs.iter().map(|z| eval_plain(|b| iso_exact_sample(b, dec, z))).collect();
    batch_value("iso_penalty_exact", vals)
}

/// Stochastic isometry penalty; `probes[b]` are the directions for `zs[b]`.
pub fn iso_penalty_hutchinson<D: LinearizableDecoder<Plain>>(
    dec: &D,
    zs: &[Tensor],
    probes: &[Vec<Tensor>],
) -> Result<f64> {
    check_probes(zs, probes)?;
    let vals = zs
        .iter()
        .zip(probes)
        .map(|(z, p)| eval_plain(|b| iso_hutchinson_sample(b, dec, z, p)))
        .collect();
    batch_value("iso_penalty_hutchinson", vals)
}

pub fn gain_penalty<D: LinearizableDecoder<Plain>>(
    dec: &D,
    zs: &[Tensor],
    probes: &[Vec<Tensor>],
    alpha: f64,
    eps: f64,
) -> Result<f64> {
    check_probes(zs, probes)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("gain penalty step must be positive"));
    }
    let vals = zs
        .iter()
        .zip(probes)
        .map(|(z, p)| eval_plain(|b| gain_sample(b, dec, z, p, alpha, eps)))
        .collect();
    batch_value("gain_penalty", vals)
}

pub fn curvature_penalty<D: LinearizableDecoder<Plain>>(
    dec: &D,
    zs: &[Tensor],
    probes: &[Vec<Tensor>],
    eps: f64,
) -> Result<f64> {
    check_probes(zs, probes)?;
    if !(eps > 0.0) {
        return Err(Error::invalid("curvature penalty step must be positive"));
    }
    let vals = zs
        .iter()
        .zip(probes)
        .map(|(z, p)| eval_plain(|b| curvature_sample(b, dec, z, p, eps)))
        .collect();
    batch_value("curvature_penalty", vals)
}

fn check_probes(zs: &[Tensor], probes: &[Vec<Tensor>]) -> Result<()> {
    if zs.len() != probes.len() || probes.iter().any(|p| p.is_empty()) {
        return Err(Error::invalid("each latent needs a nonempty probe set"));
    }
    for (z, ps) in zs.iter().zip(probes) {
        if ps.iter().any(|p| p.shape() != z.shape()) {
            return Err(Error::invalid("probe shape differs from latent shape"));
        }
        if z.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("latent batch contains non-finite entries"));
        }
    }
    Ok(())
}
