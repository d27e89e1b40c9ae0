//! Convolutional encoder/decoder with pre-activation residual blocks and
//! bilinear down/up-sampling.
//!
//! Encoder: `1@32 -conv3-> 16@32 -res,½-> 16@16 -1x1-> 32@16 -res,½-> 32@8
//! -res,½-> 32@4 -1x1-> 1@4`.
//!
//! Decoder: `1@4 -conv3-> 16@4 -1x1-> 32@4 -res,×2-> 32@8 -res,×2-> 32@16
//! -1x1-> 16@16 -res,×2-> 16@32 -conv3-> 1@32`.
//!
//! The first decoder convolution `[16, 1, 3, 3]` reshapes to a `16×9`
//! matrix, which is what the Stiefel projection acts on.

use crate::error::{Error, Result};
use crate::ndnum::rng;
use crate::ndnum::{Ops, Scale, Tensor};

pub const FIELD_SHAPE: [usize; 3] = [1, 32, 32];
pub const LATENT_SHAPE: [usize; 3] = [1, 4, 4];
pub const FIELD_DIM: usize = 1024;
pub const LATENT_DIM: usize = 16;

/// Name and `[c_out, c_in, k, k]` shape of one convolution.
#[derive(Clone, Copy, Debug)]
pub struct ConvSpec {
    pub name: &'static str,
    pub shape: [usize; 4],
}

const fn conv(name: &'static str, c_out: usize, c_in: usize, k: usize) -> ConvSpec {
    ConvSpec {
        name,
        shape: [c_out, c_in, k, k],
    }
}

pub const ENCODER_CONVS: [ConvSpec; 9] = [
    conv("enc.in", 16, 1, 3),
    conv("enc.s1.c1", 16, 16, 3),
    conv("enc.s1.c2", 16, 16, 3),
    conv("enc.p1", 32, 16, 1),
    conv("enc.s2.c1", 32, 32, 3),
    conv("enc.s2.c2", 32, 32, 3),
    conv("enc.s3.c1", 32, 32, 3),
    conv("enc.s3.c2", 32, 32, 3),
    conv("enc.out", 1, 32, 1),
];

pub const DECODER_CONVS: [ConvSpec; 10] = [
    conv("dec.in", 16, 1, 3),
    conv("dec.p0", 32, 16, 1),
    conv("dec.s1.c1", 32, 32, 3),
    conv("dec.s1.c2", 32, 32, 3),
    conv("dec.s2.c1", 32, 32, 3),
    conv("dec.s2.c2", 32, 32, 3),
    conv("dec.p2", 16, 32, 1),
    conv("dec.s3.c1", 16, 16, 3),
    conv("dec.s3.c2", 16, 16, 3),
    conv("dec.out", 1, 16, 3),
];

/// Index of the weight tensor of the first decoder convolution within
/// [`AeParams::decoder`].
pub const DECODER_FIRST_WEIGHT: usize = 0;

/// Flat parameter list for one side: `[w0, b0, w1, b1, ...]`.
fn layout_names(specs: &[ConvSpec]) -> Vec<String> {
    specs
        .iter()
        .flat_map(|s| [format!("{}.w", s.name), format!("{}.b", s.name)])
        .collect()
}

fn layout_shapes(specs: &[ConvSpec]) -> Vec<Vec<usize>> {
    specs
        .iter()
        .flat_map(|s| [s.shape.to_vec(), vec![s.shape[0]]])
        .collect()
}

fn init_side(specs: &[ConvSpec], rng: &mut rng::Stream) -> Vec<Tensor> {
    let mut out = Vec::with_capacity(specs.len() * 2);
    for s in specs {
        let [o, c, k, _] = s.shape;
        let bound = 1.0 / ((c * k * k) as f64).sqrt();
        let w = rng::uniform_vec(rng, o * c * k * k, -bound, bound);
        let b = rng::uniform_vec(rng, o, -bound, bound);
        out.push(Tensor::from_parts(s.shape.to_vec(), w));
        out.push(Tensor::from_parts(vec![o], b));
    }
    out
}

/// Encoder and decoder parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AeParams {
    pub encoder: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
}

impl AeParams {
    /// Fan-in scaled uniform initialization.
    pub fn init(seed: u64) -> Self {
        let mut r = rng::stream(seed, &[rng::tag("ae-init")]);
        let encoder = init_side(&ENCODER_CONVS, &mut r);
        let decoder = init_side(&DECODER_CONVS, &mut r);
        AeParams { encoder, decoder }
    }

    pub fn encoder_names() -> Vec<String> {
        layout_names(&ENCODER_CONVS)
    }

    pub fn decoder_names() -> Vec<String> {
        layout_names(&DECODER_CONVS)
    }

    /// All `(name, tensor)` pairs, encoder first.
    pub fn named(&self) -> Vec<(String, Tensor)> {
        Self::encoder_names()
            .into_iter()
            .zip(self.encoder.iter().cloned())
            .chain(Self::decoder_names().into_iter().zip(self.decoder.iter().cloned()))
            .collect()
    }

    /// Rebuilds parameters from named arrays, checking every shape.
    pub fn from_named(named: &[(String, Tensor)]) -> Result<Self> {
        let pick = |names: Vec<String>, shapes: Vec<Vec<usize>>| -> Result<Vec<Tensor>> {
            names
                .iter()
                .zip(shapes)
                .map(|(n, s)| {
                    let t = named
                        .iter()
                        .find(|(k, _)| k == n)
                        .map(|(_, t)| t.clone())
                        .ok_or_else(|| Error::invalid(format!("missing parameter {n}")))?;
                    if t.shape() != s.as_slice() {
                        return Err(Error::invalid(format!(
                            "parameter {n} has shape {:?}, expected {s:?}",
                            t.shape()
                        )));
                    }
                    Ok(t)
                })
                .collect()
        };
        Ok(AeParams {
            encoder: pick(Self::encoder_names(), layout_shapes(&ENCODER_CONVS))?,
            decoder: pick(Self::decoder_names(), layout_shapes(&DECODER_CONVS))?,
        })
    }

    pub fn num_scalars(&self) -> usize {
        self.encoder.iter().chain(&self.decoder).map(|t| t.len()).sum()
    }
}

#[derive(Clone, Debug)]
pub struct ConvVars<V> {
    pub w: V,
    pub b: V,
}

#[derive(Clone, Debug)]
pub struct ResVars<V> {
    pub c1: ConvVars<V>,
    pub c2: ConvVars<V>,
}

/// Encoder parameters as backend values.
#[derive(Clone, Debug)]
pub struct EncoderVars<V> {
    pub input: ConvVars<V>,
    pub s1: ResVars<V>,
    pub p1: ConvVars<V>,
    pub s2: ResVars<V>,
    pub s3: ResVars<V>,
    pub out: ConvVars<V>,
}

/// Decoder parameters as backend values.
#[derive(Clone, Debug)]
pub struct DecoderVars<V> {
    pub input: ConvVars<V>,
    pub p0: ConvVars<V>,
    pub s1: ResVars<V>,
    pub s2: ResVars<V>,
    pub p2: ConvVars<V>,
    pub s3: ResVars<V>,
    pub out: ConvVars<V>,
}

fn convs<V: Clone>(flat: &[V]) -> Vec<ConvVars<V>> {
    flat.chunks(2)
        .map(|c| ConvVars {
            w: c[0].clone(),
            b: c[1].clone(),
        })
        .collect()
}

impl<V: Clone> EncoderVars<V> {
    pub fn from_flat(flat: &[V]) -> Self {
        assert_eq!(flat.len(), ENCODER_CONVS.len() * 2);
        let mut c = convs(flat).into_iter();
        let mut next = || c.next().unwrap();
        EncoderVars {
            input: next(),
            s1: ResVars { c1: next(), c2: next() },
            p1: next(),
            s2: ResVars { c1: next(), c2: next() },
            s3: ResVars { c1: next(), c2: next() },
            out: next(),
        }
    }
}

impl<V: Clone> DecoderVars<V> {
    pub fn from_flat(flat: &[V]) -> Self {
        assert_eq!(flat.len(), DECODER_CONVS.len() * 2);
        let mut c = convs(flat).into_iter();
        let mut next = || c.next().unwrap();
        DecoderVars {
            input: next(),
            p0: next(),
            s1: ResVars { c1: next(), c2: next() },
            s2: ResVars { c1: next(), c2: next() },
            p2: next(),
            s3: ResVars { c1: next(), c2: next() },
            out: next(),
        }
    }
}

/// Lifts tensors into a backend as constants.
pub fn constants<B: Ops>(b: &mut B, ts: &[Tensor]) -> Vec<B::V> {
    ts.iter().map(|t| b.constant(t.clone())).collect()
}

fn conv_layer<B: Ops>(b: &mut B, c: &ConvVars<B::V>, x: &B::V) -> B::V {
    b.conv2d(x, &c.w, Some(&c.b))
}

/// `y = x + C2(tanh(C1(tanh(x))))`, returning `y` and both tanh outputs.
fn res_block<B: Ops>(b: &mut B, r: &ResVars<B::V>, x: &B::V) -> (B::V, B::V, B::V) {
    let t1 = b.tanh(x);
    let a = conv_layer(b, &r.c1, &t1);
    let t2 = b.tanh(&a);
    let c = conv_layer(b, &r.c2, &t2);
    (b.add(x, &c), t1, t2)
}

fn res_tangent<B: Ops>(b: &mut B, r: &ResVars<B::V>, t: &(B::V, B::V), dx: &B::V) -> B::V {
    let d1 = b.tanh_grad_mul(&t.0, dx);
    let da = b.conv2d(&d1, &r.c1.w, None);
    let d2 = b.tanh_grad_mul(&t.1, &da);
    let dc = b.conv2d(&d2, &r.c2.w, None);
    b.add(dx, &dc)
}

fn res_adjoint<B: Ops>(b: &mut B, r: &ResVars<B::V>, t: &(B::V, B::V), gy: &B::V) -> B::V {
    let g2 = b.conv2d_t(gy, &r.c2.w);
    let ga = b.tanh_grad_mul(&t.1, &g2);
    let g1 = b.conv2d_t(&ga, &r.c1.w);
    let gx = b.tanh_grad_mul(&t.0, &g1);
    b.add(gy, &gx)
}

fn check_shape<B: Ops>(b: &B, v: &B::V, want: &[usize], what: &str) -> Result<()> {
    let got = b.primal(v).shape();
    if got != want {
        return Err(Error::invalid(format!("{what} expects shape {want:?}, got {got:?}")));
    }
    Ok(())
}

/// `u [1, 32, 32] -> z [1, 4, 4]`.
pub fn encode<B: Ops>(b: &mut B, p: &EncoderVars<B::V>, u: &B::V) -> Result<B::V> {
    check_shape(b, u, &FIELD_SHAPE, "encode")?;
    Ok(encode_unchecked(b, p, u))
}

pub(crate) fn encode_unchecked<B: Ops>(b: &mut B, p: &EncoderVars<B::V>, u: &B::V) -> B::V {
    let h = conv_layer(b, &p.input, u);
    let (h, _, _) = res_block(b, &p.s1, &h);
    let h = b.resize(&h, Scale::Half);
    let h = conv_layer(b, &p.p1, &h);
    let (h, _, _) = res_block(b, &p.s2, &h);
    let h = b.resize(&h, Scale::Half);
    let (h, _, _) = res_block(b, &p.s3, &h);
    let h = b.resize(&h, Scale::Half);
    conv_layer(b, &p.out, &h)
}

/// Decoder output together with the tanh activations needed to apply
/// its Jacobian and Jacobian transpose at the same latent point.
pub struct DecoderTrace<V> {
    pub output: V,
    acts: [(V, V); 3],
}

/// `z [1, 4, 4] -> u [1, 32, 32]`.
pub fn decode<B: Ops>(b: &mut B, p: &DecoderVars<B::V>, z: &B::V) -> Result<B::V> {
    check_shape(b, z, &LATENT_SHAPE, "decode")?;
    Ok(decode_traced(b, p, z).output)
}

pub fn decode_traced<B: Ops>(b: &mut B, p: &DecoderVars<B::V>, z: &B::V) -> DecoderTrace<B::V> {
    let h = conv_layer(b, &p.input, z);
    let h = conv_layer(b, &p.p0, &h);
    let (h, a1, b1) = res_block(b, &p.s1, &h);
    let h = b.resize(&h, Scale::Double);
    let (h, a2, b2) = res_block(b, &p.s2, &h);
    let h = b.resize(&h, Scale::Double);
    let h = conv_layer(b, &p.p2, &h);
    let (h, a3, b3) = res_block(b, &p.s3, &h);
    let h = b.resize(&h, Scale::Double);
    let output = conv_layer(b, &p.out, &h);
    DecoderTrace {
        output,
        acts: [(a1, b1), (a2, b2), (a3, b3)],
    }
}

impl<V: Clone> DecoderTrace<V> {
    /// `J_D(z) v` for `v [1, 4, 4]`.
    pub fn jvp<B: Ops<V = V>>(&self, b: &mut B, p: &DecoderVars<V>, v: &V) -> V {
        let h = b.conv2d(v, &p.input.w, None);
        let h = b.conv2d(&h, &p.p0.w, None);
        let h = res_tangent(b, &p.s1, &self.acts[0], &h);
        let h = b.resize(&h, Scale::Double);
        let h = res_tangent(b, &p.s2, &self.acts[1], &h);
        let h = b.resize(&h, Scale::Double);
        let h = b.conv2d(&h, &p.p2.w, None);
        let h = res_tangent(b, &p.s3, &self.acts[2], &h);
        let h = b.resize(&h, Scale::Double);
        b.conv2d(&h, &p.out.w, None)
    }

    /// `J_D(z)ᵀ w` for `w [1, 32, 32]`.
    pub fn vjp<B: Ops<V = V>>(&self, b: &mut B, p: &DecoderVars<V>, w: &V) -> V {
        let g = b.conv2d_t(w, &p.out.w);
        let g = b.resize_t(&g, Scale::Double);
        let g = res_adjoint(b, &p.s3, &self.acts[2], &g);
        let g = b.conv2d_t(&g, &p.p2.w);
        let g = b.resize_t(&g, Scale::Double);
        let g = res_adjoint(b, &p.s2, &self.acts[1], &g);
        let g = b.resize_t(&g, Scale::Double);
        let g = res_adjoint(b, &p.s1, &self.acts[0], &g);
        let g = b.conv2d_t(&g, &p.p0.w);
        b.conv2d_t(&g, &p.input.w)
    }
}

/// Plain-tensor convenience wrappers.
pub fn encode_plain(params: &AeParams, u: &Tensor) -> Result<Tensor> {
    let mut b = crate::ndnum::Plain::new();
    let ev = EncoderVars::from_flat(&params.encoder);
    let z = encode(&mut b, &ev, u)?;
    fault(&b).map(|_| z)
}

pub fn decode_plain(params: &AeParams, z: &Tensor) -> Result<Tensor> {
    let mut b = crate::ndnum::Plain::new();
    let dv = DecoderVars::from_flat(&params.decoder);
    let u = decode(&mut b, &dv, z)?;
    fault(&b).map(|_| u)
}

pub(crate) fn fault<B: Ops>(b: &B) -> Result<()> {
    match b.fault() {
        Some(op) => Err(Error::numerical(op, "non-finite value in autoencoder")),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndnum::{Plain, Tape};

    #[test]
    fn shapes_follow_resolution_sequence() {
        let p = AeParams::init(1);
        let u = Tensor::full(&FIELD_SHAPE, 0.3);
        let z = encode_plain(&p, &u).unwrap();
        assert_eq!(z.shape(), &LATENT_SHAPE);
        let r = decode_plain(&p, &z).unwrap();
        assert_eq!(r.shape(), &FIELD_SHAPE);
        assert!(r.is_finite());
    }

    #[test]
    fn wrong_shapes_rejected() {
        let p = AeParams::init(1);
        assert!(encode_plain(&p, &Tensor::zeros(&[1, 16, 16])).is_err());
        assert!(decode_plain(&p, &Tensor::zeros(&[16])).is_err());
    }

    #[test]
    fn first_decoder_layer_is_stiefel_eligible() {
        let [c_out, c_in, k1, k2] = DECODER_CONVS[0].shape;
        assert!(c_out >= c_in * k1 * k2);
        assert_eq!(AeParams::init(0).decoder[DECODER_FIRST_WEIGHT].shape(), &[16, 1, 3, 3]);
    }

    #[test]
    fn named_round_trip() {
        let p = AeParams::init(9);
        let q = AeParams::from_named(&p.named()).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn trace_vjp_matches_tape_vjp() {
        let p = AeParams::init(4);
        let z = Tensor::new(LATENT_SHAPE.to_vec(), (0..16).map(|i| (i as f64 * 0.7).sin()).collect()).unwrap();
        let w = Tensor::new(FIELD_SHAPE.to_vec(), (0..1024).map(|i| (i as f64 * 0.013).cos()).collect()).unwrap();

        let mut b = Plain::new();
        let dv = DecoderVars::from_flat(&p.decoder);
        let tr = decode_traced(&mut b, &dv, &z);
        let via_trace = tr.vjp(&mut b, &dv, &w);

        let mut t = Tape::new();
        let dvt = DecoderVars::from_flat(&constants(&mut t, &p.decoder));
        let zv = t.var(z.clone());
        let out = decode(&mut t, &dvt, &zv).unwrap();
        let g = t.backward_with(out, w.clone());
        let via_tape = g.wrt(zv);
        for (a, c) in via_trace.data().iter().zip(via_tape.data()) {
            assert!((a - c).abs() <= 1e-12 * c.abs().max(1.0));
        }
    }
}
