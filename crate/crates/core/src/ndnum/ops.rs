//! Differentiable primitive set shared by every evaluation backend.
//!
//! Model code is written once against [`Ops`] and runs unchanged on:
//! - [`Plain`]: values only,
//! - [`super::Tape`]: reverse mode,
//! - [`super::DualOver`]: forward mode on top of any other backend
//!   (`DualOver<Plain>` for JVPs, `DualOver<Tape>` for differentiable JVPs).

use super::kernels::{self, ConvGeom};
use super::tensor::Tensor;

/// Bilinear resampling factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scale {
    Half,
    Double,
}

impl Scale {
    pub fn apply(self, n: usize) -> usize {
        match self {
            Scale::Half => n / 2,
            Scale::Double => n * 2,
        }
    }
}

pub trait Ops {
    type V: Clone;

    /// Value that does not depend on anything being differentiated.
    fn constant(&mut self, t: Tensor) -> Self::V;
    fn primal<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;
    /// Name of the first primitive that produced a non-finite value, if any.
    fn fault(&self) -> Option<&'static str>;

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V;
    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Self::V;
    fn tanh(&mut self, a: &Self::V) -> Self::V;
    /// `(1 - y²) ⊙ t`: the tanh derivative expressed through its output `y`.
    fn tanh_grad_mul(&mut self, y: &Self::V, t: &Self::V) -> Self::V;
    fn sqrt(&mut self, a: &Self::V) -> Self::V;

    /// Same-padded 2-D cross-correlation of `x [c_in, h, w]` with
    /// `w [c_out, c_in, k, k]`, plus optional per-channel bias.
    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Self::V;
    /// Adjoint of `conv2d` in its input.
    fn conv2d_t(&mut self, y: &Self::V, w: &Self::V) -> Self::V;
    fn resize(&mut self, x: &Self::V, s: Scale) -> Self::V;
    /// Adjoint of `resize`.
    fn resize_t(&mut self, y: &Self::V, s: Scale) -> Self::V;

    /// `w [m, n] · x [n]`.
    fn matvec(&mut self, w: &Self::V, x: &Self::V) -> Self::V;
    /// `w [m, n]ᵀ · y [m]`.
    fn matvec_t(&mut self, w: &Self::V, y: &Self::V) -> Self::V;

    /// Flat concatenation into a vector.
    fn concat(&mut self, parts: &[Self::V]) -> Self::V;
    fn reshape(&mut self, a: &Self::V, shape: &[usize]) -> Self::V;
    fn sum(&mut self, a: &Self::V) -> Self::V;
    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V;

    fn sum_sq(&mut self, a: &Self::V) -> Self::V {
        self.dot(a, a)
    }
}

// Forward evaluation of each primitive on plain tensors. Shared by `Plain`
// and the tape so both produce bit-identical primals.
pub(crate) mod fwd {
    use super::*;

    pub fn conv_geom(x: &Tensor, w: &Tensor) -> ConvGeom {
        let xs = x.shape();
        let ws = w.shape();
        assert_eq!(xs.len(), 3, "conv2d input must be [c, h, w], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv2d weight must be [o, c, k, k], got {ws:?}");
        assert_eq!(xs[0], ws[1], "conv2d channel mismatch {xs:?} vs {ws:?}");
        assert_eq!(ws[2], ws[3]);
        assert!(ws[2] % 2 == 1, "conv2d kernel must be odd");
        ConvGeom {
            c_in: ws[1],
            c_out: ws[0],
            k: ws[2],
            h: xs[1],
            w: xs[2],
        }
    }

    pub fn conv_t_geom(y: &Tensor, w: &Tensor) -> ConvGeom {
        let ys = y.shape();
        let ws = w.shape();
        assert_eq!(ys.len(), 3);
        assert_eq!(ys[0], ws[0], "conv2d_t channel mismatch {ys:?} vs {ws:?}");
        ConvGeom {
            c_in: ws[1],
            c_out: ws[0],
            k: ws[2],
            h: ys[1],
            w: ys[2],
        }
    }

    pub fn conv2d(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
        let g = conv_geom(x, w);
        let out = kernels::conv2d(x.data(), w.data(), b.map(|b| b.data()), g);
        Tensor::from_parts(vec![g.c_out, g.h, g.w], out)
    }

    pub fn conv2d_t(y: &Tensor, w: &Tensor) -> Tensor {
        let g = conv_t_geom(y, w);
        let out = kernels::conv2d_t(y.data(), w.data(), g);
        Tensor::from_parts(vec![g.c_in, g.h, g.w], out)
    }

    pub fn resize(x: &Tensor, s: Scale) -> Tensor {
        let xs = x.shape();
        assert_eq!(xs.len(), 3, "resize input must be [c, h, w]");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (ho, wo) = (s.apply(h), s.apply(w));
        Tensor::from_parts(vec![c, ho, wo], kernels::resize(x.data(), c, h, w, ho, wo))
    }

    pub fn resize_t(y: &Tensor, s: Scale) -> Tensor {
        let ys = y.shape();
        let (c, ho, wo) = (ys[0], ys[1], ys[2]);
        let (h, w) = match s {
            Scale::Half => (ho * 2, wo * 2),
            Scale::Double => (ho / 2, wo / 2),
        };
        Tensor::from_parts(vec![c, h, w], kernels::resize_t(y.data(), c, h, w, ho, wo))
    }

    pub fn matvec(w: &Tensor, x: &Tensor) -> Tensor {
        let (m, n) = (w.shape()[0], w.shape()[1]);
        assert_eq!(x.len(), n, "matvec size mismatch");
        Tensor::vector(kernels::matvec(w.data(), x.data(), m, n))
    }

    pub fn matvec_t(w: &Tensor, y: &Tensor) -> Tensor {
        let (m, n) = (w.shape()[0], w.shape()[1]);
        assert_eq!(y.len(), m, "matvec_t size mismatch");
        Tensor::vector(kernels::matvec_t(w.data(), y.data(), m, n))
    }

    pub fn concat(parts: &[&Tensor]) -> Tensor {
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
        for p in parts {
            data.extend_from_slice(p.data());
        }
        Tensor::vector(data)
    }

    pub fn reshape(a: &Tensor, shape: &[usize]) -> Tensor {
        a.clone().reshaped(shape).expect("reshape size mismatch")
    }

    pub fn binary(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(a.shape(), b.shape(), "elementwise shape mismatch");
        a.zip_map(b, f)
    }

    pub fn tanh_grad_mul(y: &Tensor, t: &Tensor) -> Tensor {
        binary(y, t, |y, t| (1.0 - y * y) * t)
    }
}

/// Value-only backend.
#[derive(Default)]
pub struct Plain {
    fault: Option<&'static str>,
}

impl Plain {
    pub fn new() -> Self {
        Self::default()
    }

    fn check(&mut self, name: &'static str, t: Tensor) -> Tensor {
        if self.fault.is_none() && !t.is_finite() {
            self.fault = Some(name);
        }
        t
    }
}

impl Ops for Plain {
    type V = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }
    fn primal<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }
    fn fault(&self) -> Option<&'static str> {
        self.fault
    }
    fn add(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let r = fwd::binary(a, b, |x, y| x + y);
        self.check("add", r)
    }
    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let r = fwd::binary(a, b, |x, y| x - y);
        self.check("sub", r)
    }
    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let r = fwd::binary(a, b, |x, y| x * y);
        self.check("mul", r)
    }
    fn div(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        let r = fwd::binary(a, b, |x, y| x / y);
        self.check("div", r)
    }
    fn scale(&mut self, a: &Tensor, c: f64) -> Tensor {
        let r = a.map(|x| x * c);
        self.check("scale", r)
    }
    fn add_scalar(&mut self, a: &Tensor, c: f64) -> Tensor {
        let r = a.map(|x| x + c);
        self.check("add_scalar", r)
    }
    fn tanh(&mut self, a: &Tensor) -> Tensor {
        a.map(f64::tanh)
    }
    fn tanh_grad_mul(&mut self, y: &Tensor, t: &Tensor) -> Tensor {
        let r = fwd::tanh_grad_mul(y, t);
        self.check("tanh_grad_mul", r)
    }
    fn sqrt(&mut self, a: &Tensor) -> Tensor {
        let r = a.map(f64::sqrt);
        self.check("sqrt", r)
    }
    fn conv2d(&mut self, x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Tensor {
        let r = fwd::conv2d(x, w, b);
        self.check("conv2d", r)
    }
    fn conv2d_t(&mut self, y: &Tensor, w: &Tensor) -> Tensor {
        let r = fwd::conv2d_t(y, w);
        self.check("conv2d_t", r)
    }
    fn resize(&mut self, x: &Tensor, s: Scale) -> Tensor {
        fwd::resize(x, s)
    }
    fn resize_t(&mut self, y: &Tensor, s: Scale) -> Tensor {
        fwd::resize_t(y, s)
    }
    fn matvec(&mut self, w: &Tensor, x: &Tensor) -> Tensor {
        let r = fwd::matvec(w, x);
        self.check("matvec", r)
    }
    fn matvec_t(&mut self, w: &Tensor, y: &Tensor) -> Tensor {
        let r = fwd::matvec_t(w, y);
        self.check("matvec_t", r)
    }
    fn concat(&mut self, parts: &[Tensor]) -> Tensor {
        let refs: Vec<&Tensor> = parts.iter().collect();
        fwd::concat(&refs)
    }
    fn reshape(&mut self, a: &Tensor, shape: &[usize]) -> Tensor {
        fwd::reshape(a, shape)
    }
    fn sum(&mut self, a: &Tensor) -> Tensor {
        Tensor::scalar(a.data().iter().sum())
    }
    fn dot(&mut self, a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!(a.len(), b.len(), "dot size mismatch");
        let r = Tensor::scalar(a.dot(b));
        self.check("dot", r)
    }
}
