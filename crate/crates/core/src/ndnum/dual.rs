//! Forward-mode differentiation by dual-number propagation.
//!
//! [`DualOver<B>`] pairs every value of an inner backend `B` with an
//! optional tangent; `None` stands for an identically zero tangent so
//! parameters that are not being perturbed cost nothing. Because the
//! tangent rules are written in terms of `B`'s own primitives,
//! `DualOver<Tape>` yields JVPs that are themselves differentiable.

use super::ops::{Ops, Plain, Scale};
use super::tensor::Tensor;

/// A primal value with its tangent.
#[derive(Clone, Debug)]
pub struct Dual<V> {
    pub primal: V,
    pub tangent: Option<V>,
}

/// Dual numbers over plain tensors.
pub type DualTensor = Dual<Tensor>;

impl<V> Dual<V> {
    pub fn new(primal: V, tangent: V) -> Self {
        Dual {
            primal,
            tangent: Some(tangent),
        }
    }

    pub fn constant(primal: V) -> Self {
        Dual {
            primal,
            tangent: None,
        }
    }
}

pub struct DualOver<B: Ops> {
    pub inner: B,
}

impl DualOver<Plain> {
    pub fn plain() -> Self {
        DualOver { inner: Plain::new() }
    }
}

impl<B: Ops> DualOver<B> {
    pub fn new(inner: B) -> Self {
        DualOver { inner }
    }

    /// Lifts an inner value with a given tangent.
    pub fn seed(&mut self, primal: B::V, tangent: B::V) -> Dual<B::V> {
        Dual::new(primal, tangent)
    }

    /// Materialized tangent (zeros when absent).
    pub fn tangent_of(&mut self, v: &Dual<B::V>) -> B::V {
        match &v.tangent {
            Some(t) => t.clone(),
            None => {
                let shape = self.inner.primal(&v.primal).shape().to_vec();
                self.inner.constant(Tensor::zeros(&shape))
            }
        }
    }

    fn add_opt(&mut self, a: Option<B::V>, b: Option<B::V>) -> Option<B::V> {
        match (a, b) {
            (Some(a), Some(b)) => Some(self.inner.add(&a, &b)),
            (a, None) => a,
            (None, b) => b,
        }
    }

    fn zeros_like(&mut self, v: &B::V) -> B::V {
        let shape = self.inner.primal(v).shape().to_vec();
        self.inner.constant(Tensor::zeros(&shape))
    }
}

impl<B: Ops> Ops for DualOver<B> {
    type V = Dual<B::V>;

    fn constant(&mut self, t: Tensor) -> Self::V {
        Dual::constant(self.inner.constant(t))
    }

    fn primal<'a>(&'a self, v: &'a Self::V) -> &'a Tensor {
        self.inner.primal(&v.primal)
    }

    fn fault(&self) -> Option<&'static str> {
        self.inner.fault()
    }

    fn add(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        let p = self.inner.add(&a.primal, &b.primal);
        let t = self.add_opt(a.tangent.clone(), b.tangent.clone());
        Dual { primal: p, tangent: t }
    }

    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        let p = self.inner.sub(&a.primal, &b.primal);
        let t = match (&a.tangent, &b.tangent) {
            (Some(x), Some(y)) => Some(self.inner.sub(x, y)),
            (Some(x), None) => Some(x.clone()),
            (None, Some(y)) => Some(self.inner.scale(y, -1.0)),
            (None, None) => None,
        };
        Dual { primal: p, tangent: t }
    }

    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        let p = self.inner.mul(&a.primal, &b.primal);
        let ta = a.tangent.as_ref().map(|t| self.inner.mul(t, &b.primal));
        let tb = b.tangent.as_ref().map(|t| self.inner.mul(&a.primal, t));
        let t = self.add_opt(ta, tb);
        Dual { primal: p, tangent: t }
    }

    fn div(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        // d(a/b) = (da - (a/b) db) / b
        let p = self.inner.div(&a.primal, &b.primal);
        let tb = b.tangent.as_ref().map(|t| self.inner.mul(&p, t));
        let num = match (a.tangent.clone(), tb) {
            (Some(x), Some(y)) => Some(self.inner.sub(&x, &y)),
            (Some(x), None) => Some(x),
            (None, Some(y)) => Some(self.inner.scale(&y, -1.0)),
            (None, None) => None,
        };
        let t = num.map(|n| self.inner.div(&n, &b.primal));
        Dual { primal: p, tangent: t }
    }

    fn scale(&mut self, a: &Self::V, c: f64) -> Self::V {
        let p = self.inner.scale(&a.primal, c);
        let t = a.tangent.as_ref().map(|t| self.inner.scale(t, c));
        Dual { primal: p, tangent: t }
    }

    fn add_scalar(&mut self, a: &Self::V, c: f64) -> Self::V {
        let p = self.inner.add_scalar(&a.primal, c);
        Dual {
            primal: p,
            tangent: a.tangent.clone(),
        }
    }

    fn tanh(&mut self, a: &Self::V) -> Self::V {
        let p = self.inner.tanh(&a.primal);
        let t = a.tangent.as_ref().map(|t| self.inner.tanh_grad_mul(&p, t));
        Dual { primal: p, tangent: t }
    }

    fn tanh_grad_mul(&mut self, y: &Self::V, t: &Self::V) -> Self::V {
        // d[(1 - y²) t] = (1 - y²) dt - 2 y t dy
        let p = self.inner.tanh_grad_mul(&y.primal, &t.primal);
        let from_t = t
            .tangent
            .as_ref()
            .map(|dt| self.inner.tanh_grad_mul(&y.primal, dt));
        let from_y = y.tangent.as_ref().map(|dy| {
            let yt = self.inner.mul(&y.primal, &t.primal);
            let m = self.inner.mul(&yt, dy);
            self.inner.scale(&m, -2.0)
        });
        let tan = self.add_opt(from_t, from_y);
        Dual { primal: p, tangent: tan }
    }

    fn sqrt(&mut self, a: &Self::V) -> Self::V {
        let p = self.inner.sqrt(&a.primal);
        let t = a.tangent.as_ref().map(|t| {
            let h = self.inner.scale(t, 0.5);
            self.inner.div(&h, &p)
        });
        Dual { primal: p, tangent: t }
    }

    fn conv2d(&mut self, x: &Self::V, w: &Self::V, b: Option<&Self::V>) -> Self::V {
        let p = self
            .inner
            .conv2d(&x.primal, &w.primal, b.map(|b| &b.primal));
        let tx = x
            .tangent
            .as_ref()
            .map(|t| self.inner.conv2d(t, &w.primal, None));
        let tb = b.and_then(|b| b.tangent.clone());
        let tw = match (&w.tangent, tb) {
            (Some(tw), tb) => Some(self.inner.conv2d(&x.primal, tw, tb.as_ref())),
            (None, Some(tb)) => {
                let zw = self.zeros_like(&w.primal);
                Some(self.inner.conv2d(&x.primal, &zw, Some(&tb)))
            }
            (None, None) => None,
        };
        let t = self.add_opt(tx, tw);
        Dual { primal: p, tangent: t }
    }

    fn conv2d_t(&mut self, y: &Self::V, w: &Self::V) -> Self::V {
        let p = self.inner.conv2d_t(&y.primal, &w.primal);
        let ty = y
            .tangent
            .as_ref()
            .map(|t| self.inner.conv2d_t(t, &w.primal));
        let tw = w
            .tangent
            .as_ref()
            .map(|t| self.inner.conv2d_t(&y.primal, t));
        let t = self.add_opt(ty, tw);
        Dual { primal: p, tangent: t }
    }

    fn resize(&mut self, x: &Self::V, s: Scale) -> Self::V {
        let p = self.inner.resize(&x.primal, s);
        let t = x.tangent.as_ref().map(|t| self.inner.resize(t, s));
        Dual { primal: p, tangent: t }
    }

    fn resize_t(&mut self, y: &Self::V, s: Scale) -> Self::V {
        let p = self.inner.resize_t(&y.primal, s);
        let t = y.tangent.as_ref().map(|t| self.inner.resize_t(t, s));
        Dual { primal: p, tangent: t }
    }

    fn matvec(&mut self, w: &Self::V, x: &Self::V) -> Self::V {
        let p = self.inner.matvec(&w.primal, &x.primal);
        let tx = x.tangent.as_ref().map(|t| self.inner.matvec(&w.primal, t));
        let tw = w.tangent.as_ref().map(|t| self.inner.matvec(t, &x.primal));
        let t = self.add_opt(tx, tw);
        Dual { primal: p, tangent: t }
    }

    fn matvec_t(&mut self, w: &Self::V, y: &Self::V) -> Self::V {
        let p = self.inner.matvec_t(&w.primal, &y.primal);
        let ty = y.tangent.as_ref().map(|t| self.inner.matvec_t(&w.primal, t));
        let tw = w.tangent.as_ref().map(|t| self.inner.matvec_t(t, &y.primal));
        let t = self.add_opt(ty, tw);
        Dual { primal: p, tangent: t }
    }

    fn concat(&mut self, parts: &[Self::V]) -> Self::V {
        let prim: Vec<B::V> = parts.iter().map(|p| p.primal.clone()).collect();
        let p = self.inner.concat(&prim);
        let t = if parts.iter().any(|p| p.tangent.is_some()) {
            let tans: Vec<B::V> = parts.iter().map(|p| self.tangent_of(p)).collect();
            Some(self.inner.concat(&tans))
        } else {
            None
        };
        Dual { primal: p, tangent: t }
    }

    fn reshape(&mut self, a: &Self::V, shape: &[usize]) -> Self::V {
        let p = self.inner.reshape(&a.primal, shape);
        let t = a.tangent.as_ref().map(|t| self.inner.reshape(t, shape));
        Dual { primal: p, tangent: t }
    }

    fn sum(&mut self, a: &Self::V) -> Self::V {
        let p = self.inner.sum(&a.primal);
        let t = a.tangent.as_ref().map(|t| self.inner.sum(t));
        Dual { primal: p, tangent: t }
    }

    fn dot(&mut self, a: &Self::V, b: &Self::V) -> Self::V {
        let p = self.inner.dot(&a.primal, &b.primal);
        let ta = a.tangent.as_ref().map(|t| self.inner.dot(t, &b.primal));
        let tb = b.tangent.as_ref().map(|t| self.inner.dot(&a.primal, t));
        let t = self.add_opt(ta, tb);
        Dual { primal: p, tangent: t }
    }
}
