//! Reverse-mode automatic differentiation on an explicit tensor tape.
//!
//! Every primitive pushes one node holding its output and the indices of
//! its inputs. [`Tape::backward`] sweeps the nodes in reverse and
//! accumulates adjoints, skipping nodes that do not depend on any
//! [`Tape::var`] leaf.

use super::kernels;
use super::ops::{fwd, Ops, Scale};
use super::tensor::Tensor;

/// Handle to a tape node. Only meaningful for the tape that created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Scale(usize, f64),
    AddScalar(usize, f64),
    Tanh(usize),
    TanhGradMul(usize, usize),
    Sqrt(usize),
    Conv2d(usize, usize, Option<usize>),
    Conv2dT(usize, usize),
    Resize(usize, Scale),
    ResizeT(usize, Scale),
    MatVec(usize, usize),
    MatVecT(usize, usize),
    Concat(Vec<usize>),
    Reshape(usize),
    Sum(usize),
    Dot(usize, usize),
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    fault: Option<&'static str>,
}

/// Adjoints produced by one reverse sweep.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Adjoint of `v`; zeros when `v` does not influence the output.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn var(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        if self.fault.is_none() && !value.is_finite() {
            self.fault = Some(op_name(&op));
        }
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].needs_grad)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    /// Reverse sweep from a single-element output.
    ///
    /// Panics if `out` is not a scalar; callers that accept user input go
    /// through [`super::ad::grad`], which rejects that case as an error.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.val(out.0).len(), 1, "backward from a non-scalar node");
        self.backward_with(out, Tensor::full(self.val(out.0).shape(), 1.0))
    }

    /// Reverse sweep seeded with an arbitrary cotangent `seed` at `out`.
    pub fn backward_with(&self, out: Var, seed: Tensor) -> Gradients {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        grads[out.0] = Some(seed);
        for i in (0..=out.0).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let needs = |j: usize| self.nodes[j].needs_grad;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if needs(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(grads, *a, g.clone());
                }
                if needs(*b) {
                    acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    acc(grads, *a, g.zip_map(self.val(*b), |x, y| x * y));
                }
                if needs(*b) {
                    acc(grads, *b, g.zip_map(self.val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = self.val(*b);
                if needs(*a) {
                    acc(grads, *a, g.zip_map(bv, |x, y| x / y));
                }
                if needs(*b) {
                    let out = &self.nodes[i].value;
                    let t = g.zip_map(out, |x, o| -x * o);
                    acc(grads, *b, t.zip_map(bv, |x, y| x / y));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, *a, g.map(|x| x * c));
            }
            Op::AddScalar(a, _) => acc(grads, *a, g.clone()),
            Op::Tanh(a) => {
                let y = &self.nodes[i].value;
                acc(grads, *a, fwd::tanh_grad_mul(y, g));
            }
            Op::TanhGradMul(y, t) => {
                let yv = self.val(*y);
                if needs(*t) {
                    acc(grads, *t, fwd::tanh_grad_mul(yv, g));
                }
                if needs(*y) {
                    let tv = self.val(*t);
                    let mut r = g.zip_map(yv, |gg, yy| -2.0 * gg * yy);
                    r = r.zip_map(tv, |a, b| a * b);
                    acc(grads, *y, r);
                }
            }
            Op::Sqrt(a) => {
                let out = &self.nodes[i].value;
                acc(grads, *a, g.zip_map(out, |x, o| 0.5 * x / o));
            }
            Op::Conv2d(x, w, b) => {
                let xv = self.val(*x);
                let wv = self.val(*w);
                let geom = fwd::conv_geom(xv, wv);
                if needs(*x) {
                    acc(grads, *x, fwd::conv2d_t(g, wv));
                }
                if needs(*w) {
                    let dw = kernels::conv2d_weight_grad(xv.data(), g.data(), geom);
                    acc(grads, *w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
                if let Some(b) = b {
                    if needs(*b) {
                        let db = kernels::channel_sums(g.data(), geom.c_out);
                        acc(grads, *b, Tensor::from_parts(vec![geom.c_out], db));
                    }
                }
            }
            Op::Conv2dT(y, w) => {
                let yv = self.val(*y);
                let wv = self.val(*w);
                if needs(*y) {
                    acc(grads, *y, fwd::conv2d(g, wv, None));
                }
                if needs(*w) {
                    let geom = fwd::conv_geom(g, wv);
                    let dw = kernels::conv2d_weight_grad(g.data(), yv.data(), geom);
                    acc(grads, *w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
            }
            Op::Resize(x, s) => acc(grads, *x, fwd::resize_t(g, *s)),
            Op::ResizeT(y, s) => acc(grads, *y, fwd::resize(g, *s)),
            Op::MatVec(w, x) => {
                let wv = self.val(*w);
                let xv = self.val(*x);
                if needs(*w) {
                    let dw = kernels::outer(g.data(), xv.data());
                    acc(grads, *w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
                if needs(*x) {
                    acc(grads, *x, fwd::matvec_t(wv, g));
                }
            }
            Op::MatVecT(w, y) => {
                let wv = self.val(*w);
                let yv = self.val(*y);
                if needs(*w) {
                    let dw = kernels::outer(yv.data(), g.data());
                    acc(grads, *w, Tensor::from_parts(wv.shape().to_vec(), dw));
                }
                if needs(*y) {
                    acc(grads, *y, fwd::matvec(wv, g));
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.val(p).len();
                    if needs(p) {
                        let piece = g.data()[off..off + len].to_vec();
                        acc(
                            grads,
                            p,
                            Tensor::from_parts(self.val(p).shape().to_vec(), piece),
                        );
                    }
                    off += len;
                }
            }
            Op::Reshape(a) => {
                let shape = self.val(*a).shape().to_vec();
                acc(grads, *a, fwd::reshape(g, &shape));
            }
            Op::Sum(a) => {
                let s = g.item();
                acc(grads, *a, Tensor::full(self.val(*a).shape(), s));
            }
            Op::Dot(a, b) => {
                let s = g.item();
                if needs(*a) {
                    acc(grads, *a, self.val(*b).map(|x| x * s));
                }
                if needs(*b) {
                    acc(grads, *b, self.val(*a).map(|x| x * s));
                }
            }
        }
    }

    /// Recomputes every node from its recorded inputs.
    pub fn replay(&self) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = |i: &usize| &out[*i];
            let t = match &node.op {
                Op::Leaf => node.value.clone(),
                Op::Add(a, b) => fwd::binary(v(a), v(b), |x, y| x + y),
                Op::Sub(a, b) => fwd::binary(v(a), v(b), |x, y| x - y),
                Op::Mul(a, b) => fwd::binary(v(a), v(b), |x, y| x * y),
                Op::Div(a, b) => fwd::binary(v(a), v(b), |x, y| x / y),
                Op::Scale(a, c) => v(a).map(|x| x * c),
                Op::AddScalar(a, c) => v(a).map(|x| x + c),
                Op::Tanh(a) => v(a).map(f64::tanh),
                Op::TanhGradMul(y, t) => fwd::tanh_grad_mul(v(y), v(t)),
                Op::Sqrt(a) => v(a).map(f64::sqrt),
                Op::Conv2d(x, w, b) => fwd::conv2d(v(x), v(w), b.as_ref().map(v)),
                Op::Conv2dT(y, w) => fwd::conv2d_t(v(y), v(w)),
                Op::Resize(x, s) => fwd::resize(v(x), *s),
                Op::ResizeT(y, s) => fwd::resize_t(v(y), *s),
                Op::MatVec(w, x) => fwd::matvec(v(w), v(x)),
                Op::MatVecT(w, y) => fwd::matvec_t(v(w), v(y)),
                Op::Concat(parts) => {
                    let refs: Vec<&Tensor> = parts.iter().map(v).collect();
                    fwd::concat(&refs)
                }
                Op::Reshape(a) => fwd::reshape(v(a), node.value.shape()),
                Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
                Op::Dot(a, b) => Tensor::scalar(v(a).dot(v(b))),
            };
            out.push(t);
        }
        out
    }
}

fn acc(grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
    match &mut grads[i] {
        Some(existing) => existing.add_assign(&g),
        slot => *slot = Some(g),
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Scale(..) => "scale",
        Op::AddScalar(..) => "add_scalar",
        Op::Tanh(..) => "tanh",
        Op::TanhGradMul(..) => "tanh_grad_mul",
        Op::Sqrt(..) => "sqrt",
        Op::Conv2d(..) => "conv2d",
        Op::Conv2dT(..) => "conv2d_t",
        Op::Resize(..) => "resize",
        Op::ResizeT(..) => "resize_t",
        Op::MatVec(..) => "matvec",
        Op::MatVecT(..) => "matvec_t",
        Op::Concat(..) => "concat",
        Op::Reshape(..) => "reshape",
        Op::Sum(..) => "sum",
        Op::Dot(..) => "dot",
    }
}

impl Ops for Tape {
    type V = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }
    fn primal<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.0].value
    }
    fn fault(&self) -> Option<&'static str> {
        self.fault
    }
    fn add(&mut self, a: &Var, b: &Var) -> Var {
        let t = fwd::binary(self.val(a.0), self.val(b.0), |x, y| x + y);
        let ng = self.ng(&[a.0, b.0]);
        self.push(t, Op::Add(a.0, b.0), ng)
    }
    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        let t = fwd::binary(self.val(a.0), self.val(b.0), |x, y| x - y);
        let ng = self.ng(&[a.0, b.0]);
        self.push(t, Op::Sub(a.0, b.0), ng)
    }
    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        let t = fwd::binary(self.val(a.0), self.val(b.0), |x, y| x * y);
        let ng = self.ng(&[a.0, b.0]);
        self.push(t, Op::Mul(a.0, b.0), ng)
    }
    fn div(&mut self, a: &Var, b: &Var) -> Var {
        let t = fwd::binary(self.val(a.0), self.val(b.0), |x, y| x / y);
        let ng = self.ng(&[a.0, b.0]);
        self.push(t, Op::Div(a.0, b.0), ng)
    }
    fn scale(&mut self, a: &Var, c: f64) -> Var {
        let t = self.val(a.0).map(|x| x * c);
        let ng = self.ng(&[a.0]);
        self.push(t, Op::Scale(a.0, c), ng)
    }
    fn add_scalar(&mut self, a: &Var, c: f64) -> Var {
        let t = self.val(a.0).map(|x| x + c);
        let ng = self.ng(&[a.0]);
        self.push(t, Op::AddScalar(a.0, c), ng)
    }
    fn tanh(&mut self, a: &Var) -> Var {
        let t = self.val(a.0).map(f64::tanh);
        let ng = self.ng(&[a.0]);
        self.push(t, Op::Tanh(a.0), ng)
    }
    fn tanh_grad_mul(&mut self, y: &Var, t: &Var) -> Var {
        let r = fwd::tanh_grad_mul(self.val(y.0), self.val(t.0));
        let ng = self.ng(&[y.0, t.0]);
        self.push(r, Op::TanhGradMul(y.0, t.0), ng)
    }
    fn sqrt(&mut self, a: &Var) -> Var {
        let t = self.val(a.0).map(f64::sqrt);
        let ng = self.ng(&[a.0]);
        self.push(t, Op::Sqrt(a.0), ng)
    }
    fn conv2d(&mut self, x: &Var, w: &Var, b: Option<&Var>) -> Var {
        let t = fwd::conv2d(self.val(x.0), self.val(w.0), b.map(|b| self.val(b.0)));
        let mut ids = vec![x.0, w.0];
        ids.extend(b.map(|b| b.0));
        let ng = self.ng(&ids);
        self.push(t, Op::Conv2d(x.0, w.0, b.map(|b| b.0)), ng)
    }
    fn conv2d_t(&mut self, y: &Var, w: &Var) -> Var {
        let t = fwd::conv2d_t(self.val(y.0), self.val(w.0));
        let ng = self.ng(&[y.0, w.0]);
        self.push(t, Op::Conv2dT(y.0, w.0), ng)
    }
    fn resize(&mut self, x: &Var, s: Scale) -> Var {
        let t = fwd::resize(self.val(x.0), s);
        let ng = self.ng(&[x.0]);
        self.push(t, Op::Resize(x.0, s), ng)
    }
    fn resize_t(&mut self, y: &Var, s: Scale) -> Var {
        let t = fwd::resize_t(self.val(y.0), s);
        let ng = self.ng(&[y.0]);
        self.push(t, Op::ResizeT(y.0, s), ng)
    }
    fn matvec(&mut self, w: &Var, x: &Var) -> Var {
        let t = fwd::matvec(self.val(w.0), self.val(x.0));
        let ng = self.ng(&[w.0, x.0]);
        self.push(t, Op::MatVec(w.0, x.0), ng)
    }
    fn matvec_t(&mut self, w: &Var, y: &Var) -> Var {
        let t = fwd::matvec_t(self.val(w.0), self.val(y.0));
        let ng = self.ng(&[w.0, y.0]);
        self.push(t, Op::MatVecT(w.0, y.0), ng)
    }
    fn concat(&mut self, parts: &[Var]) -> Var {
        let refs: Vec<&Tensor> = parts.iter().map(|p| self.val(p.0)).collect();
        let t = fwd::concat(&refs);
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let ng = self.ng(&ids);
        self.push(t, Op::Concat(ids), ng)
    }
    fn reshape(&mut self, a: &Var, shape: &[usize]) -> Var {
        let t = fwd::reshape(self.val(a.0), shape);
        let ng = self.ng(&[a.0]);
        self.push(t, Op::Reshape(a.0), ng)
    }
    fn sum(&mut self, a: &Var) -> Var {
        let t = Tensor::scalar(self.val(a.0).data().iter().sum());
        let ng = self.ng(&[a.0]);
        self.push(t, Op::Sum(a.0), ng)
    }
    fn dot(&mut self, a: &Var, b: &Var) -> Var {
        assert_eq!(self.val(a.0).len(), self.val(b.0).len(), "dot size mismatch");
        let t = Tensor::scalar(self.val(a.0).dot(self.val(b.0)));
        let ng = self.ng(&[a.0, b.0]);
        self.push(t, Op::Dot(a.0, b.0), ng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn half_norm_squared_gradient_is_identity() {
        let mut t = Tape::new();
        let p = t.var(Tensor::vector(vec![1.0, -2.0, 3.5]));
        let s = t.sum_sq(&p);
        let l = t.scale(&s, 0.5);
        let g = t.backward(l);
        assert_eq!(g.wrt(p).data(), &[1.0, -2.0, 3.5]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let p = t.var(Tensor::vector(vec![1.0, 2.0]));
        let c = t.constant(Tensor::vector(vec![3.0, 4.0]));
        let m = t.mul(&p, &c);
        let l = t.sum(&m);
        assert!(!t.needs_grad(c));
        let g = t.backward(l);
        assert_eq!(g.wrt(p).data(), &[3.0, 4.0]);
        assert_eq!(g.wrt(c).data(), &[0.0, 0.0]);
    }

    #[test]
    fn replay_is_bit_identical() {
        let mut t = Tape::new();
        let x = t.var(Tensor::new(vec![2, 4, 4], (0..32).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap());
        let w = t.var(Tensor::new(vec![3, 2, 3, 3], (0..54).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap());
        let b = t.var(Tensor::vector(vec![0.1, -0.2, 0.3]));
        let y = t.conv2d(&x, &w, Some(&b));
        let a = t.tanh(&y);
        let r = t.resize(&a, Scale::Half);
        let q = t.resize_t(&r, Scale::Half);
        let c = t.conv2d_t(&q, &w);
        let s = t.sum_sq(&c);
        let _ = t.sqrt(&s);
        let replayed = t.replay();
        for (i, v) in replayed.iter().enumerate() {
            let orig = t.value(Var(i));
            assert_eq!(orig.shape(), v.shape());
            for (a, b) in orig.data().iter().zip(v.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn non_finite_values_are_attributed() {
        let mut t = Tape::new();
        let a = t.var(Tensor::vector(vec![-1.0]));
        let _ = t.sqrt(&a);
        assert_eq!(t.fault(), Some("sqrt"));
    }
}
