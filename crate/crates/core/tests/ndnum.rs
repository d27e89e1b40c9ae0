mod common;

use common::*;
use georom::ndnum::{
    grad, jvp, power_iter_gain, svd_small, sym_eig, value_and_grad, vjp, DiffMap, Ops, ParamLoss, Scale, SmallMatrix,
    Tensor,
};

struct Identity;
impl DiffMap for Identity {
    fn apply<B: Ops>(&self, _b: &mut B, x: &B::V) -> B::V {
        x.clone()
    }
}

struct Linear(Tensor);
impl DiffMap for Linear {
    fn apply<B: Ops>(&self, b: &mut B, x: &B::V) -> B::V {
        let a = b.constant(self.0.clone());
        b.matvec(&a, x)
    }
}

struct Tanh;
impl DiffMap for Tanh {
    fn apply<B: Ops>(&self, b: &mut B, x: &B::V) -> B::V {
        b.tanh(x)
    }
}

/// Conv, resize, nonlinearity and a dense head: exercises every primitive
/// family the models use.
struct Composite {
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    dense: Tensor,
}

impl Composite {
    fn new(seed: u64) -> Self {
        Composite {
            w1: tensor(&[3, 2, 3, 3], seed).map(|x| 0.3 * x),
            b1: tensor(&[3], seed + 1),
            w2: tensor(&[2, 3, 3, 3], seed + 2).map(|x| 0.3 * x),
            dense: tensor(&[5, 2 * 4 * 4], seed + 3).map(|x| 0.2 * x),
        }
    }
}

impl DiffMap for Composite {
    fn apply<B: Ops>(&self, b: &mut B, x: &B::V) -> B::V {
        let w1 = b.constant(self.w1.clone());
        let b1 = b.constant(self.b1.clone());
        let w2 = b.constant(self.w2.clone());
        let d = b.constant(self.dense.clone());
        let h = b.conv2d(x, &w1, Some(&b1));
        let h = b.tanh(&h);
        let h = b.resize(&h, Scale::Half);
        let h = b.conv2d(&h, &w2, None);
        let h = b.tanh(&h);
        let sq = b.mul(&h, &h);
        let h = b.add(&h, &sq);
        let flat = b.reshape(&h, &[32]);
        let y = b.matvec(&d, &flat);
        let y = b.tanh(&y);
        b.scale(&y, 1.5)
    }
}

struct HalfNorm;
impl ParamLoss for HalfNorm {
    fn eval<B: Ops>(&self, b: &mut B, p: &[B::V]) -> B::V {
        let s = b.sum_sq(&p[0]);
        b.scale(&s, 0.5)
    }
}

struct ConstantLoss;
impl ParamLoss for ConstantLoss {
    fn eval<B: Ops>(&self, b: &mut B, _p: &[B::V]) -> B::V {
        b.constant(Tensor::scalar(4.0))
    }
}

struct VectorLoss;
impl ParamLoss for VectorLoss {
    fn eval<B: Ops>(&self, _b: &mut B, p: &[B::V]) -> B::V {
        p[0].clone()
    }
}

/// Mean squared error of a two-layer tanh perceptron on a fixed batch.
struct Mlp {
    xs: Vec<Tensor>,
    ys: Vec<Tensor>,
}

impl Mlp {
    fn new(seed: u64) -> Self {
        Mlp {
            xs: (0..4).map(|i| tensor(&[5], seed * 10 + i)).collect(),
            ys: (0..4).map(|i| tensor(&[3], seed * 10 + 5 + i)).collect(),
        }
    }

    fn params(seed: u64) -> Vec<Tensor> {
        vec![
            tensor(&[8, 5], seed + 100).map(|x| 0.5 * x),
            tensor(&[8], seed + 101),
            tensor(&[3, 8], seed + 102).map(|x| 0.5 * x),
            tensor(&[3], seed + 103),
        ]
    }
}

impl ParamLoss for Mlp {
    fn eval<B: Ops>(&self, b: &mut B, p: &[B::V]) -> B::V {
        let mut total = b.constant(Tensor::scalar(0.0));
        for (x, y) in self.xs.iter().zip(&self.ys) {
            let x = b.constant(x.clone());
            let y = b.constant(y.clone());
            let h = b.matvec(&p[0], &x);
            let h = b.add(&h, &p[1]);
            let h = b.tanh(&h);
            let o = b.matvec(&p[2], &h);
            let o = b.add(&o, &p[3]);
            let e = b.sub(&o, &y);
            let s = b.sum_sq(&e);
            total = b.add(&total, &s);
        }
        b.scale(&total, 1.0 / self.xs.len() as f64)
    }
}

fn plain_loss<L: ParamLoss>(l: &L, p: &[Tensor]) -> f64 {
    let mut b = georom::ndnum::Plain::new();
    let v = l.eval(&mut b, p);
    b.primal(&v).item()
}

#[test]
fn jvp_identity_and_linear() {
    let x = tensor(&[6], 1);
    let v = tensor(&[6], 2);
    let (y, t) = jvp(&Identity, &x, &v).unwrap();
    assert_eq!(y, x);
    assert_eq!(t, v);

    let a = tensor(&[4, 6], 3);
    let mut e1 = vec![0.0; 6];
    e1[0] = 1.0;
    let (_, t) = jvp(&Linear(a.clone()), &x, &Tensor::vector(e1)).unwrap();
    let col: Vec<f64> = (0..4).map(|i| a.data()[i * 6]).collect();
    assert_eq!(t.data(), col.as_slice());
}

#[test]
fn jvp_tanh_matches_central_difference() {
    let x = tensor(&[20], 4);
    let v = tensor(&[20], 5);
    let (_, t) = jvp(&Tanh, &x, &v).unwrap();
    let h = 1e-6;
    for i in 0..20 {
        let xp = x.data()[i] + h * v.data()[i];
        let xm = x.data()[i] - h * v.data()[i];
        let fd = (xp.tanh() - xm.tanh()) / (2.0 * h);
        assert!(rel_err(t.data()[i], fd) <= 1e-7, "coord {i}: {} vs {fd}", t.data()[i]);
    }
}

#[test]
fn jvp_rejects_shape_mismatch() {
    assert!(jvp(&Identity, &tensor(&[3], 1), &tensor(&[4], 1)).is_err());
    assert!(vjp(&Identity, &tensor(&[3], 1), &tensor(&[4], 1)).is_err());
}

#[test]
fn grad_trivial_cases() {
    let p = tensor(&[7], 6);
    let g = grad(&HalfNorm, &[p.clone()]).unwrap();
    assert_eq!(g[0], p);
    let g = grad(&ConstantLoss, &[p.clone()]).unwrap();
    assert!(g[0].data().iter().all(|&x| x == 0.0));
    assert!(grad(&VectorLoss, &[p]).is_err());
}

#[test]
fn mlp_gradient_matches_central_differences() {
    for seed in 1..=3 {
        let loss = Mlp::new(seed);
        let params = Mlp::params(seed);
        let (_, g) = value_and_grad(&loss, &params).unwrap();
        let h = 1e-6;
        for (k, p) in params.iter().enumerate() {
            for i in 0..p.len() {
                let mut pp = params.clone();
                pp[k].data_mut()[i] += h;
                let up = plain_loss(&loss, &pp);
                pp[k].data_mut()[i] -= 2.0 * h;
                let dn = plain_loss(&loss, &pp);
                let fd = (up - dn) / (2.0 * h);
                let an = g[k].data()[i];
                assert!(
                    (an - fd).abs() <= 1e-5 * an.abs().max(fd.abs()).max(1e-3),
                    "seed {seed} param {k}[{i}]: {an} vs {fd}"
                );
            }
        }
    }
}

#[test]
fn gradients_are_deterministic() {
    let loss = Mlp::new(9);
    let p = Mlp::params(9);
    let a = grad(&loss, &p).unwrap();
    let b = grad(&loss, &p).unwrap();
    assert_eq!(a, b);
}

#[test]
fn vjp_linear_rows_and_identity() {
    let a = tensor(&[4, 6], 7);
    let x = tensor(&[6], 8);
    for i in 0..4 {
        let mut e = vec![0.0; 4];
        e[i] = 1.0;
        let r = vjp(&Linear(a.clone()), &x, &Tensor::vector(e)).unwrap();
        assert_eq!(r.data(), &a.data()[i * 6..(i + 1) * 6]);
    }
    let w = tensor(&[6], 9);
    assert_eq!(vjp(&Identity, &x, &w).unwrap(), w);
}

#[test]
fn adjoint_identity_on_composite_map() {
    for seed in 0..5 {
        let f = Composite::new(seed * 10);
        let x = tensor(&[2, 8, 8], seed * 10 + 5);
        let v = tensor(&[2, 8, 8], seed * 10 + 6);
        let w = tensor(&[5], seed * 10 + 7);
        let (_, jv) = jvp(&f, &x, &v).unwrap();
        let jtw = vjp(&f, &x, &w).unwrap();
        let lhs = dot(w.data(), jv.data());
        let rhs = dot(jtw.data(), v.data());
        assert!(rel_err(lhs, rhs) <= 1e-12, "{lhs} vs {rhs}");
    }
}

#[test]
fn sym_eig_trivial_and_random() {
    let (q, l) = sym_eig(&SmallMatrix::identity(16)).unwrap();
    assert!(l.iter().all(|&x| x == 1.0));
    assert!(q.gram().sub(&SmallMatrix::identity(16)).frobenius() < 1e-14);

    let (q, l) = sym_eig(&SmallMatrix::diag(&[4.0, 1.0])).unwrap();
    assert_eq!(l, vec![4.0, 1.0]);
    for j in 0..2 {
        let c = q.column(j);
        assert_eq!(c.iter().filter(|x| x.abs() == 1.0).count(), 1);
        assert_eq!(c.iter().filter(|x| **x == 0.0).count(), 1);
    }

    let g = normal(12, 256);
    let m = SmallMatrix::from_rows(16, 16, (0..256).map(|k| g[k] + g[(k % 16) * 16 + k / 16]).collect()).unwrap();
    let (q, l) = sym_eig(&m).unwrap();
    let resid = m.matmul(&q).sub(&q.matmul(&SmallMatrix::diag(&l)));
    assert!(resid.frobenius() <= 1e-10 * m.frobenius());
}

#[test]
fn svd_trivial_and_gram_oracle() {
    let (_, s, _) = svd_small(&SmallMatrix::identity(16)).unwrap();
    assert!(s.iter().all(|&x| (x - 1.0).abs() < 1e-15));

    // ‖u‖ = 2, ‖v‖ = 3
    let u = [0.0, 2.0, 0.0, 0.0];
    let v = [1.0, 2.0, 2.0, 0.0];
    let m = SmallMatrix::from_rows(4, 4, (0..16).map(|k| u[k / 4] * v[k % 4]).collect()).unwrap();
    let (_, s, _) = svd_small(&m).unwrap();
    assert!((s[0] - 6.0).abs() < 1e-12);
    assert!(s[1..].iter().all(|x| x.abs() < 1e-12));

    let m = SmallMatrix::from_rows(16, 16, normal(13, 256)).unwrap();
    let (uu, s, vv) = svd_small(&m).unwrap();
    let rec = uu.matmul(&SmallMatrix::diag(&s)).matmul(&vv.transpose());
    assert!(rec.sub(&m).frobenius() <= 1e-10 * m.frobenius());
    let (_, l) = sym_eig(&m.gram()).unwrap();
    for (si, li) in s.iter().zip(&l) {
        assert!((si * si - li).abs() <= 1e-9 * l[0].max(1.0));
    }
}

fn linear_gain(a: &[f64], m: usize, n: usize, iters: usize, probe: &Tensor) -> f64 {
    power_iter_gain(
        |v| Ok(Tensor::vector(matvec(a, m, n, v.data()))),
        |w| Ok(Tensor::vector(matvec_t(a, m, n, w.data()))),
        n,
        iters,
        probe,
    )
    .unwrap()
}

#[test]
fn power_iteration_known_spectra() {
    let q: Vec<f64> = orthonormal_columns(64, 16, 21).into_iter().map(|x| 3.0 * x).collect();
    let g = linear_gain(&q, 64, 16, 50, &Tensor::full(&[16], 1.0));
    assert!((g - 3.0).abs() < 1e-6);

    let mut d = vec![0.0; 256];
    for i in 0..16 {
        d[i * 17] = if i == 0 { 5.0 } else { 1.0 };
    }
    let g = linear_gain(&d, 16, 16, 50, &Tensor::vector(normal(22, 16)));
    assert!((g - 5.0).abs() < 1e-6);
}

#[test]
fn power_iteration_matches_explicit_jacobian() {
    let (m, n) = (1024, 16);
    let a = normal(23, m * n);
    // σ_max from the eigenvalues of the assembled Gram matrix
    let (_, l) = sym_eig(&gram(&a, m, n)).unwrap();
    let sigma = l[0].sqrt();
    let g = linear_gain(&a, m, n, 300, &Tensor::full(&[16], 1.0));
    assert!((g - sigma).abs() <= 1e-6, "{g} vs {sigma}");

    let mut prev = 0.0;
    for iters in [0, 1, 2, 5, 10, 20] {
        let g = linear_gain(&a, m, n, iters, &Tensor::full(&[16], 1.0));
        assert!(g >= prev - 1e-12);
        prev = g;
    }
}
