#![allow(dead_code)]

use georom::ndnum::{rng, SmallMatrix, Tensor};

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Relative error of vectors measured against the larger norm.
pub fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let n = norm(a).max(norm(b)).max(1e-300);
    d / n
}

pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn normal(seed: u64, n: usize) -> Vec<f64> {
    rng::normal_vec(&mut rng::stream(seed, &[rng::tag("test")]), n)
}

pub fn tensor(shape: &[usize], seed: u64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), normal(seed, n)).unwrap()
}

/// Orthonormal columns by modified Gram-Schmidt on a Gaussian matrix,
/// as a row-major `rows × cols` buffer.
pub fn orthonormal_columns(rows: usize, cols: usize, seed: u64) -> Vec<f64> {
    let g = normal(seed, rows * cols);
    let mut q: Vec<Vec<f64>> = Vec::new();
    for j in 0..cols {
        let mut c: Vec<f64> = (0..rows).map(|i| g[i * cols + j]).collect();
        for _ in 0..2 {
            for p in &q {
                let a = dot(&c, p);
                c.iter_mut().zip(p).for_each(|(x, y)| *x -= a * y);
            }
        }
        let n = norm(&c);
        q.push(c.into_iter().map(|x| x / n).collect());
    }
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[i * cols + j] = q[j][i];
        }
    }
    out
}

/// Row-major `a (m×n) · x`.
pub fn matvec(a: &[f64], m: usize, n: usize, x: &[f64]) -> Vec<f64> {
    (0..m).map(|i| dot(&a[i * n..(i + 1) * n], x)).collect()
}

/// Row-major `aᵀ · y`.
pub fn matvec_t(a: &[f64], m: usize, n: usize, y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for i in 0..m {
        for j in 0..n {
            out[j] += a[i * n + j] * y[i];
        }
    }
    out
}

/// `aᵀa` for a row-major `m×n` matrix.
pub fn gram(a: &[f64], m: usize, n: usize) -> SmallMatrix {
    let mut g = SmallMatrix::zeros(n, n);
    for p in 0..n {
        for q in 0..n {
            g.set(p, q, (0..m).map(|i| a[i * n + p] * a[i * n + q]).sum());
        }
    }
    g
}

/// Index of the largest-magnitude entry of every gradient tensor.
pub fn dominant_coords(grads: &[Tensor]) -> Vec<(usize, usize)> {
    grads
        .iter()
        .enumerate()
        .map(|(t, g)| {
            let i = (0..g.len())
                .max_by(|&a, &b| g.data()[a].abs().total_cmp(&g.data()[b].abs()))
                .unwrap();
            (t, i)
        })
        .collect()
}

/// Worst relative error between `grads` and central differences of `f`
/// with step `h`, over the given `(tensor, entry)` coordinates and along
/// `dirs` (directional derivatives through every parameter at once).
pub fn fd_check(
    params: &[Tensor],
    grads: &[Tensor],
    coords: &[(usize, usize)],
    dirs: &[Vec<Tensor>],
    h: f64,
    f: impl Fn(&[Tensor]) -> f64,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &(t, i) in coords {
        let mut p = params.to_vec();
        p[t].data_mut()[i] += h;
        let fp = f(&p);
        p[t].data_mut()[i] -= 2.0 * h;
        let fm = f(&p);
        worst = worst.max(rel_err((fp - fm) / (2.0 * h), grads[t].data()[i]));
    }
    for d in dirs {
        let shift = |s: f64| -> Vec<Tensor> {
            params
                .iter()
                .zip(d)
                .map(|(p, v)| p.zip_map(v, |a, b| a + s * b))
                .collect()
        };
        let fd = (f(&shift(h)) - f(&shift(-h))) / (2.0 * h);
        let an: f64 = grads.iter().zip(d).map(|(g, v)| g.dot(v)).sum();
        worst = worst.max(rel_err(fd, an));
    }
    worst
}

/// Random unit-scale directions shaped like `params`.
pub fn directions(params: &[Tensor], n: usize, seed: u64) -> Vec<Vec<Tensor>> {
    (0..n)
        .map(|k| {
            params
                .iter()
                .enumerate()
                .map(|(i, p)| tensor(p.shape(), seed * 1000 + k as u64 * 100 + i as u64))
                .collect()
        })
        .collect()
}
