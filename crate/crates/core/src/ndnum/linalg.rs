//! Small dense matrices (latent-side objects, at most 64×64) and their
//! spectral decompositions.

use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAX_SMALL: usize = 64;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SmallMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl SmallMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        SmallMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(SmallMatrix { rows, cols, data })
    }

    /// Builds a matrix whose `j`-th column is `cols[j]`.
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let cols = columns.len();
        let rows = columns.first().map_or(0, |c| c.len());
        let mut m = Self::zeros(rows, cols);
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                m.data[i * cols + j] = v;
            }
        }
        m
    }

    pub fn diag(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = v;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &SmallMatrix) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension mismatch");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    /// `selfᵀ · self`.
    pub fn gram(&self) -> Self {
        self.transpose().matmul(self)
    }

    pub fn sub(&self, other: &SmallMatrix) -> Self {
        SmallMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        SmallMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|a| a * c).collect(),
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_parts(vec![self.rows, self.cols], self.data.clone())
    }
}

/// Symmetric eigendecomposition `M = Q diag(λ) Qᵀ` by cyclic Jacobi
/// rotations. Eigenvalues are sorted in descending order.
pub fn sym_eig(m: &SmallMatrix) -> Result<(SmallMatrix, Vec<f64>)> {
    let n = m.rows;
    if m.cols != n {
        return Err(Error::invalid(format!("sym_eig needs a square matrix, got {}x{}", m.rows, m.cols)));
    }
    if n > MAX_SMALL {
        return Err(Error::invalid(format!("sym_eig limited to {MAX_SMALL}x{MAX_SMALL}, got {n}")));
    }
    let fro = m.frobenius();
    let asym = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m.get(i, j) - m.get(j, i)).powi(2))
        .sum::<f64>()
        .sqrt();
    if asym > 1e-10 * fro {
        return Err(Error::invalid(format!(
            "sym_eig input not symmetric: asymmetry {asym:.3e} vs norm {fro:.3e}"
        )));
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations act on a truly symmetric matrix
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (a.get(i, j) + a.get(j, i));
            a.set(i, j, s);
            a.set(j, i, s);
        }
    }
    let mut q = SmallMatrix::identity(n);

    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a.get(i, j).powi(2))
            .sum();
        if off.sqrt() <= 1e-15 * fro.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for r in (p + 1)..n {
                let apr = a.get(p, r);
                if apr == 0.0 {
                    continue;
                }
                let app = a.get(p, p);
                let arr = a.get(r, r);
                let theta = (arr - app) / (2.0 * apr);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akr = a.get(k, r);
                    a.set(k, p, c * akp - s * akr);
                    a.set(k, r, s * akp + c * akr);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let ark = a.get(r, k);
                    a.set(p, k, c * apk - s * ark);
                    a.set(r, k, s * apk + c * ark);
                }
                for k in 0..n {
                    let qkp = q.get(k, p);
                    let qkr = q.get(k, r);
                    q.set(k, p, c * qkp - s * qkr);
                    q.set(k, r, s * qkp + c * qkr);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(j, j).total_cmp(&a.get(i, i)));
    let values: Vec<f64> = order.iter().map(|&i| a.get(i, i)).collect();
    let mut qs = SmallMatrix::zeros(n, n);
    for (new_j, &old_j) in order.iter().enumerate() {
        for i in 0..n {
            qs.set(i, new_j, q.get(i, old_j));
        }
    }
    Ok((qs, values))
}

/// Thin SVD `M = U diag(σ) Vᵀ` by one-sided Jacobi. `σ` is descending and
/// has `min(rows, cols)` entries.
pub fn svd_small(m: &SmallMatrix) -> Result<(SmallMatrix, Vec<f64>, SmallMatrix)> {
    if m.rows > MAX_SMALL || m.cols > MAX_SMALL {
        return Err(Error::invalid(format!(
            "svd_small limited to {MAX_SMALL}x{MAX_SMALL}, got {}x{}",
            m.rows, m.cols
        )));
    }
    if m.rows < m.cols {
        let (u, s, v) = svd_small(&m.transpose())?;
        return Ok((v, s, u));
    }
    let (rows, cols) = (m.rows, m.cols);
    let mut a = m.clone();
    let mut v = SmallMatrix::identity(cols);
    for _sweep in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for r in (p + 1)..cols {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for i in 0..rows {
                    let x = a.get(i, p);
                    let y = a.get(i, r);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma.abs() <= 1e-15 * (alpha * beta).sqrt() || gamma == 0.0 {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for i in 0..rows {
                    let x = a.get(i, p);
                    let y = a.get(i, r);
                    a.set(i, p, c * x - s * y);
                    a.set(i, r, s * x + c * y);
                }
                for i in 0..cols {
                    let x = v.get(i, p);
                    let y = v.get(i, r);
                    v.set(i, p, c * x - s * y);
                    v.set(i, r, s * x + c * y);
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols)
        .map(|j| (0..rows).map(|i| a.get(i, j).powi(2)).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..cols).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let mut u = SmallMatrix::zeros(rows, cols);
    let mut vs = SmallMatrix::zeros(cols, cols);
    let mut sigma = Vec::with_capacity(cols);
    for (new_j, &old_j) in order.iter().enumerate() {
        let s = norms[old_j];
        sigma.push(s);
        for i in 0..rows {
            u.set(i, new_j, if s > 0.0 { a.get(i, old_j) / s } else { 0.0 });
        }
        for i in 0..cols {
            vs.set(i, new_j, v.get(i, old_j));
        }
    }
    Ok((u, sigma, vs))
}

/// Power iteration on `JᵀJ` using only products with `J` and `Jᵀ`.
///
/// Returns `‖J v_k‖` for the `k = iters`-th normalized iterate, which
/// is a nondecreasing estimate of `σ_max(J)`.
pub fn power_iter_gain<F, G>(mut jvp: F, mut vjp: G, d: usize, iters: usize, probe: &Tensor) -> Result<f64>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
    G: FnMut(&Tensor) -> Result<Tensor>,
{
    if probe.len() != d {
        return Err(Error::invalid(format!("probe has {} entries, expected {d}", probe.len())));
    }
    let pn = probe.norm();
    if pn == 0.0 || !pn.is_finite() {
        return Err(Error::invalid("power iteration probe must be nonzero and finite"));
    }
    let mut v = probe.map(|x| x / pn);
    let mut jv = jvp(&v)?;
    for _ in 0..iters {
        let w = vjp(&jv)?;
        let wn = w.norm();
        if wn == 0.0 {
            return Ok(0.0);
        }
        v = w.map(|x| x / wn);
        jv = jvp(&v)?;
    }
    Ok(jv.norm())
}
