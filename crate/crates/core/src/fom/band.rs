//! Banded matrices and a banded LU factorization with partial pivoting.

use crate::error::{Error, Result};

/// Square matrix stored by diagonals: row `i` holds columns `i - kl ..= i + ku`.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    n: usize,
    kl: usize,
    ku: usize,
    data: Vec<f64>,
}

impl Band {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Band {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    /// Adds `v` at `(i, j)`; panics outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] += v;
    }

    /// Columns of row `i` inside the band, as `(first column, values)`.
    fn row(&self, i: usize) -> (usize, &[f64]) {
        let w = self.width();
        let lo = i.saturating_sub(self.kl);
        let hi = (i + self.ku).min(self.n - 1);
        let off = lo + self.kl - i;
        (lo, &self.data[i * w + off..i * w + off + (hi - lo + 1)])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| {
                let (lo, r) = self.row(i);
                r.iter().zip(&x[lo..]).map(|(a, b)| a * b).sum()
            })
            .collect()
    }

    /// `sum_k c_k B_k` over matrices of identical structure.
    pub fn lin_comb(terms: &[(f64, &Band)]) -> Band {
        let first = terms[0].1;
        let mut out = Band::zeros(first.n, first.kl, first.ku);
        for (c, b) in terms {
            assert!(b.n == first.n && b.kl == first.kl && b.ku == first.ku);
            for (o, v) in out.data.iter_mut().zip(&b.data) {
                *o += c * v;
            }
        }
        out
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            (lo..=hi).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol)
        })
    }
}

/// LU factors of a banded matrix. Row interchanges widen the upper band
/// to `kl + ku`.
pub struct BandLu {
    n: usize,
    kl: usize,
    ku: usize,
    lu: Vec<f64>,
    piv: Vec<usize>,
}

impl BandLu {
    fn width(&self) -> usize {
        2 * self.kl + self.ku + 1
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width() + j + self.kl - i
    }

    pub fn factor(a: &Band) -> Result<Self> {
        let (n, kl, ku) = (a.n, a.kl, a.ku);
        let mut f = BandLu {
            n,
            kl,
            ku,
            lu: vec![0.0; n * (2 * kl + ku + 1)],
            piv: vec![0; n],
        };
        for i in 0..n {
            let (lo, r) = a.row(i);
            for (k, v) in r.iter().enumerate() {
                let ix = f.idx(i, lo + k);
                f.lu[ix] = *v;
            }
        }
        let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let uw = kl + ku;
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = f.lu[f.idx(k, k)].abs();
            for i in k + 1..=last {
                let v = f.lu[f.idx(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= f64::EPSILON * scale * n as f64 || !best.is_finite() {
                return Err(Error::numerical(
                    "band_lu",
                    format!("singular pivot {best:e} at column {k}"),
                ));
            }
            f.piv[k] = p;
            let jend = (k + uw).min(n - 1);
            if p != k {
                for j in k..=jend {
                    let (a_ix, b_ix) = (f.idx(k, j), f.idx(p, j));
                    f.lu.swap(a_ix, b_ix);
                }
            }
            let pivot = f.lu[f.idx(k, k)];
            for i in k + 1..=last {
                let ik = f.idx(i, k);
                let l = f.lu[ik] / pivot;
                f.lu[ik] = l;
                if l != 0.0 {
                    for j in k + 1..=jend {
                        let (ij, kj) = (f.idx(i, j), f.idx(k, j));
                        f.lu[ij] -= l * f.lu[kj];
                    }
                }
            }
        }
        Ok(f)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for k in 0..n {
            x.swap(k, self.piv[k]);
            let xk = x[k];
            if xk != 0.0 {
                for i in k + 1..=(k + self.kl).min(n - 1) {
                    x[i] -= self.lu[self.idx(i, k)] * xk;
                }
            }
        }
        let uw = self.kl + self.ku;
        for k in (0..n).rev() {
            let mut s = x[k];
            for j in k + 1..=(k + uw).min(n - 1) {
                s -= self.lu[self.idx(k, j)] * x[j];
            }
            x[k] = s / self.lu[self.idx(k, k)];
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for k in 0..n {
            let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
            a.swap(k, p);
            b.swap(k, p);
            for i in k + 1..n {
                let l = a[i][k] / a[k][k];
                for j in k..n {
                    a[i][j] -= l * a[k][j];
                }
                b[i] -= l * b[k];
            }
        }
        let mut x = vec![0.0; n];
        for k in (0..n).rev() {
            let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
            x[k] = (b[k] - s) / a[k][k];
        }
        x
    }

    #[test]
    fn pivoting_band_solve_matches_dense() {
        let n = 12;
        let mut a = Band::zeros(n, 2, 3);
        for i in 0..n {
            for j in i.saturating_sub(2)..=(i + 3).min(n - 1) {
                // small diagonal forces row interchanges
                let v = if i == j { 0.01 } else { ((i * 7 + j * 3) % 5) as f64 - 2.0 };
                a.add(i, j, v);
            }
        }
        let b: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
        let x = BandLu::factor(&a).unwrap().solve(&b);
        let y = dense_solve(a.to_dense(), b.clone());
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-10 * q.abs().max(1.0));
        }
    }

    #[test]
    fn singular_matrix_is_reported() {
        let a = Band::zeros(4, 1, 1);
        assert!(BandLu::factor(&a).is_err());
    }
}
