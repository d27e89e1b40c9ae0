use crate::error::{Error, Result};
use crate::ndnum::{sym_eig, SmallMatrix, Tensor};

/// Smallest eigenvalue of `AᵀA` accepted by the projection.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Reshapes a `[c_out, c_in, k, k]` kernel to `A ∈ R^{c_out × p}`.
fn as_matrix(w: &Tensor) -> Result<SmallMatrix> {
    let s = w.shape();
    if s.is_empty() {
        return Err(Error::invalid("Stiefel projection needs a matrix-shaped weight"));
    }
    let rows = s[0];
    let cols = w.len() / rows.max(1);
    SmallMatrix::from_rows(rows, cols, w.data().to_vec())
}

/// Projects the first-layer kernel onto the Stiefel manifold.
///
/// With `c_out ≥ p` returns `A (AᵀA)^{-1/2}` computed from the
/// eigendecomposition of `AᵀA`; otherwise normalizes rows to unit length.
/// The result has the input's kernel layout.
pub fn stiefel_project(w: &Tensor) -> Result<Tensor> {
    let a = as_matrix(w)?;
    let (rows, cols) = (a.rows, a.cols);
    let data = if rows >= cols {
        let (q, lam) = sym_eig(&a.gram())?;
        let min = lam.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min >= EIGEN_FLOOR) {
            return Err(Error::numerical(
                "stiefel_project",
                format!("rank-deficient kernel: smallest eigenvalue of AᵀA is {min:e}"),
            ));
        }
        let inv_sqrt: Vec<f64> = lam.iter().map(|&l| 1.0 / l.max(EIGEN_FLOOR).sqrt()).collect();
        let qd = q.matmul(&SmallMatrix::diag(&inv_sqrt));
        let root = qd.matmul(&q.transpose());
        a.matmul(&root).data
    } else {
        let mut d = a.data.clone();
        for row in d.chunks_mut(cols) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(n > 0.0) {
                return Err(Error::numerical("stiefel_project", "zero row in kernel"));
            }
            row.iter_mut().for_each(|v| *v /= n);
        }
        d
    };
    Tensor::new(w.shape().to_vec(), data)
}

/// `‖AᵀA − I‖_F` of the reshaped kernel.
pub fn orthonormality_residual(w: &Tensor) -> Result<f64> {
    let a = as_matrix(w)?;
    Ok(a.gram().sub(&SmallMatrix::identity(a.cols)).frobenius())
}
