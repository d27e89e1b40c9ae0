use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndnum::Tensor;

/// 1-based epoch of the smallest validation value (first on ties).
pub fn best_epoch(curve: &[f64]) -> Result<usize> {
    if curve.is_empty() {
        return Err(Error::invalid("empty validation curve"));
    }
    let mut best = 0;
    for (i, &v) in curve.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::numerical("best_epoch", format!("non-finite validation value at epoch {}", i + 1)));
        }
        if v < curve[best] {
            best = i;
        }
    }
    Ok(best + 1)
}

/// Largest per-curve minimum: the smallest target every curve attains.
pub fn shared_target(curves: &[Vec<f64>]) -> Result<f64> {
    let mut t = f64::NEG_INFINITY;
    for c in curves {
        t = t.max(curve_min(c)?);
    }
    if curves.is_empty() {
        return Err(Error::invalid("no validation curves"));
    }
    Ok(t)
}

fn curve_min(c: &[f64]) -> Result<f64> {
    Ok(c[best_epoch(c)? - 1])
}

/// First 1-based epoch of each curve with validation `≤ target`; the target
/// defaults to [`shared_target`].
pub fn select_checkpoint_shared_target(curves: &[Vec<f64>], target: Option<f64>) -> Result<Vec<usize>> {
    let target = match target {
        Some(t) => t,
        None => shared_target(curves)?,
    };
    let mut out = Vec::with_capacity(curves.len());
    let mut missing = Vec::new();
    for (i, c) in curves.iter().enumerate() {
        match c.iter().position(|&v| v <= target) {
            Some(k) => out.push(k + 1),
            None => missing.push(format!("curve {i} (minimum {:e})", curve_min(c)?)),
        }
    }
    if !missing.is_empty() {
        return Err(Error::invalid(format!(
            "validation target {target:e} never attained by {}",
            missing.join(", ")
        )));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwaPlan {
    pub epochs: Vec<usize>,
    /// Fewer than three checkpoints were available.
    pub fallback: bool,
}

/// Epochs `e*, e*−1, e*−2`, truncated at epoch 1.
pub fn swa_epochs(e_star: usize) -> Result<SwaPlan> {
    if e_star == 0 {
        return Err(Error::invalid("epochs are 1-based"));
    }
    let epochs: Vec<usize> = (e_star.saturating_sub(2).max(1)..=e_star).rev().collect();
    Ok(SwaPlan {
        fallback: epochs.len() < 3,
        epochs,
    })
}

/// Arithmetic mean of each array across snapshots.
pub fn swa_average(snapshots: &[Vec<Tensor>]) -> Result<Vec<Tensor>> {
    let first = snapshots.first().ok_or_else(|| Error::invalid("no snapshots to average"))?;
    for s in snapshots {
        if s.len() != first.len() || s.iter().zip(first).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::invalid("snapshots have different layouts"));
        }
    }
    let k = snapshots.len() as f64;
    Ok((0..first.len())
        .map(|j| {
            let mut acc = Tensor::zeros(first[j].shape());
            for s in snapshots {
                acc.add_assign(&s[j]);
            }
            acc.scale_assign(1.0 / k);
            acc
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn swa_membership() {
        assert_eq!(swa_epochs(5).unwrap().epochs, vec![5, 4, 3]);
        let p = swa_epochs(2).unwrap();
        assert_eq!(p.epochs, vec![2, 1]);
        assert!(p.fallback);
    }

    #[test]
    fn best_epoch_first_minimum() {
        assert_eq!(best_epoch(&[3.0, 1.0, 1.0, 2.0]).unwrap(), 2);
        assert!(best_epoch(&[1.0, f64::NAN]).is_err());
    }
}
