use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest sample size handled by exact sign enumeration.
pub const EXACT_MAX_N: usize = 12;
/// Smallest number of nonzero differences the signed-rank test accepts.
pub const MIN_NONZERO: usize = 5;

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (`n − 1` denominator); `None` below two values.
pub fn std_dev(v: &[f64]) -> Option<f64> {
    if v.len() < 2 {
        return None;
    }
    let m = mean(v);
    Some((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - 1) as f64).sqrt())
}

/// Normal-multiplier 95% half-width `1.96 · s / √n`.
pub fn ci95(v: &[f64]) -> Option<f64> {
    std_dev(v).map(|s| 1.96 * s / (v.len() as f64).sqrt())
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Cross-run mean with its CI half-width (`None` for a single run).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: Option<f64>,
    pub runs: usize,
}

/// Reduces each run's values (mean, or median when `run_median`), then
/// averages across runs.
pub fn aggregate(runs: &BTreeMap<String, Vec<f64>>, run_median: bool) -> Result<Summary> {
    let per_run: Vec<f64> = runs
        .iter()
        .filter(|(_, v)| !v.is_empty())
        .map(|(_, v)| if run_median { median(v) } else { mean(v) })
        .collect();
    if per_run.is_empty() {
        return Err(Error::invalid("no values to aggregate"));
    }
    Ok(Summary {
        mean: mean(&per_run),
        ci95: ci95(&per_run),
        runs: per_run.len(),
    })
}

/// Average ranks of `|d|` (ties share the mean rank), doubled so they are
/// integers, plus the tie-group sizes.
fn doubled_ranks(abs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut r2 = vec![0u64; abs.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, times two
        let r = (i + 1 + j + 1) as u64;
        for &k in &idx[i..=j] {
            r2[k] = r;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (r2, ties)
}

fn nonzero(diffs: &[f64]) -> Result<Vec<f64>> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("non-finite paired difference"));
    }
    Ok(diffs.iter().copied().filter(|&d| d != 0.0).collect())
}

/// `P(W⁺ ≥ w_obs)` by enumerating all sign assignments of the ranks.
pub fn wilcoxon_exact(diffs: &[f64]) -> Result<Option<f64>> {
    let d = nonzero(diffs)?;
    if d.is_empty() {
        return Ok(None);
    }
    if d.len() > 20 {
        return Err(Error::invalid("exact enumeration is limited to 20 differences"));
    }
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (r2, _) = doubled_ranks(&abs);
    let w_obs: u64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, r)| r).sum();
    let n = d.len();
    let mut hits = 0u64;
    for mask in 0u32..(1 << n) {
        let w: u64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
        if w >= w_obs {
            hits += 1;
        }
    }
    Ok(Some(hits as f64 / (1u64 << n) as f64))
}

/// Normal approximation with tie and continuity corrections.
pub fn wilcoxon_approx(diffs: &[f64]) -> Result<Option<f64>> {
    let d = nonzero(diffs)?;
    if d.is_empty() {
        return Ok(None);
    }
    let n = d.len() as f64;
    let abs: Vec<f64> = d.iter().map(|x| x.abs()).collect();
    let (r2, ties) = doubled_ranks(&abs);
    let w: f64 = d.iter().zip(&r2).filter(|(x, _)| **x > 0.0).map(|(_, &r)| r as f64 / 2.0).sum();
    let mu = n * (n + 1.0) / 4.0;
    let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie;
    if !(var > 0.0) {
        return Ok(None);
    }
    let z = (w - mu - 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(Some(1.0 - normal.cdf(z)))
}

/// One-sided signed-rank test of "differences tend to be positive".
/// Zeros are dropped; exact for up to 12 nonzero differences.
pub fn wilcoxon_one_sided(diffs: &[f64]) -> Result<Option<f64>> {
    let n = nonzero(diffs)?.len();
    if n == 0 {
        return Ok(None);
    }
    if n < MIN_NONZERO {
        return Err(Error::invalid(format!(
            "signed-rank test needs at least {MIN_NONZERO} nonzero differences, got {n}"
        )));
    }
    if n <= EXACT_MAX_N {
        wilcoxon_exact(diffs)
    } else {
        wilcoxon_approx(diffs)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedComparison {
    pub method: String,
    pub baseline: String,
    pub metric: String,
    /// Realization-level `Δ = ε(baseline) − ε(method)`, keyed by run.
    pub run_deltas: Vec<(String, f64)>,
    pub delta_mean: f64,
    pub std: Option<f64>,
    pub ci95: Option<f64>,
    pub p_value: Option<f64>,
}

/// Pairs `(run, window_id, value)` records, averages the per-window
/// differences within each run, and tests the run-level differences.
pub fn paired_compare(
    method: &str,
    baseline: &str,
    metric: &str,
    method_rows: &[(String, usize, f64)],
    baseline_rows: &[(String, usize, f64)],
) -> Result<PairedComparison> {
    let index = |rows: &[(String, usize, f64)]| -> Result<BTreeMap<(String, usize), f64>> {
        let mut m = BTreeMap::new();
        for (run, id, v) in rows {
            if m.insert((run.clone(), *id), *v).is_some() {
                return Err(Error::invalid(format!("duplicate record for run {run} window {id}")));
            }
        }
        Ok(m)
    };
    let a = index(method_rows)?;
    let b = index(baseline_rows)?;
    let ka: BTreeSet<_> = a.keys().cloned().collect();
    let kb: BTreeSet<_> = b.keys().cloned().collect();
    if ka != kb {
        let diff: Vec<String> = ka
            .symmetric_difference(&kb)
            .take(20)
            .map(|(r, w)| format!("{r}/{w}"))
            .collect();
        return Err(Error::invalid(format!(
            "window sets of {method} and {baseline} differ: {}",
            diff.join(", ")
        )));
    }
    if ka.is_empty() {
        return Err(Error::invalid("no paired records"));
    }
    let mut per_run: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (k, va) in &a {
        per_run.entry(k.0.clone()).or_default().push(b[k] - va);
    }
    let run_deltas: Vec<(String, f64)> = per_run.into_iter().map(|(r, d)| (r, mean(&d))).collect();
    let d: Vec<f64> = run_deltas.iter().map(|x| x.1).collect();
    // too few realizations leaves the p-value undefined rather than failing the table
    let p_value = wilcoxon_one_sided(&d).unwrap_or(None);
    Ok(PairedComparison {
        method: method.to_string(),
        baseline: baseline.to_string(),
        metric: metric.to_string(),
        delta_mean: mean(&d),
        std: std_dev(&d),
        ci95: ci95(&d),
        p_value,
        run_deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranks_with_ties() {
        let (r, t) = doubled_ranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![7, 2, 7, 4]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[1.0, 10.0, 1000.0]), 10.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }
}
