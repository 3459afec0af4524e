//! Clustering accuracy under the best one-to-one label matching.

use crate::error::{Error, Result};
use crate::io::LabelVector;

/// Largest label-space size accepted by [`cluster_accuracy`].
pub const MAX_ASSIGNMENT_K: usize = 64;

/// Minimum-cost perfect matching on a square cost matrix (Hungarian method
/// with row/column potentials, O(n³)). Returns `col_for_row`.
pub fn hungarian_min(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    // 1-based internally; index 0 is the virtual unmatched column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_for_row = vec![0; n];
    for j in 1..=n {
        col_for_row[row_of[j] - 1] = j - 1;
    }
    col_for_row
}

/// Fraction of samples correctly labeled under the best injective mapping
/// between predicted and true labels. Label spaces may differ in size; the
/// contingency table is padded to square with zeros.
pub fn cluster_accuracy(pred: &LabelVector, truth: &LabelVector) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            what: "label vector length",
            expected: truth.len(),
            found: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(Error::invalid("cluster accuracy of empty label vectors"));
    }
    let size = pred.k().max(truth.k());
    if size > MAX_ASSIGNMENT_K {
        return Err(Error::invalid(format!(
            "label space of size {size} exceeds the assignment limit {MAX_ASSIGNMENT_K}"
        )));
    }
    let mut counts = vec![vec![0usize; size]; size];
    for (&p, &t) in pred.labels().iter().zip(truth.labels()) {
        counts[p][t] += 1;
    }
    let cost: Vec<Vec<f64>> = counts
        .iter()
        .map(|r| r.iter().map(|&c| -(c as f64)).collect())
        .collect();
    let matching = hungarian_min(&cost);
    let matched: usize = matching.iter().enumerate().map(|(p, &t)| counts[p][t]).sum();
    Ok(matched as f64 / pred.len() as f64)
}
