//! Lloyd's k-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ClusterAssignment, ClusterMethod};
use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, LabelKind, LabelVector};

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub assignment: ClusterAssignment,
    /// Row-major `K × d` centroids.
    pub centroids: Vec<f64>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
}

impl KMeansFit {
    pub fn centroid(&self, c: usize) -> &[f64] {
        let d = self.centroids.len() / self.assignment.labels.k();
        &self.centroids[c * d..(c + 1) * d]
    }

    pub fn inertia(&self) -> f64 {
        *self.inertia_trace.last().expect("at least one assignment step")
    }
}

fn sq_dist(x: &[f32], c: &[f64]) -> f64 {
    x.iter()
        .zip(c)
        .map(|(&a, &b)| {
            let t = a as f64 - b;
            t * t
        })
        .sum()
}

fn nearest(x: &[f32], centroids: &[f64], d: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, cen) in centroids.chunks_exact(d).enumerate() {
        let dist = sq_dist(x, cen);
        if dist < best.1 {
            best = (c, dist);
        }
    }
    best
}

fn plus_plus_init(m: &EmbeddingMatrix, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = m.n();
    let d = m.d();
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut centroids: Vec<f64> = m.row_f64(chosen[0]);
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(m.row(i), &centroids)).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave `target` just past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap())
        } else {
            // Every remaining point duplicates a chosen one.
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(next);
        let row = m.row_f64(next);
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(m.row(i), &row));
        }
        centroids.extend(row);
    }
    debug_assert_eq!(centroids.len(), k * d);
    centroids
}

/// Partitions the rows of `m` into `k` clusters by squared Euclidean
/// distance. Iterates until assignments stop changing or `max_iters`
/// assignment steps have run; the returned assignment is always nearest
/// to the returned centroids.
pub fn kmeans(m: &EmbeddingMatrix, k: usize, max_iters: usize, seed: u64) -> Result<KMeansFit> {
    let n = m.n();
    let d = m.d();
    if k == 0 || k > n {
        return Err(Error::invalid(format!(
            "k-means needs 1 <= K <= n, got K = {k}, n = {n}"
        )));
    }
    if max_iters == 0 {
        return Err(Error::invalid("k-means max_iters must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(m, k, &mut rng);
    let mut assign: Vec<usize> = vec![usize::MAX; n];
    let mut trace = Vec::new();

    for iter in 0..max_iters {
        let step: Vec<(usize, f64)> = (0..n)
            .into_par_iter()
            .map(|i| nearest(m.row(i), &centroids, d))
            .collect();
        let inertia: f64 = step.iter().map(|s| s.1).sum();
        trace.push(inertia);
        let changed = step.iter().zip(&assign).any(|(s, &a)| s.0 != a);
        for (a, s) in assign.iter_mut().zip(&step) {
            *a = s.0;
        }
        if !changed || iter + 1 == max_iters {
            break;
        }

        let mut sums = vec![0.0; k * d];
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &v) in sums[c * d..(c + 1) * d].iter_mut().zip(m.row(i)) {
                *s += v as f64;
            }
        }
        let mut reseeded: Vec<usize> = Vec::new();
        for c in 0..k {
            let dst = &mut centroids[c * d..(c + 1) * d];
            if counts[c] > 0 {
                for (v, s) in dst.iter_mut().zip(&sums[c * d..(c + 1) * d]) {
                    *v = s / counts[c] as f64;
                }
            } else {
                let far = (0..n)
                    .filter(|i| !reseeded.contains(i))
                    .max_by(|&a, &b| step[a].1.total_cmp(&step[b].1).then(b.cmp(&a)))
                    .expect("K <= n leaves a point to reseed from");
                log::debug!("k-means: empty cluster {c} reseeded at point {far}");
                reseeded.push(far);
                for (v, &x) in dst.iter_mut().zip(m.row(far)) {
                    *v = x as f64;
                }
            }
        }
    }

    let labels = LabelVector::new(assign, k, LabelKind::Pseudo)?;
    Ok(KMeansFit {
        assignment: ClusterAssignment {
            labels,
            confidences: vec![1.0; n],
            method: ClusterMethod::Kmeans,
            warnings: Vec::new(),
        },
        centroids,
        inertia_trace: trace,
    })
}
