//! Per-cluster Gaussian fits and nearest-cluster Mahalanobis distance.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ScoreVector, Scorer};
use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CovarianceMode {
    #[default]
    PerCluster,
    /// One pooled within-cluster covariance shared by all clusters.
    Shared,
}

pub const DEFAULT_SHRINKAGE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GaussianComponent {
    pub cluster: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Lower Cholesky factor of the shrunk covariance, row-major `d × d`.
    pub chol: Vec<f64>,
    /// Added ridge `ε_c`.
    pub ridge: f64,
    /// Fitted with the isotropic fallback because the cluster had < 2 members.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct GaussianBank {
    pub d: usize,
    pub shrinkage: f64,
    pub mode: CovarianceMode,
    pub components: Vec<GaussianComponent>,
    /// Labels with no members; they contribute no component.
    pub empty_clusters: Vec<usize>,
}

impl GaussianBank {
    pub fn flagged_clusters(&self) -> Vec<usize> {
        self.components.iter().filter(|c| c.fallback).map(|c| c.cluster).collect()
    }
}

/// In-place lower Cholesky factorization of a symmetric `d × d` matrix.
///
/// A pivot at or below `1e-12` times the largest diagonal entry counts as
/// a failure, so exactly singular inputs are rejected despite rounding.
pub fn cholesky(a: &mut [f64], d: usize) -> Option<()> {
    let scale = (0..d).map(|i| a[i * d + i]).fold(0.0, f64::max);
    let tol = 1e-12 * scale;
    for j in 0..d {
        let mut diag = a[j * d + j];
        for k in 0..j {
            diag -= a[j * d + k] * a[j * d + k];
        }
        if !(diag > tol) || !diag.is_finite() {
            return None;
        }
        let ljj = diag.sqrt();
        a[j * d + j] = ljj;
        for i in j + 1..d {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= a[i * d + k] * a[j * d + k];
            }
            a[i * d + j] = s / ljj;
        }
        for k in j + 1..d {
            a[j * d + k] = 0.0;
        }
    }
    Some(())
}

/// `‖L⁻¹ v‖²` by forward substitution.
fn whitened_sq_norm(chol: &[f64], d: usize, v: &mut [f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..d {
        let row = &chol[i * d..i * d + i];
        let s: f64 = row.iter().zip(&v[..i]).map(|(l, z)| l * z).sum();
        let z = (v[i] - s) / chol[i * d + i];
        v[i] = z;
        acc += z * z;
    }
    acc
}

fn trace_of_covariance(rows: &[&[f32]], mean: &[f64], divisor: f64) -> f64 {
    let mut t = 0.0;
    for r in rows {
        for (&x, &m) in r.iter().zip(mean) {
            let dx = x as f64 - m;
            t += dx * dx;
        }
    }
    t / divisor
}

fn mean_of(rows: &[&[f32]], d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for r in rows {
        for (m, &x) in mean.iter_mut().zip(r.iter()) {
            *m += x as f64;
        }
    }
    let n = rows.len() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    mean
}

/// Adds the scatter `Σ (x-μ)(x-μ)ᵀ` of `rows` into `acc`.
fn add_scatter(acc: &mut [f64], rows: &[&[f32]], mean: &[f64], d: usize) {
    let mut diff = vec![0.0; d];
    for r in rows {
        for ((df, &x), &m) in diff.iter_mut().zip(r.iter()).zip(mean) {
            *df = x as f64 - m;
        }
        for i in 0..d {
            let di = diff[i];
            let out = &mut acc[i * d..(i + 1) * d];
            for (o, &dj) in out.iter_mut().zip(&diff) {
                *o += di * dj;
            }
        }
    }
}

fn shrink_and_factor(mut cov: Vec<f64>, d: usize, shrinkage: f64, cluster: usize) -> Result<(Vec<f64>, f64)> {
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let ridge = shrinkage * trace / d as f64;
    for i in 0..d {
        cov[i * d + i] += ridge;
    }
    cholesky(&mut cov, d).ok_or(Error::NotPositiveDefinite { cluster })?;
    Ok((cov, ridge))
}

/// Per-cluster means and shrunk covariances `Σ_c + ε_c I`, where `Σ_c` uses
/// the `n_c - 1` divisor and `ε_c = shrinkage · trace(Σ_c) / d`.
pub fn fit_gaussians(train: &EmbeddingMatrix, labels: &LabelVector, shrinkage: f64) -> Result<GaussianBank> {
    fit_gaussians_with(train, labels, shrinkage, CovarianceMode::PerCluster)
}

pub fn fit_gaussians_with(
    train: &EmbeddingMatrix,
    labels: &LabelVector,
    shrinkage: f64,
    mode: CovarianceMode,
) -> Result<GaussianBank> {
    labels.check_len(train.n())?;
    if !(shrinkage >= 0.0 && shrinkage.is_finite()) {
        return Err(Error::invalid(format!("shrinkage must be >= 0, got {shrinkage}")));
    }
    let d = train.d();
    let mut members: Vec<Vec<&[f32]>> = vec![Vec::new(); labels.k()];
    for (i, &l) in labels.labels().iter().enumerate() {
        members[l].push(train.row(i));
    }
    let all_rows: Vec<&[f32]> = train.rows().collect();
    let global_mean = mean_of(&all_rows, d);
    let global_trace = if train.n() > 1 {
        trace_of_covariance(&all_rows, &global_mean, (train.n() - 1) as f64)
    } else {
        0.0
    };

    let empty_clusters: Vec<usize> = (0..labels.k()).filter(|&c| members[c].is_empty()).collect();
    let means: Vec<Option<Vec<f64>>> = members
        .iter()
        .map(|rows| (!rows.is_empty()).then(|| mean_of(rows, d)))
        .collect();

    let shared = match mode {
        CovarianceMode::PerCluster => None,
        CovarianceMode::Shared => {
            let mut scatter = vec![0.0; d * d];
            let mut dof = 0usize;
            for (rows, mean) in members.iter().zip(&means) {
                if let Some(mean) = mean {
                    add_scatter(&mut scatter, rows, mean, d);
                    dof += rows.len() - 1;
                }
            }
            if dof == 0 {
                return Err(Error::invalid(
                    "shared covariance needs at least one cluster with two members",
                ));
            }
            scatter.iter_mut().for_each(|v| *v /= dof as f64);
            Some(shrink_and_factor(scatter, d, shrinkage, 0)?)
        }
    };

    let mut components = Vec::new();
    for (c, (rows, mean)) in members.iter().zip(means).enumerate() {
        let Some(mean) = mean else { continue };
        let (chol, ridge, fallback) = if let Some((chol, ridge)) = &shared {
            (chol.clone(), *ridge, false)
        } else if rows.len() < 2 {
            let var = global_trace / d as f64;
            let mut chol = vec![0.0; d * d];
            for i in 0..d {
                chol[i * d + i] = var.sqrt();
            }
            if !(var > 0.0) {
                return Err(Error::NotPositiveDefinite { cluster: c });
            }
            log::warn!("cluster {c} has {} member(s); using isotropic fallback covariance", rows.len());
            (chol, 0.0, true)
        } else {
            let mut cov = vec![0.0; d * d];
            add_scatter(&mut cov, rows, &mean, d);
            let div = (rows.len() - 1) as f64;
            cov.iter_mut().for_each(|v| *v /= div);
            let (chol, ridge) = shrink_and_factor(cov, d, shrinkage, c)?;
            (chol, ridge, false)
        };
        components.push(GaussianComponent {
            cluster: c,
            count: rows.len(),
            mean,
            chol,
            ridge,
            fallback,
        });
    }
    Ok(GaussianBank {
        d,
        shrinkage,
        mode,
        components,
        empty_clusters,
    })
}

/// Minimum over clusters of `sqrt((t-μ)ᵀ Σ⁻¹ (t-μ))`, via the cached factors.
pub fn mahalanobis_score(bank: &GaussianBank, test: &EmbeddingMatrix) -> Result<ScoreVector> {
    if test.d() != bank.d {
        return Err(Error::DimensionMismatch {
            what: "test feature dimension",
            expected: bank.d,
            found: test.d(),
        });
    }
    if bank.components.is_empty() {
        return Err(Error::invalid("gaussian bank has no fitted clusters"));
    }
    let d = bank.d;
    let scores = (0..test.n())
        .into_par_iter()
        .map(|t| {
            let row = test.row(t);
            let mut best = f64::INFINITY;
            let mut diff = vec![0.0; d];
            for comp in &bank.components {
                for ((df, &x), &m) in diff.iter_mut().zip(row).zip(&comp.mean) {
                    *df = x as f64 - m;
                }
                best = best.min(whitened_sq_norm(&comp.chol, d, &mut diff));
            }
            best.sqrt()
        })
        .collect();
    Ok(ScoreVector {
        scores,
        scorer: Scorer::Mahalanobis,
        params: json!({
            "shrinkage": bank.shrinkage,
            "covariance": bank.mode,
            "clusters": bank.components.len(),
        }),
    })
}
