//! Anomaly scorers. Every score follows one convention: higher is more
//! anomalous.

mod knn;
mod mahalanobis;

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use knn::{knn_score, NORM_TOLERANCE};
pub use mahalanobis::{
    cholesky, fit_gaussians, fit_gaussians_with, mahalanobis_score, CovarianceMode, GaussianBank,
    GaussianComponent, DEFAULT_SHRINKAGE,
};

use crate::adaptation::ClusterHead;
use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scorer {
    Knn,
    Mahalanobis,
    Confidence,
}

impl Scorer {
    pub fn as_str(&self) -> &'static str {
        match self {
            Scorer::Knn => "knn",
            Scorer::Mahalanobis => "mahalanobis",
            Scorer::Confidence => "confidence",
        }
    }
}

impl std::str::FromStr for Scorer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "knn" => Ok(Scorer::Knn),
            "mahalanobis" => Ok(Scorer::Mahalanobis),
            "confidence" => Ok(Scorer::Confidence),
            other => Err(Error::invalid(format!("unknown scorer {other:?}"))),
        }
    }
}

/// Per-sample anomaly scores with the scorer that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    pub scores: Vec<f64>,
    pub scorer: Scorer,
    pub params: serde_json::Value,
}

impl ScoreVector {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let sv: ScoreVector = serde_json::from_str(&fs::read_to_string(path)?)?;
        if sv.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::invalid("score file contains non-finite scores"));
        }
        Ok(sv)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}

/// `1 - max_c p_c(t)`: low top-class confidence scores as anomalous.
pub fn confidence_score(head: &ClusterHead, test: &EmbeddingMatrix) -> Result<ScoreVector> {
    if test.d() != head.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "test feature dimension",
            expected: head.input_dim(),
            found: test.d(),
        });
    }
    let scores = (0..test.n())
        .into_par_iter()
        .map(|i| {
            let p = head.forward(&test.row_f64(i));
            1.0 - p.iter().copied().fold(0.0, f64::max)
        })
        .collect();
    Ok(ScoreVector {
        scores,
        scorer: Scorer::Confidence,
        params: json!({ "classes": head.classes() }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data(n: usize, d: usize) -> EmbeddingMatrix {
        EmbeddingMatrix::new(n, d, (0..n * d).map(|i| (i as f32 * 0.37).sin()).collect()).unwrap()
    }

    #[test]
    fn uniform_head_scores_nine_tenths() {
        let head = ClusterHead::zeros(3, 2, 10).unwrap();
        let s = confidence_score(&head, &data(4, 3)).unwrap();
        assert!(s.scores.iter().all(|&v| (v - 0.9).abs() < 1e-12));
    }

    #[test]
    fn one_hot_head_scores_zero() {
        let mut head = ClusterHead::zeros(3, 2, 4).unwrap();
        head.b2 = vec![0.0, 800.0, 0.0, 0.0];
        let s = confidence_score(&head, &data(2, 3)).unwrap();
        assert_eq!(s.scores, vec![0.0, 0.0]);
    }

    #[test]
    fn scores_respect_simplex_bound() {
        let k = 5;
        let head = ClusterHead::init(3, 6, k, 8).unwrap();
        let s = confidence_score(&head, &data(50, 3)).unwrap();
        let bound = 1.0 - 1.0 / k as f64;
        assert!(s.scores.iter().all(|&v| (0.0..=bound + 1e-12).contains(&v)));
    }

    #[test]
    fn logit_shift_leaves_scores_unchanged() {
        let head = ClusterHead::init(3, 6, 4, 2).unwrap();
        let mut shifted = head.clone();
        shifted.b2.iter_mut().for_each(|b| *b += 17.5);
        let m = data(20, 3);
        let a = confidence_score(&head, &m).unwrap();
        let b = confidence_score(&shifted, &m).unwrap();
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn dimension_checked() {
        let head = ClusterHead::zeros(3, 2, 2).unwrap();
        assert!(confidence_score(&head, &data(2, 4)).is_err());
    }
}
