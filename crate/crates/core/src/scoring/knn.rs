use rayon::prelude::*;
use serde_json::json;

use super::{ScoreVector, Scorer};
use crate::error::{Error, Result};
use crate::io::{dot, EmbeddingMatrix};

/// Maximum tolerated deviation of a row norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-3;

fn check_normalized(m: &EmbeddingMatrix, what: &str) -> Result<()> {
    for i in 0..m.n() {
        let dev = (m.row_norm(i) - 1.0).abs();
        if dev > NORM_TOLERANCE {
            return Err(Error::invalid(format!(
                "{what} row {i} is not L2-normalized (norm deviates from 1 by {dev:.3e})"
            )));
        }
    }
    Ok(())
}

/// Mean of the `k` smallest cosine distances `1 - <t, x>` from each test
/// row to the train rows. Higher means further from the normal data.
pub fn knn_score(train: &EmbeddingMatrix, test: &EmbeddingMatrix, k: usize) -> Result<ScoreVector> {
    if train.d() != test.d() {
        return Err(Error::DimensionMismatch {
            what: "test feature dimension",
            expected: train.d(),
            found: test.d(),
        });
    }
    if k == 0 || k > train.n() {
        return Err(Error::invalid(format!(
            "knn k must satisfy 1 <= k <= train size {}, got {k}",
            train.n()
        )));
    }
    check_normalized(train, "train")?;
    check_normalized(test, "test")?;

    let scores = (0..test.n())
        .into_par_iter()
        .map(|t| {
            let row = test.row(t);
            let mut dists: Vec<f64> = train.rows().map(|x| 1.0 - dot(row, x)).collect();
            if k == 1 {
                return dists.iter().copied().fold(f64::INFINITY, f64::min);
            }
            dists.select_nth_unstable_by(k - 1, f64::total_cmp);
            let nearest = &mut dists[..k];
            nearest.sort_by(f64::total_cmp);
            nearest.iter().sum::<f64>() / k as f64
        })
        .collect();
    Ok(ScoreVector {
        scores,
        scorer: Scorer::Knn,
        params: json!({ "k": k }),
    })
}
