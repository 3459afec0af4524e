//! ROC-AUC through the Mann-Whitney rank statistic with midranks for ties.

use crate::error::{Error, Result};
use crate::scoring::ScoreVector;

fn check(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::invalid(format!("{what} scores are empty")));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("{what} scores contain non-finite values")));
    }
    Ok(())
}

/// Twice the Mann-Whitney U of the `out` group, an exact integer:
/// `2·#(out > in) + #(out == in)`.
pub fn doubled_u_statistic(scores_in: &[f64], scores_out: &[f64]) -> Result<u128> {
    check(scores_in, "in-distribution")?;
    check(scores_out, "out-of-distribution")?;
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, false))
        .chain(scores_out.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));

    // Σ over out samples of 2·midrank, midranks 1-based.
    let mut doubled_rank_sum: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        let outs = all[i..j].iter().filter(|e| e.1).count() as u128;
        doubled_rank_sum += outs * (i as u128 + 1 + j as u128);
        i = j;
    }
    let m = scores_out.len() as u128;
    Ok(doubled_rank_sum - m * (m + 1))
}

/// `P(out > in) + ½ P(out = in)` over all cross pairs, in `[0, 1]`.
pub fn roc_auc(scores_in: &[f64], scores_out: &[f64]) -> Result<f64> {
    let u2 = doubled_u_statistic(scores_in, scores_out)?;
    let pairs = 2 * scores_in.len() as u128 * scores_out.len() as u128;
    Ok(u2 as f64 / pairs as f64)
}

pub fn roc_auc_scores(scores_in: &ScoreVector, scores_out: &ScoreVector) -> Result<f64> {
    if scores_in.scorer != scores_out.scorer {
        return Err(Error::invalid(format!(
            "score files come from different scorers ({} vs {})",
            scores_in.scorer.as_str(),
            scores_out.scorer.as_str()
        )));
    }
    roc_auc(&scores_in.scores, &scores_out.scores)
}

/// ROC points `(false positive rate, true positive rate)` sweeping the
/// threshold from high to low, with `out` as the positive class.
pub fn roc_curve(scores_in: &[f64], scores_out: &[f64]) -> Result<Vec<(f64, f64)>> {
    check(scores_in, "in-distribution")?;
    check(scores_out, "out-of-distribution")?;
    let mut all: Vec<(f64, bool)> = scores_in
        .iter()
        .map(|&s| (s, false))
        .chain(scores_out.iter().map(|&s| (s, true)))
        .collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    let (n_in, n_out) = (scores_in.len() as f64, scores_out.len() as f64);
    let mut points = vec![(0.0, 0.0)];
    let (mut fp, mut tp) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            if all[j].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            j += 1;
        }
        points.push((fp as f64 / n_in, tp as f64 / n_out));
        i = j;
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        assert_eq!(roc_auc(&[0.0, 0.1], &[0.9, 1.0]).unwrap(), 1.0);
        assert_eq!(roc_auc(&[0.9, 1.0], &[0.0, 0.1]).unwrap(), 0.0);
    }

    #[test]
    fn all_ties() {
        assert_eq!(roc_auc(&[0.3; 4], &[0.3; 7]).unwrap(), 0.5);
    }

    #[test]
    fn empty_input_is_error() {
        assert!(roc_auc(&[], &[1.0]).is_err());
        assert!(roc_auc(&[1.0], &[]).is_err());
        assert!(roc_auc(&[f64::NAN], &[1.0]).is_err());
    }

    #[test]
    fn small_tie_case() {
        // pairs: (1 vs 1) tie, (1 vs 2) win, (3 vs 1) loss, (3 vs 2) loss.
        assert_eq!(roc_auc(&[1.0, 3.0], &[1.0, 2.0]).unwrap(), 1.5 / 4.0);
    }

    #[test]
    fn curve_area_matches_auc() {
        let a = [0.1, 0.4, 0.4, 0.2, 0.9];
        let b = [0.4, 0.8, 0.3, 0.95];
        let pts = roc_curve(&a, &b).unwrap();
        let area: f64 = pts
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum();
        assert!((area - roc_auc(&a, &b).unwrap()).abs() < 1e-12);
        assert_eq!(*pts.last().unwrap(), (1.0, 1.0));
    }
}
