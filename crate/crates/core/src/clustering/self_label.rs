//! Confident-relabel refinement of a trained clustering head.
//!
//! Each round takes the samples whose top probability reaches the
//! threshold and retrains the head with cross-entropy on their argmax
//! labels. This is a plain self-training loop, without the augmentation
//! consistency of image-domain variants.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assignment_from_probs, ClusterAssignment, ClusterMethod};
use crate::adaptation::{argmax, cross_entropy_grad, widen, Adam, AdamParams, ClusterHead};
use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelfLabelConfig {
    pub threshold: f64,
    pub rounds: usize,
    pub epochs_per_round: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for SelfLabelConfig {
    fn default() -> Self {
        Self {
            threshold: 0.99,
            rounds: 2,
            epochs_per_round: 3,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelfLabelFit {
    pub head: ClusterHead,
    pub assignment: ClusterAssignment,
    /// Number of confident samples selected in each completed round.
    pub selected_per_round: Vec<usize>,
}

pub fn self_label(head: &ClusterHead, m: &EmbeddingMatrix, cfg: &SelfLabelConfig) -> Result<SelfLabelFit> {
    let k = head.classes();
    if !(cfg.threshold > 1.0 / k as f64 && cfg.threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "self-label threshold must lie in (1/K, 1] = ({}, 1], got {}",
            1.0 / k as f64,
            cfg.threshold
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("self-label batch_size must be positive"));
    }
    head.check_input(m.d())?;

    let inputs = widen(m);
    let mut head = head.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5E1F);
    let mut selected_per_round = Vec::new();
    let mut warnings = Vec::new();
    let mut probs = head.predict(m)?;

    for round in 0..cfg.rounds {
        let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
        let mut selected: Vec<usize> = probs
            .iter()
            .enumerate()
            .filter(|(_, p)| p[argmax(p)] >= cfg.threshold)
            .map(|(i, _)| i)
            .collect();
        if selected.is_empty() {
            let msg = format!(
                "self-label round {round}: no sample reaches confidence {}, head left unchanged",
                cfg.threshold
            );
            log::warn!("{msg}");
            warnings.push(msg);
            break;
        }
        selected_per_round.push(selected.len());
        let mut adam = Adam::for_head(AdamParams::default(), &head);
        for epoch in 0..cfg.epochs_per_round {
            selected.shuffle(&mut rng);
            for (batch, rows) in selected.chunks(cfg.batch_size).enumerate() {
                let (loss, grad) = cross_entropy_grad(&head, &inputs, &labels, rows);
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch, batch });
                }
                adam.step_head(&mut head, &grad, cfg.lr);
            }
        }
        probs = head.predict(m)?;
    }

    let mut assignment = assignment_from_probs(&probs, ClusterMethod::SelfLabel)?;
    assignment.warnings = warnings;
    Ok(SelfLabelFit {
        head,
        assignment,
        selected_per_round,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn data() -> EmbeddingMatrix {
        EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 1.0], [0.6, 0.8]]).unwrap()
    }

    #[test]
    fn zero_rounds_is_identity() {
        let head = ClusterHead::init(2, 4, 2, 1).unwrap();
        let cfg = SelfLabelConfig {
            rounds: 0,
            ..Default::default()
        };
        let fit = self_label(&head, &data(), &cfg).unwrap();
        assert_eq!(fit.head, head);
    }

    #[test]
    fn unreachable_threshold_leaves_head_unchanged() {
        let head = ClusterHead::init(2, 4, 2, 1).unwrap();
        let cfg = SelfLabelConfig {
            threshold: 1.0,
            ..Default::default()
        };
        let fit = self_label(&head, &data(), &cfg).unwrap();
        assert_eq!(fit.head, head);
        assert_eq!(fit.assignment.warnings.len(), 1);
        assert!(fit.selected_per_round.is_empty());
    }

    #[test]
    fn threshold_must_exceed_uniform() {
        let head = ClusterHead::init(2, 4, 4, 1).unwrap();
        let cfg = SelfLabelConfig {
            threshold: 0.25,
            ..Default::default()
        };
        assert!(self_label(&head, &data(), &cfg).is_err());
    }
}
