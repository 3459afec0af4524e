use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{log_sum_exp, ClusterHead};
use super::optim::{Adam, AdamParams, CosineSchedule};
use crate::error::{Error, Result};
use crate::io::{EmbeddingMatrix, LabelVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdaptConfig {
    pub epochs: usize,
    /// Width of the hidden (feature) layer of a freshly initialized head.
    pub hidden: usize,
    pub lr_start: f64,
    pub lr_end: f64,
    pub batch_size: usize,
    pub adam: AdamParams,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            hidden: 512,
            lr_start: 1e-3,
            lr_end: 1e-4,
            batch_size: 64,
            adam: AdamParams::default(),
            seed: 0,
        }
    }
}

impl AdaptConfig {
    /// The 1e-5 → 1e-6 schedule used when finetuning a full backbone.
    pub fn backbone_schedule() -> Self {
        Self {
            lr_start: 1e-5,
            lr_end: 1e-6,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("adapt epochs must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("adapt batch_size must be at least 1"));
        }
        if self.hidden == 0 {
            return Err(Error::invalid("adapt hidden must be at least 1"));
        }
        if !(self.lr_end >= 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::invalid(format!(
                "learning rates must satisfy 0 <= lr_end <= lr_start, got {} -> {}",
                self.lr_start, self.lr_end
            )));
        }
        Ok(())
    }
}

/// Epoch-end snapshots of a finetuning run.
#[derive(Debug, Clone)]
pub struct CheckpointSet {
    pub checkpoints: Vec<ClusterHead>,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn check_labels(head: &ClusterHead, n: usize, y: &LabelVector) -> Result<()> {
    y.check_len(n)?;
    if y.k() != head.classes() {
        return Err(Error::DimensionMismatch {
            what: "label space K vs head classes",
            expected: head.classes(),
            found: y.k(),
        });
    }
    Ok(())
}

/// Mean of `-log p(label)` over all rows, via log-sum-exp on the logits.
pub fn cross_entropy_loss(head: &ClusterHead, m: &EmbeddingMatrix, y: &LabelVector) -> Result<f64> {
    head.check_input(m.d())?;
    check_labels(head, m.n(), y)?;
    let total: f64 = (0..m.n())
        .into_par_iter()
        .map(|i| {
            let logits = head.logits(&m.row_f64(i));
            log_sum_exp(&logits) - logits[y.labels()[i]]
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    Ok(total / m.n() as f64)
}

/// Mean cross-entropy over `rows` and its gradient.
///
/// `inputs` is the row-major `f64` design matrix with `head.input_dim()`
/// columns.
pub fn cross_entropy_grad(
    head: &ClusterHead,
    inputs: &[f64],
    labels: &[usize],
    rows: &[usize],
) -> (f64, ClusterHead) {
    let d = head.input_dim();
    let scale = 1.0 / rows.len() as f64;
    let mut grad = head.zeros_like();
    let mut loss = 0.0;
    for &i in rows {
        let x = &inputs[i * d..(i + 1) * d];
        let cache = head.forward_cached(x);
        let y = labels[i];
        loss += log_sum_exp(&cache.logits) - cache.logits[y];
        let mut dlogits: Vec<f64> = cache.probs.iter().map(|p| p * scale).collect();
        dlogits[y] -= scale;
        head.backward_row(x, &cache, &dlogits, &mut grad);
    }
    (loss * scale, grad)
}

pub(crate) fn widen(m: &EmbeddingMatrix) -> Vec<f64> {
    m.as_slice().iter().map(|&v| v as f64).collect()
}

/// Minibatch Adam on the pseudo-label cross-entropy, snapshotting the head
/// at the end of every epoch.
pub fn finetune_head(
    init: &ClusterHead,
    m: &EmbeddingMatrix,
    y: &LabelVector,
    cfg: &AdaptConfig,
) -> Result<CheckpointSet> {
    cfg.validate()?;
    init.check_input(m.d())?;
    check_labels(init, m.n(), y)?;

    let inputs = widen(m);
    let n = m.n();
    let batches_per_epoch = n.div_ceil(cfg.batch_size);
    let schedule = CosineSchedule {
        start: cfg.lr_start,
        end: cfg.lr_end,
        total_steps: cfg.epochs * batches_per_epoch,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut head = init.clone();
    let mut adam = Adam::for_head(cfg.adam, &head);
    let mut order: Vec<usize> = (0..n).collect();
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (batch, rows) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = cross_entropy_grad(&head, &inputs, y.labels(), rows);
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            epoch_loss += loss * rows.len() as f64;
            let lr = schedule.lr(epoch * batches_per_epoch + batch);
            adam.step_head(&mut head, &grad, lr);
        }
        let epoch_loss = epoch_loss / n as f64;
        log::debug!("adapt epoch {epoch}: loss {epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
        checkpoints.push(head.clone());
    }
    Ok(CheckpointSet {
        checkpoints,
        epoch_losses,
    })
}

/// Parameter-wise uniform mean of all checkpoints.
pub fn average_checkpoints(cs: &CheckpointSet) -> Result<ClusterHead> {
    average_heads(&cs.checkpoints)
}

pub fn average_heads(heads: &[ClusterHead]) -> Result<ClusterHead> {
    let first = heads
        .first()
        .ok_or_else(|| Error::invalid("cannot average an empty checkpoint set"))?;
    let dims = first.layer_dims();
    if let Some(bad) = heads.iter().find(|h| h.layer_dims() != dims) {
        return Err(Error::invalid(format!(
            "checkpoint layer dims {:?} differ from {:?}",
            bad.layer_dims(),
            dims
        )));
    }
    if heads.len() == 1 {
        return Ok(first.clone());
    }
    // Running mean: exact when every snapshot holds the same value.
    let mut avg = first.clone();
    for (t, head) in heads.iter().enumerate().skip(1) {
        let src = head.parameter_blocks();
        for (dst, s) in avg.parameter_blocks_mut().into_iter().zip(src) {
            for (v, x) in dst.iter_mut().zip(s) {
                *v += (x - *v) / (t + 1) as f64;
            }
        }
    }
    Ok(avg)
}

/// Post-activation hidden features of every row, not normalized.
pub fn hidden_matrix(head: &ClusterHead, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    head.check_input(m.d())?;
    let h = head.hidden_dim();
    let rows: Vec<Vec<f64>> = (0..m.n())
        .into_par_iter()
        .map(|i| head.hidden_features(&m.row_f64(i)))
        .collect();
    let mut data = Vec::with_capacity(m.n() * h);
    for r in rows {
        data.extend(r.into_iter().map(|v| v as f32));
    }
    EmbeddingMatrix::new(m.n(), h, data)
}

/// Hidden-layer features of every row, L2-normalized.
pub fn extract_features(head: &ClusterHead, m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    head.check_input(m.d())?;
    let h = head.hidden_dim();
    let rows: Vec<Result<Vec<f32>>> = (0..m.n())
        .into_par_iter()
        .map(|i| {
            let a = head.hidden_features(&m.row_f64(i));
            let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            Ok(a.iter().map(|v| (v / norm) as f32).collect())
        })
        .collect();
    let mut data = Vec::with_capacity(m.n() * h);
    for r in rows {
        data.extend(r?);
    }
    EmbeddingMatrix::new(m.n(), h, data)
}
