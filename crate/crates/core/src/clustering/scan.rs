//! Neighbor-consistency clustering head with an entropy regularizer.
//!
//! The objective over a set of anchors `B` is
//!
//! ```text
//! L = -(1/|B|) Σ_{i∈B} (1/|N(i)|) Σ_{j∈N(i)} log <p_i, p_j>  -  λ H(mean_{i∈B} p_i)
//! ```
//!
//! where `p_i` is the head's probability row for sample `i` and `H` the
//! Shannon entropy. Gradients flow through both `p_i` and `p_j`. Training
//! draws one neighbor per anchor per epoch, an unbiased estimate of the
//! neighbor average.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{assignment_from_probs, ClusterAssignment, ClusterMethod, NeighborGraph};
use crate::adaptation::{widen, Adam, AdamParams, ClusterHead, RowCache};
use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

/// Floor applied inside logarithms.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    /// Cluster count K. Run configurations set it from `cluster.k`.
    #[serde(skip)]
    pub k: usize,
    pub k_graph: usize,
    pub lambda_entropy: f64,
    pub hidden: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            k: 10,
            k_graph: 20,
            lambda_entropy: 5.0,
            hidden: 128,
            epochs: 30,
            batch_size: 128,
            lr: 1e-3,
            seed: 0,
        }
    }
}

impl ScanConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::invalid("scan K must be at least 2"));
        }
        if self.k_graph == 0 {
            return Err(Error::invalid("scan k_graph must be at least 1"));
        }
        if !(self.lambda_entropy >= 0.0) {
            return Err(Error::invalid("scan lambda_entropy must be non-negative"));
        }
        if self.hidden == 0 || self.batch_size == 0 {
            return Err(Error::invalid("scan hidden and batch_size must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("scan lr must be a non-negative finite number"));
        }
        Ok(())
    }
}

/// Shannon entropy in nats; `0 log 0` counts as 0.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

/// Loss and gradient of the objective for the given anchors, where
/// `neighbors(i)` yields the neighbor set used for anchor `i`.
pub fn scan_objective<'a, F>(
    head: &ClusterHead,
    inputs: &[f64],
    anchors: &[usize],
    neighbors: F,
    lambda: f64,
) -> (f64, ClusterHead)
where
    F: Fn(usize) -> &'a [usize],
{
    let d = head.input_dim();
    let k = head.classes();
    let mut slot: HashMap<usize, usize> = HashMap::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut caches: Vec<RowCache> = Vec::new();
    let mut ensure = |r: usize, rows: &mut Vec<usize>, caches: &mut Vec<RowCache>| -> usize {
        *slot.entry(r).or_insert_with(|| {
            rows.push(r);
            caches.push(head.forward_cached(&inputs[r * d..(r + 1) * d]));
            rows.len() - 1
        })
    };
    let anchor_slots: Vec<usize> = anchors.iter().map(|&i| ensure(i, &mut rows, &mut caches)).collect();
    let neighbor_slots: Vec<Vec<usize>> = anchors
        .iter()
        .map(|&i| neighbors(i).iter().map(|&j| ensure(j, &mut rows, &mut caches)).collect())
        .collect();

    let b = anchors.len() as f64;
    let mut dp = vec![vec![0.0; k]; rows.len()];
    let mut consistency = 0.0;
    for (&si, nbrs) in anchor_slots.iter().zip(&neighbor_slots) {
        let w = 1.0 / (b * nbrs.len() as f64);
        for &sj in nbrs {
            let s: f64 = caches[si].probs.iter().zip(&caches[sj].probs).map(|(a, c)| a * c).sum();
            consistency -= w * s.max(LOG_FLOOR).ln();
            if s > LOG_FLOOR {
                for c in 0..k {
                    let pi = caches[si].probs[c];
                    let pj = caches[sj].probs[c];
                    dp[si][c] -= w * pj / s;
                    dp[sj][c] -= w * pi / s;
                }
            }
        }
    }

    let mut mean = vec![0.0; k];
    for &si in &anchor_slots {
        for (m, p) in mean.iter_mut().zip(&caches[si].probs) {
            *m += p / b;
        }
    }
    let loss = consistency - lambda * entropy(&mean);
    if lambda != 0.0 {
        let dmean: Vec<f64> = mean
            .iter()
            .map(|&m| lambda * (m.max(LOG_FLOOR).ln() + 1.0) / b)
            .collect();
        for &si in &anchor_slots {
            for (g, dm) in dp[si].iter_mut().zip(&dmean) {
                *g += dm;
            }
        }
    }

    let mut grad = head.zeros_like();
    for (s, &r) in rows.iter().enumerate() {
        let p = &caches[s].probs;
        let inner: f64 = dp[s].iter().zip(p).map(|(g, q)| g * q).sum();
        let dlogits: Vec<f64> = dp[s].iter().zip(p).map(|(g, q)| q * (g - inner)).collect();
        head.backward_row(&inputs[r * d..(r + 1) * d], &caches[s], &dlogits, &mut grad);
    }
    (loss, grad)
}

/// The full objective over every sample and all of its graph neighbors.
pub fn scan_loss(head: &ClusterHead, m: &EmbeddingMatrix, g: &NeighborGraph, lambda: f64) -> Result<f64> {
    head.check_input(m.d())?;
    check_graph(m, g)?;
    let inputs = widen(m);
    let anchors: Vec<usize> = (0..m.n()).collect();
    Ok(scan_objective(head, &inputs, &anchors, |i| g.neighbors(i), lambda).0)
}

fn check_graph(m: &EmbeddingMatrix, g: &NeighborGraph) -> Result<()> {
    if g.n() != m.n() {
        return Err(Error::DimensionMismatch {
            what: "neighbor graph rows",
            expected: m.n(),
            found: g.n(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ScanFit {
    pub head: ClusterHead,
    pub assignment: ClusterAssignment,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Trains a fresh head on the objective with minibatch Adam.
pub fn scan_train(m: &EmbeddingMatrix, g: &NeighborGraph, cfg: &ScanConfig) -> Result<ScanFit> {
    cfg.validate()?;
    check_graph(m, g)?;
    if m.max_norm_deviation() > 1e-3 {
        log::warn!("scan_train input rows are not unit-norm");
    }
    let init = ClusterHead::init(m.d(), cfg.hidden, cfg.k, cfg.seed)?;
    scan_train_from(init, m, g, cfg)
}

/// Same as [`scan_train`], starting from a given head.
pub fn scan_train_from(
    mut head: ClusterHead,
    m: &EmbeddingMatrix,
    g: &NeighborGraph,
    cfg: &ScanConfig,
) -> Result<ScanFit> {
    cfg.validate()?;
    check_graph(m, g)?;
    head.check_input(m.d())?;
    let n = m.n();
    let inputs = widen(m);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5CA7_5CA7);
    let mut adam = Adam::for_head(AdamParams::default(), &head);
    let mut order: Vec<usize> = (0..n).collect();
    let mut picked = vec![0usize; n];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for (i, p) in picked.iter_mut().enumerate() {
            let nb = g.neighbors(i);
            *p = nb[rng.random_range(0..nb.len())];
        }
        let mut total = 0.0;
        for (batch, anchors) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grad) = scan_objective(
                &head,
                &inputs,
                anchors,
                |i| std::slice::from_ref(&picked[i]),
                cfg.lambda_entropy,
            );
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch });
            }
            total += loss * anchors.len() as f64;
            adam.step_head(&mut head, &grad, cfg.lr);
        }
        epoch_losses.push(total / n as f64);
    }

    let probs = head.predict(m)?;
    let mut assignment = assignment_from_probs(&probs, ClusterMethod::Scan)?;
    let occupied = assignment.labels.counts().iter().filter(|&&c| c > 0).count();
    if occupied <= 1 {
        assignment
            .warnings
            .push("degenerate collapse: every sample assigned to one cluster".into());
    }
    Ok(ScanFit {
        head,
        assignment,
        epoch_losses,
    })
}
