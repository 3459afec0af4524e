use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::EmbeddingMatrix;

/// Two-layer perceptron `input → hidden (tanh) → classes (softmax)`.
///
/// Weights are row-major: `w1[k * hidden + j]` connects input `k` to hidden
/// unit `j`, `w2[j * classes + c]` connects hidden unit `j` to class `c`.
/// The post-activation hidden layer doubles as the adapted feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterHead {
    input: usize,
    hidden: usize,
    classes: usize,
    pub(crate) w1: Vec<f64>,
    pub(crate) b1: Vec<f64>,
    pub(crate) w2: Vec<f64>,
    pub(crate) b2: Vec<f64>,
}

/// Activations of one row kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RowCache {
    pub hidden: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

impl ClusterHead {
    pub fn zeros(input: usize, hidden: usize, classes: usize) -> Result<Self> {
        if input == 0 || hidden == 0 || classes < 2 {
            return Err(Error::invalid(format!(
                "head dims must be input>=1, hidden>=1, classes>=2; got [{input}, {hidden}, {classes}]"
            )));
        }
        Ok(Self {
            input,
            hidden,
            classes,
            w1: vec![0.0; input * hidden],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden * classes],
            b2: vec![0.0; classes],
        })
    }

    /// Fan-in scaled uniform init: every parameter of a layer with fan-in
    /// `f` is drawn from `U(-1/sqrt(f), 1/sqrt(f))`.
    pub fn init(input: usize, hidden: usize, classes: usize, seed: u64) -> Result<Self> {
        let mut head = Self::zeros(input, hidden, classes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a1 = 1.0 / (input as f64).sqrt();
        let a2 = 1.0 / (hidden as f64).sqrt();
        for v in head.w1.iter_mut().chain(head.b1.iter_mut()) {
            *v = rng.random_range(-a1..a1);
        }
        for v in head.w2.iter_mut().chain(head.b2.iter_mut()) {
            *v = rng.random_range(-a2..a2);
        }
        Ok(head)
    }

    /// Builds a head from explicit parameter blocks.
    pub fn from_parts(
        input: usize,
        hidden: usize,
        classes: usize,
        w1: Vec<f64>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: Vec<f64>,
    ) -> Result<Self> {
        let mut head = Self::zeros(input, hidden, classes)?;
        for (name, dst, src) in [
            ("w1", &mut head.w1, w1),
            ("b1", &mut head.b1, b1),
            ("w2", &mut head.w2, w2),
            ("b2", &mut head.b2, b2),
        ] {
            if dst.len() != src.len() {
                return Err(Error::invalid(format!(
                    "{name} has {} values, expected {}",
                    src.len(),
                    dst.len()
                )));
            }
            *dst = src;
        }
        Ok(head)
    }

    pub fn input_dim(&self) -> usize {
        self.input
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn layer_dims(&self) -> [usize; 3] {
        [self.input, self.hidden, self.classes]
    }

    /// `[w1, b1, w2, b2]` in declaration order.
    pub fn parameter_blocks(&self) -> [&[f64]; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameter_blocks_mut(&mut self) -> [&mut [f64]; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameter_blocks().iter().map(|b| b.len()).sum()
    }

    /// A zeroed head of the same shape, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input, self.hidden, self.classes).expect("shape already validated")
    }

    pub(crate) fn check_input(&self, d: usize) -> Result<()> {
        if d != self.input {
            return Err(Error::DimensionMismatch {
                what: "head input dimension",
                expected: self.input,
                found: d,
            });
        }
        Ok(())
    }

    /// Pre-activation hidden values.
    fn hidden_pre(&self, x: &[f64]) -> Vec<f64> {
        let h = self.hidden;
        let mut z = self.b1.clone();
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let w = &self.w1[k * h..(k + 1) * h];
            for (zj, &wj) in z.iter_mut().zip(w) {
                *zj += xk * wj;
            }
        }
        z
    }

    /// Post-activation hidden vector for one input row.
    pub fn hidden_features(&self, x: &[f64]) -> Vec<f64> {
        let mut a = self.hidden_pre(x);
        for v in a.iter_mut() {
            *v = v.tanh();
        }
        a
    }

    pub fn logits_from_hidden(&self, a: &[f64]) -> Vec<f64> {
        let c = self.classes;
        let mut out = self.b2.clone();
        for (j, &aj) in a.iter().enumerate() {
            let w = &self.w2[j * c..(j + 1) * c];
            for (o, &wj) in out.iter_mut().zip(w) {
                *o += aj * wj;
            }
        }
        out
    }

    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        self.logits_from_hidden(&self.hidden_features(x))
    }

    pub fn forward_cached(&self, x: &[f64]) -> RowCache {
        let hidden = self.hidden_features(x);
        let logits = self.logits_from_hidden(&hidden);
        let probs = softmax(&logits);
        RowCache {
            hidden,
            logits,
            probs,
        }
    }

    /// Class probability row for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.logits(x))
    }

    /// Probability rows for every row of `m`.
    pub fn predict(&self, m: &EmbeddingMatrix) -> Result<Vec<Vec<f64>>> {
        self.check_input(m.d())?;
        Ok((0..m.n())
            .into_par_iter()
            .map(|i| self.forward(&m.row_f64(i)))
            .collect())
    }

    /// Accumulates the gradient of a row loss into `grad`, given the loss
    /// gradient with respect to that row's logits.
    pub fn backward_row(&self, x: &[f64], cache: &RowCache, dlogits: &[f64], grad: &mut ClusterHead) {
        let h = self.hidden;
        let c = self.classes;
        for (gb, &g) in grad.b2.iter_mut().zip(dlogits) {
            *gb += g;
        }
        let mut dz = vec![0.0; h];
        for j in 0..h {
            let aj = cache.hidden[j];
            let gw = &mut grad.w2[j * c..(j + 1) * c];
            let w = &self.w2[j * c..(j + 1) * c];
            let mut da = 0.0;
            for ((gwc, &wc), &g) in gw.iter_mut().zip(w).zip(dlogits) {
                *gwc += aj * g;
                da += wc * g;
            }
            dz[j] = da * (1.0 - aj * aj);
        }
        for (gb, &g) in grad.b1.iter_mut().zip(&dz) {
            *gb += g;
        }
        for (k, &xk) in x.iter().enumerate() {
            if xk == 0.0 {
                continue;
            }
            let gw = &mut grad.w1[k * h..(k + 1) * h];
            for (g, &dzj) in gw.iter_mut().zip(&dz) {
                *g += xk * dzj;
            }
        }
    }

    /// Adds `scale * other` to every parameter.
    pub fn add_scaled(&mut self, other: &ClusterHead, scale: f64) {
        for (dst, src) in self.parameter_blocks_mut().into_iter().zip(other.parameter_blocks()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `log Σ exp(l)` computed around the maximum.
pub fn log_sum_exp(logits: &[f64]) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|&l| (l - max).exp()).sum::<f64>().ln()
}

/// Index of the largest entry; ties go to the lower index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}
