//! Seeded Gaussian-mixture benchmark standing in for real embedding datasets.

use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{l2_normalize, EmbeddingMatrix, LabelKind, LabelVector};

/// Candidate draws per mean before giving up.
pub const MAX_PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub k_normal: usize,
    pub k_anom: usize,
    pub d: usize,
    pub n_train: usize,
    pub n_test_in: usize,
    pub n_test_out: usize,
    /// Norm of every component mean, and the minimum pairwise distance
    /// between means.
    pub separation: f64,
    /// Per-coordinate standard deviation within a component.
    pub within_scale: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            k_normal: 10,
            k_anom: 3,
            d: 64,
            n_train: 2000,
            n_test_in: 500,
            n_test_out: 300,
            separation: 1.0,
            within_scale: 0.25,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_normal", self.k_normal),
            ("k_anom", self.k_anom),
            ("d", self.d),
            ("n_train", self.n_train),
            ("n_test_in", self.n_test_in),
            ("n_test_out", self.n_test_out),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("synthetic spec {name} must be at least 1")));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::invalid("label_noise must lie in [0, 1)"));
        }
        if !(self.separation >= 0.0 && self.separation.is_finite()) {
            return Err(Error::invalid("separation must be a non-negative finite number"));
        }
        if !(self.within_scale >= 0.0 && self.within_scale.is_finite()) {
            return Err(Error::invalid("within_scale must be a non-negative finite number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub train: EmbeddingMatrix,
    /// Component of each train row, after label noise.
    pub train_truth: LabelVector,
    pub test_in: EmbeddingMatrix,
    pub test_out: EmbeddingMatrix,
    /// Component means, normal components first.
    pub means: Vec<Vec<f64>>,
}

fn random_direction(d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

fn place_means(count: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Vec<f64>>> {
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(count);
    for c in 0..count {
        let mut placed = false;
        for _ in 0..MAX_PLACEMENT_ATTEMPTS {
            let cand: Vec<f64> = random_direction(spec.d, rng)
                .into_iter()
                .map(|x| x * spec.separation)
                .collect();
            let ok = means.iter().all(|m| {
                let dist = m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                dist >= spec.separation && dist > 0.0
            });
            if ok {
                means.push(cand);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::invalid(format!(
                "could not place component mean {c} at distance >= {} from the others \
                 after {MAX_PLACEMENT_ATTEMPTS} attempts",
                spec.separation
            )));
        }
    }
    Ok(means)
}

fn sample_rows(
    components: &[usize],
    means: &[Vec<f64>],
    scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<EmbeddingMatrix> {
    let rows: Vec<Vec<f64>> = components
        .iter()
        .map(|&c| {
            means[c]
                .iter()
                .map(|&mu| mu + scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    l2_normalize(&EmbeddingMatrix::from_f64_rows(&rows)?)
}

/// Balanced component ids `0..k` repeated to length `n`, shuffled.
fn balanced(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..n).map(|i| i % k).collect();
    ids.shuffle(rng);
    ids
}

/// Draws train/test splits from a mixture of isotropic Gaussians.
///
/// Normal and anomalous components share one placement constraint: every
/// pair of means is at least `separation` apart. All rows are returned
/// L2-normalized.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let means = place_means(spec.k_normal + spec.k_anom, spec, &mut rng)?;

    let train_ids = balanced(spec.n_train, spec.k_normal, &mut rng);
    let train = sample_rows(&train_ids, &means, spec.within_scale, &mut rng)?;
    let in_ids = balanced(spec.n_test_in, spec.k_normal, &mut rng);
    let test_in = sample_rows(&in_ids, &means, spec.within_scale, &mut rng)?;
    let out_ids: Vec<usize> = balanced(spec.n_test_out, spec.k_anom, &mut rng)
        .into_iter()
        .map(|c| c + spec.k_normal)
        .collect();
    let test_out = sample_rows(&out_ids, &means, spec.within_scale, &mut rng)?;

    let mut truth = train_ids;
    let noisy = (spec.label_noise * spec.n_train as f64).floor() as usize;
    for i in index::sample(&mut rng, spec.n_train, noisy) {
        truth[i] = rng.random_range(0..spec.k_normal);
    }
    Ok(SynthData {
        train,
        train_truth: LabelVector::new(truth, spec.k_normal, LabelKind::GroundTruth)?,
        test_in,
        test_out,
        means,
    })
}

/// Resamples `floor(fraction · n)` distinct entries uniformly over `[0, K)`.
pub fn corrupt_labels(labels: &LabelVector, fraction: f64, seed: u64) -> Result<LabelVector> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::invalid("label noise fraction must lie in [0, 1)"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = labels.labels().to_vec();
    let count = (fraction * out.len() as f64).floor() as usize;
    for i in index::sample(&mut rng, out.len(), count) {
        out[i] = rng.random_range(0..labels.k());
    }
    LabelVector::new(out, labels.k(), labels.kind())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        SynthSpec {
            k_normal: 3,
            k_anom: 2,
            d: 8,
            n_train: 60,
            n_test_in: 15,
            n_test_out: 10,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn noiseless_truth_is_component_identity() {
        // Without spread every row is its component mean, normalized.
        let data = generate_synthetic(&SynthSpec {
            within_scale: 0.0,
            ..small()
        })
        .unwrap();
        for i in 0..data.train.n() {
            let mean = &data.means[data.train_truth.labels()[i]];
            let norm = mean.iter().map(|v| v * v).sum::<f64>().sqrt();
            for (x, m) in data.train.row_f64(i).iter().zip(mean) {
                assert!((x - m / norm).abs() < 1e-6);
            }
        }
        assert_eq!(data.train_truth.counts(), vec![20, 20, 20]);
    }

    #[test]
    fn rows_are_unit_norm_and_shapes_match() {
        let data = generate_synthetic(&small()).unwrap();
        assert_eq!((data.train.n(), data.test_in.n(), data.test_out.n()), (60, 15, 10));
        assert!(data.train.max_norm_deviation() <= 1e-6);
        assert!(data.test_out.max_norm_deviation() <= 1e-6);
    }

    #[test]
    fn zero_separation_cannot_place_means() {
        let spec = SynthSpec {
            separation: 0.0,
            ..small()
        };
        let err = generate_synthetic(&spec).unwrap_err();
        assert!(err.to_string().contains("could not place"), "{err}");
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test_out, b.test_out);
    }

    #[test]
    fn label_noise_changes_only_a_fraction() {
        let clean = generate_synthetic(&small()).unwrap();
        let noisy = generate_synthetic(&SynthSpec {
            label_noise: 0.5,
            ..small()
        })
        .unwrap();
        assert_eq!(clean.train, noisy.train);
        let changed = clean
            .train_truth
            .labels()
            .iter()
            .zip(noisy.train_truth.labels())
            .filter(|(a, b)| a != b)
            .count();
        assert!(changed > 0 && changed <= 30);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(generate_synthetic(&SynthSpec { n_train: 0, ..small() }).is_err());
        assert!(generate_synthetic(&SynthSpec { label_noise: 1.0, ..small() }).is_err());
    }
}
