use rayon::prelude::*;

use crate::error::{Error, Result};

/// Dense row-major `n × d` matrix of embedding vectors.
///
/// Values are stored as `f32`; every statistic computed from them accumulates
/// in `f64`. Construction rejects empty shapes and non-finite values, so a
/// matrix that exists is always valid.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    n: usize,
    d: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(n: usize, d: usize, data: Vec<f32>) -> Result<Self> {
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!(
                "embedding matrix must be non-empty, got {n}x{d}"
            )));
        }
        if data.len() != n * d {
            return Err(Error::DimensionMismatch {
                what: "data length",
                expected: n * d,
                found: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / d,
                col: pos % d,
            });
        }
        Ok(Self { n, d, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let d = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != d {
                return Err(Error::invalid(format!(
                    "row {i} has length {}, expected {d}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), d, data)
    }

    /// Builds a matrix from `f64` rows, rounding each value to `f32`.
    pub fn from_f64_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let rows: Vec<Vec<f32>> = rows
            .iter()
            .map(|r| r.as_ref().iter().map(|&v| v as f32).collect())
            .collect();
        Self::from_rows(&rows)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn rows(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.d)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Row `i` widened to `f64`.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&v| v as f64).collect()
    }

    /// New matrix holding the selected rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            if i >= self.n {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
            data.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.d, data)
    }

    /// Euclidean norm of row `i`, accumulated in `f64`.
    pub fn row_norm(&self, i: usize) -> f64 {
        self.row(i)
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }

    /// Largest deviation of any row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.n)
            .map(|i| (self.row_norm(i) - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// `f64` dot product of two `f32` slices, summed left to right.
pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64) * (y as f64))
        .sum()
}

/// Scales every row to unit Euclidean norm.
pub fn l2_normalize(m: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
    let d = m.d();
    let rows: Vec<Result<Vec<f32>>> = (0..m.n())
        .into_par_iter()
        .map(|i| {
            let norm = m.row_norm(i);
            if norm == 0.0 {
                return Err(Error::ZeroNorm { row: i });
            }
            Ok(m.row(i).iter().map(|&v| (v as f64 / norm) as f32).collect())
        })
        .collect();
    let mut data = Vec::with_capacity(m.n() * d);
    for r in rows {
        data.extend(r?);
    }
    EmbeddingMatrix::new(m.n(), d, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn rejects_non_finite_and_empty() {
        assert!(matches!(
            EmbeddingMatrix::new(1, 2, vec![1.0, f32::NAN]),
            Err(Error::NonFinite { row: 0, col: 1 })
        ));
        assert!(EmbeddingMatrix::new(0, 2, vec![]).is_err());
        assert!(EmbeddingMatrix::new(2, 2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn normalize_three_four() {
        let m = EmbeddingMatrix::from_rows(&[[3.0f32, 4.0]]).unwrap();
        let u = l2_normalize(&m).unwrap();
        assert!((u.row(0)[0] - 0.6).abs() < 1e-7);
        assert!((u.row(0)[1] - 0.8).abs() < 1e-7);
    }

    #[test]
    fn normalize_unit_row_unchanged() {
        let m = EmbeddingMatrix::from_rows(&[[0.6f32, 0.8], [1.0, 0.0]]).unwrap();
        let u = l2_normalize(&m).unwrap();
        for (a, b) in m.as_slice().iter().zip(u.as_slice()) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn normalize_random_rows_are_unit() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..100 * 16).map(|_| rng.random_range(-5.0..5.0)).collect();
        let m = EmbeddingMatrix::new(100, 16, data).unwrap();
        let u = l2_normalize(&m).unwrap();
        assert!(u.max_norm_deviation() <= 1e-6);
    }

    #[test]
    fn normalize_zero_row_reports_index() {
        let m = EmbeddingMatrix::from_rows(&[[1.0f32, 0.0], [0.0, 0.0]]).unwrap();
        assert!(matches!(l2_normalize(&m), Err(Error::ZeroNorm { row: 1 })));
    }
}
