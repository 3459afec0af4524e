use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{dot, EmbeddingMatrix};

/// Exact k-nearest-neighbor lists under cosine distance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k_graph: usize,
    neighbors: Vec<usize>,
}

impl NeighborGraph {
    pub fn k_graph(&self) -> usize {
        self.k_graph
    }

    pub fn n(&self) -> usize {
        self.neighbors.len() / self.k_graph
    }

    /// Neighbors of sample `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i * self.k_graph..(i + 1) * self.k_graph]
    }
}

/// Sorts candidate `(distance, index)` pairs by distance then index.
pub(crate) fn order_by_distance(a: &(f64, usize), b: &(f64, usize)) -> std::cmp::Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

/// For each row, the `k_graph` other rows with the smallest `1 - <x_i, x_j>`,
/// ties broken by lower index. Rows are expected to be unit-norm.
pub fn build_knn_graph(m: &EmbeddingMatrix, k_graph: usize) -> Result<NeighborGraph> {
    let n = m.n();
    if k_graph == 0 {
        return Err(Error::invalid("k_graph must be at least 1"));
    }
    if k_graph >= n {
        return Err(Error::invalid(format!(
            "k_graph = {k_graph} must be smaller than the sample count {n}"
        )));
    }
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = m.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (1.0 - dot(xi, m.row(j)), j))
                .collect();
            cand.select_nth_unstable_by(k_graph - 1, order_by_distance);
            cand.truncate(k_graph);
            cand.sort_by(order_by_distance);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborGraph {
        k_graph,
        neighbors: rows.into_iter().flatten().collect(),
    })
}
