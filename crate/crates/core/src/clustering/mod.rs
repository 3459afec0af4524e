//! Pseudo-labels for unlabeled normal data: k-means, the neighbor-consistency
//! clustering head, and confident self-labelling.

mod accuracy;
mod graph;
mod kmeans;
mod scan;
mod self_label;

use serde::{Deserialize, Serialize};

pub use accuracy::{cluster_accuracy, hungarian_min, MAX_ASSIGNMENT_K};
pub use graph::{build_knn_graph, NeighborGraph};
pub use kmeans::{kmeans, KMeansFit};
pub use scan::{entropy, scan_loss, scan_objective, scan_train, scan_train_from, ScanConfig, ScanFit};
pub use self_label::{self_label, SelfLabelConfig, SelfLabelFit};

use crate::adaptation::argmax;
use crate::error::{Error, Result};
use crate::io::{LabelFile, LabelKind, LabelVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterMethod {
    Kmeans,
    Scan,
    SelfLabel,
}

impl ClusterMethod {
    pub fn as_str(&self) -> &'static str {
        match self {
            ClusterMethod::Kmeans => "kmeans",
            ClusterMethod::Scan => "scan",
            ClusterMethod::SelfLabel => "self_label",
        }
    }
}

/// Pseudo-labels with per-sample confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: LabelVector,
    /// Probability of the assigned cluster; 1 for k-means.
    pub confidences: Vec<f64>,
    pub method: ClusterMethod,
    /// Non-fatal conditions such as cluster collapse.
    pub warnings: Vec<String>,
}

impl ClusterAssignment {
    pub fn to_label_file(&self, config: Option<serde_json::Value>) -> LabelFile {
        LabelFile {
            confidences: Some(self.confidences.clone()),
            method: Some(self.method.as_str().to_string()),
            config,
            ..LabelFile::from_labels(&self.labels)
        }
    }

    /// Number of clusters with at least one member.
    pub fn occupied_clusters(&self) -> usize {
        self.labels.counts().iter().filter(|&&c| c > 0).count()
    }
}

pub(crate) fn assignment_from_probs(probs: &[Vec<f64>], method: ClusterMethod) -> Result<ClusterAssignment> {
    let k = probs
        .first()
        .map(|p| p.len())
        .ok_or_else(|| Error::invalid("no samples to assign"))?;
    let labels: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let confidences = probs.iter().zip(&labels).map(|(p, &l)| p[l]).collect();
    Ok(ClusterAssignment {
        labels: LabelVector::new(labels, k, LabelKind::Pseudo)?,
        confidences,
        method,
        warnings: Vec::new(),
    })
}
