use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    GroundTruth,
    Pseudo,
}

/// Integer labels in `[0, k)`, one per sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVector {
    labels: Vec<usize>,
    k: usize,
    kind: LabelKind,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, k: usize, kind: LabelKind) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("label space size K must be at least 1"));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= k) {
            return Err(Error::LabelOutOfRange { index, label, k });
        }
        Ok(Self { labels, k, kind })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Member count of each label.
    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.k];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    pub fn check_len(&self, n: usize) -> Result<()> {
        if self.labels.len() != n {
            return Err(Error::DimensionMismatch {
                what: "label count",
                expected: n,
                found: self.labels.len(),
            });
        }
        Ok(())
    }
}

/// On-disk label file: a label vector plus optional clustering metadata.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelFile {
    pub labels: Vec<usize>,
    pub k: usize,
    pub kind: LabelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidences: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl LabelFile {
    pub fn from_labels(labels: &LabelVector) -> Self {
        Self {
            labels: labels.labels.clone(),
            k: labels.k,
            kind: labels.kind,
            confidences: None,
            method: None,
            config: None,
        }
    }

    pub fn label_vector(&self) -> Result<LabelVector> {
        LabelVector::new(self.labels.clone(), self.k, self.kind)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let file: LabelFile = serde_json::from_str(&text)?;
        file.label_vector()?;
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        fs::write(path, text)?;
        Ok(())
    }
}
