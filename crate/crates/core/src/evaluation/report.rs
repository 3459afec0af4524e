//! Evaluation reports: JSON, an aligned text table, and CSV plot data.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::Provenance;
use crate::error::{Error, Result};
use crate::scoring::Scorer;

/// Name of the field excluded from reproducibility comparisons.
pub const WALL_TIME_FIELD: &str = "wall_time_secs";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucRow {
    pub feature_space: String,
    pub scorer: Scorer,
    pub params: Value,
    /// ROC-AUC in percent.
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochAuc {
    /// 1-based epoch index.
    pub epoch: usize,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoLabelSummary {
    pub method: String,
    pub k: usize,
    pub occupied_clusters: usize,
    pub cluster_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Keyed by `feature_space/scorer[(params)]`.
    pub auc_table: BTreeMap<String, AucRow>,
    pub clustering_accuracy: Option<f64>,
    /// Primary kNN AUC (percent) of each epoch checkpoint.
    pub per_epoch_auc: Option<Vec<EpochAuc>>,
    pub pseudo_labels: Option<PseudoLabelSummary>,
    /// Extra scalar results of ablations, such as per-K clustering accuracy.
    pub metrics: BTreeMap<String, f64>,
    /// Non-fatal conditions met during the run.
    pub warnings: Vec<String>,
    pub config: Value,
    pub provenance: BTreeMap<String, Provenance>,
    pub seed: u64,
    pub wall_time_secs: f64,
}

/// Table key for a scorer row, e.g. `adapted/knn(k=1)`.
pub fn row_key(feature_space: &str, scorer: Scorer, params: &Value) -> String {
    match (scorer, params.get("k")) {
        (Scorer::Knn, Some(k)) => format!("{feature_space}/knn(k={k})"),
        _ => format!("{feature_space}/{}", scorer.as_str()),
    }
}

impl EvalReport {
    pub fn new(config: Value, provenance: BTreeMap<String, Provenance>, seed: u64) -> Self {
        Self {
            auc_table: BTreeMap::new(),
            clustering_accuracy: None,
            per_epoch_auc: None,
            pseudo_labels: None,
            metrics: BTreeMap::new(),
            warnings: Vec::new(),
            config,
            provenance,
            seed,
            wall_time_secs: 0.0,
        }
    }

    /// Adds a row given an AUC fraction in `[0, 1]`; duplicate keys are an error.
    pub fn insert(&mut self, feature_space: &str, scorer: Scorer, params: Value, auc: f64) -> Result<String> {
        if !(0.0..=1.0).contains(&auc) {
            return Err(Error::invalid(format!("AUC {auc} outside [0, 1]")));
        }
        let key = row_key(feature_space, scorer, &params);
        if self.auc_table.contains_key(&key) {
            return Err(Error::invalid(format!("duplicate report row {key:?}")));
        }
        self.auc_table.insert(
            key.clone(),
            AucRow {
                feature_space: feature_space.to_string(),
                scorer,
                params,
                auc: 100.0 * auc,
            },
        );
        Ok(key)
    }

    /// AUC of a row as a fraction in `[0, 1]`.
    pub fn auc(&self, key: &str) -> Option<f64> {
        self.auc_table.get(key).map(|r| r.auc / 100.0)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        Ok(text)
    }

    /// JSON with the wall-time field removed, for reproducibility checks.
    pub fn to_json_without_wall_time(&self) -> Result<String> {
        let mut v = serde_json::to_value(self)?;
        if let Value::Object(map) = &mut v {
            map.remove(WALL_TIME_FIELD);
        }
        Ok(serde_json::to_string_pretty(&v)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    /// Aligned plain-text rendering of the AUC table.
    pub fn to_table(&self) -> String {
        let width = self.auc_table.keys().map(|k| k.len()).max().unwrap_or(3).max(3);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  ROC-AUC(%)", "row");
        for (key, row) in &self.auc_table {
            let _ = writeln!(out, "{key:<width$}  {:>10.2}", row.auc);
        }
        if let Some(acc) = self.clustering_accuracy {
            let _ = writeln!(out, "clustering accuracy: {:.4}", acc);
        }
        if let Some(epochs) = &self.per_epoch_auc {
            for e in epochs {
                let _ = writeln!(out, "epoch {:>3}: {:>6.2}", e.epoch, e.auc);
            }
        }
        for (key, v) in &self.metrics {
            let _ = writeln!(out, "{key}: {v:.4}");
        }
        out
    }
}

/// Per-key mean and standard deviation over several seeded reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seeds: Vec<u64>,
    /// Key → (mean, sample std, per-seed values), AUC in percent.
    pub rows: BTreeMap<String, SummaryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
}

/// Summarizes AUC rows present in every report.
pub fn summarize(reports: &[EvalReport]) -> SeedSummary {
    let mut rows = BTreeMap::new();
    if let Some(first) = reports.first() {
        for key in first.auc_table.keys() {
            let values: Vec<f64> = reports
                .iter()
                .filter_map(|r| r.auc_table.get(key).map(|row| row.auc))
                .collect();
            if values.len() != reports.len() {
                continue;
            }
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let std = if values.len() > 1 {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            rows.insert(key.clone(), SummaryRow { mean, std, values });
        }
    }
    SeedSummary {
        seeds: reports.iter().map(|r| r.seed).collect(),
        rows,
    }
}

/// ROC points as `fpr,tpr` CSV.
pub fn write_roc_csv(points: &[(f64, f64)], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    w.write_record(["fpr", "tpr"]).map_err(|e| Error::Csv(e.to_string()))?;
    for (fpr, tpr) in points {
        w.write_record([fpr.to_string(), tpr.to_string()])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Scores of both test splits as `split,score` CSV, for histograms.
pub fn write_scores_csv(scores_in: &[f64], scores_out: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Csv(e.to_string()))?;
    w.write_record(["split", "score"]).map_err(|e| Error::Csv(e.to_string()))?;
    let tagged = scores_in
        .iter()
        .map(|s| ("test_in", s))
        .chain(scores_out.iter().map(|s| ("test_out", s)));
    for (split, s) in tagged {
        w.write_record([split.to_string(), s.to_string()])
            .map_err(|e| Error::Csv(e.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn duplicate_keys_rejected() {
        let mut r = EvalReport::new(json!({}), BTreeMap::new(), 0);
        r.insert("raw", Scorer::Knn, json!({ "k": 1 }), 0.8).unwrap();
        assert!(r.insert("raw", Scorer::Knn, json!({ "k": 1 }), 0.7).is_err());
        r.insert("raw", Scorer::Knn, json!({ "k": 2 }), 0.7).unwrap();
        assert_eq!(r.auc("raw/knn(k=1)"), Some(0.8));
        assert_eq!(r.auc_table["raw/knn(k=1)"].auc, 80.0);
    }

    #[test]
    fn out_of_range_auc_rejected() {
        let mut r = EvalReport::new(json!({}), BTreeMap::new(), 0);
        assert!(r.insert("raw", Scorer::Confidence, json!({}), 1.5).is_err());
    }

    #[test]
    fn wall_time_excluded() {
        let mut a = EvalReport::new(json!({ "seed": 1 }), BTreeMap::new(), 1);
        let mut b = a.clone();
        a.wall_time_secs = 1.0;
        b.wall_time_secs = 2.0;
        assert_ne!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a.to_json_without_wall_time().unwrap(), b.to_json_without_wall_time().unwrap());
    }

    #[test]
    fn summary_statistics() {
        let mut reports = Vec::new();
        for (seed, auc) in [(0, 0.8), (1, 0.9)] {
            let mut r = EvalReport::new(json!({}), BTreeMap::new(), seed);
            r.insert("raw", Scorer::Mahalanobis, json!({}), auc).unwrap();
            reports.push(r);
        }
        let s = summarize(&reports);
        let row = &s.rows["raw/mahalanobis"];
        assert!((row.mean - 85.0).abs() < 1e-9);
        assert!((row.std - 50f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn table_lists_rows() {
        let mut r = EvalReport::new(json!({}), BTreeMap::new(), 0);
        r.insert("adapted", Scorer::Knn, json!({ "k": 1 }), 0.9).unwrap();
        assert!(r.to_table().contains("adapted/knn(k=1)"));
    }
}
