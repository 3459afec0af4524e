//! End-to-end run: pseudo-labels, adaptation, feature extraction, scoring
//! and ROC-AUC.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::Value;

use super::auc::roc_auc;
use super::report::{EpochAuc, EvalReport, PseudoLabelSummary};
use crate::adaptation::{average_checkpoints, extract_features, finetune_head, hidden_matrix, CheckpointSet, ClusterHead};
use crate::clustering::{
    build_knn_graph, cluster_accuracy, kmeans, scan_train, self_label, ClusterAssignment,
};
use crate::config::{PseudoLabeler, Provenance, RunConfig};
use crate::error::{Result, Stage, StageExt};
use crate::io::{l2_normalize, EmbeddingMatrix, LabelVector};
use crate::scoring::{confidence_score, fit_gaussians_with, knn_score, mahalanobis_score, Scorer};

/// The three splits a run consumes, plus optional ground truth for the
/// train split used only to report clustering accuracy.
#[derive(Debug, Clone, Copy)]
pub struct PipelineInputs<'a> {
    pub train: &'a EmbeddingMatrix,
    pub test_in: &'a EmbeddingMatrix,
    pub test_out: &'a EmbeddingMatrix,
    pub truth: Option<&'a LabelVector>,
}

/// Pseudo-labels and, for head-based methods, the clustering head.
#[derive(Debug, Clone)]
pub struct PseudoLabels {
    pub assignment: ClusterAssignment,
    pub head: Option<ClusterHead>,
}

/// Produces pseudo-labels for L2-normalized train rows.
pub fn pseudo_label(train: &EmbeddingMatrix, cfg: &RunConfig) -> Result<PseudoLabels> {
    let k = cfg.cluster.k;
    match cfg.cluster.method {
        PseudoLabeler::Kmeans => {
            let fit = kmeans(train, k, cfg.cluster.max_iters, cfg.kmeans_seed())?;
            let mut assignment = fit.assignment;
            if assignment.occupied_clusters() < k {
                assignment
                    .warnings
                    .push(format!("k-means left {} of {k} clusters empty", k - assignment.occupied_clusters()));
            }
            Ok(PseudoLabels { assignment, head: None })
        }
        PseudoLabeler::Scan | PseudoLabeler::ScanSelfLabel => {
            let scan_cfg = cfg.scan_config();
            let graph = build_knn_graph(train, scan_cfg.k_graph.min(train.n().saturating_sub(1)))?;
            let fit = scan_train(train, &graph, &scan_cfg)?;
            if cfg.cluster.method == PseudoLabeler::Scan {
                return Ok(PseudoLabels {
                    assignment: fit.assignment,
                    head: Some(fit.head),
                });
            }
            let mut refined = self_label(&fit.head, train, &cfg.self_label_config())?;
            let mut warnings = fit.assignment.warnings;
            warnings.append(&mut refined.assignment.warnings);
            refined.assignment.warnings = warnings;
            Ok(PseudoLabels {
                assignment: refined.assignment,
                head: Some(refined.head),
            })
        }
    }
}

/// Finetunes a freshly initialized head on the pseudo-labels.
pub fn adapt(train: &EmbeddingMatrix, labels: &LabelVector, cfg: &RunConfig) -> Result<(CheckpointSet, ClusterHead)> {
    let adapt_cfg = cfg.adapt_config();
    let init = ClusterHead::init(train.d(), adapt_cfg.hidden, labels.k(), cfg.head_seed())?;
    let checkpoints = finetune_head(&init, train, labels, &adapt_cfg)?;
    let averaged = average_checkpoints(&checkpoints)?;
    Ok((checkpoints, averaged))
}

/// Train and test rows of one feature space.
pub(crate) struct FeatureSpace {
    pub name: String,
    pub train: EmbeddingMatrix,
    pub test_in: EmbeddingMatrix,
    pub test_out: EmbeddingMatrix,
    /// Unnormalized counterparts, for Mahalanobis on raw features.
    pub unnormalized: Option<[EmbeddingMatrix; 3]>,
    /// Head whose confidence is scored, applied to normalized inputs.
    pub head: Option<ClusterHead>,
}

/// Normalized inputs shared by every feature space of a run.
pub(crate) struct Normalized {
    pub train: EmbeddingMatrix,
    pub test_in: EmbeddingMatrix,
    pub test_out: EmbeddingMatrix,
}

pub(crate) fn normalize_inputs(inputs: &PipelineInputs) -> Result<Normalized> {
    Ok(Normalized {
        train: l2_normalize(inputs.train).stage(Stage::Clustering)?,
        test_in: l2_normalize(inputs.test_in).stage(Stage::Scoring)?,
        test_out: l2_normalize(inputs.test_out).stage(Stage::Scoring)?,
    })
}

pub(crate) fn raw_space(inputs: &PipelineInputs, norm: &Normalized, cfg: &RunConfig, head: Option<ClusterHead>) -> FeatureSpace {
    FeatureSpace {
        name: "raw".into(),
        train: norm.train.clone(),
        test_in: norm.test_in.clone(),
        test_out: norm.test_out.clone(),
        unnormalized: (!cfg.score.mahalanobis_normalized)
            .then(|| [inputs.train.clone(), inputs.test_in.clone(), inputs.test_out.clone()]),
        head,
    }
}

pub(crate) fn adapted_space(name: &str, head: &ClusterHead, norm: &Normalized, cfg: &RunConfig) -> Result<FeatureSpace> {
    let train = extract_features(head, &norm.train).stage(Stage::Adaptation)?;
    let test_in = extract_features(head, &norm.test_in).stage(Stage::Scoring)?;
    let test_out = extract_features(head, &norm.test_out).stage(Stage::Scoring)?;
    let unnormalized = if cfg.score.mahalanobis_normalized {
        None
    } else {
        Some([
            hidden_matrix(head, &norm.train).stage(Stage::Adaptation)?,
            hidden_matrix(head, &norm.test_in).stage(Stage::Scoring)?,
            hidden_matrix(head, &norm.test_out).stage(Stage::Scoring)?,
        ])
    };
    Ok(FeatureSpace {
        name: name.into(),
        train,
        test_in,
        test_out,
        unnormalized,
        head: Some(head.clone()),
    })
}

/// Scores produced for one scorer configuration on one feature space.
pub(crate) struct ScoredRow {
    pub scorer: Scorer,
    pub params: Value,
    pub scores_in: Vec<f64>,
    pub scores_out: Vec<f64>,
}

pub(crate) fn knn_row(space: &FeatureSpace, k: usize) -> Result<ScoredRow> {
    let a = knn_score(&space.train, &space.test_in, k)?;
    let b = knn_score(&space.train, &space.test_out, k)?;
    Ok(ScoredRow {
        scorer: Scorer::Knn,
        params: a.params,
        scores_in: a.scores,
        scores_out: b.scores,
    })
}

pub(crate) fn mahalanobis_row(space: &FeatureSpace, labels: &LabelVector, cfg: &RunConfig) -> Result<ScoredRow> {
    let [train, test_in, test_out] = match &space.unnormalized {
        Some([a, b, c]) => [a, b, c],
        None => [&space.train, &space.test_in, &space.test_out],
    };
    let bank = fit_gaussians_with(train, labels, cfg.score.shrinkage, cfg.score.covariance)?;
    let a = mahalanobis_score(&bank, test_in)?;
    let b = mahalanobis_score(&bank, test_out)?;
    Ok(ScoredRow {
        scorer: Scorer::Mahalanobis,
        params: a.params,
        scores_in: a.scores,
        scores_out: b.scores,
    })
}

/// Scores every configured scorer on `space`; rows the space cannot
/// support (confidence without a head, k above the train size) are skipped
/// with a warning.
pub(crate) fn score_space(
    space: &FeatureSpace,
    norm: &Normalized,
    labels: &LabelVector,
    cfg: &RunConfig,
    warnings: &mut Vec<String>,
) -> Result<Vec<ScoredRow>> {
    let mut rows = Vec::new();
    for scorer in &cfg.score.scorers {
        match scorer {
            Scorer::Knn => {
                for &k in &cfg.score.knn_k {
                    if k > space.train.n() {
                        warnings.push(format!("{}: knn k={k} exceeds the train size, skipped", space.name));
                        continue;
                    }
                    rows.push(knn_row(space, k)?);
                }
            }
            Scorer::Mahalanobis => rows.push(mahalanobis_row(space, labels, cfg)?),
            Scorer::Confidence => match &space.head {
                Some(head) => {
                    let a = confidence_score(head, &norm.test_in)?;
                    let b = confidence_score(head, &norm.test_out)?;
                    rows.push(ScoredRow {
                        scorer: Scorer::Confidence,
                        params: a.params,
                        scores_in: a.scores,
                        scores_out: b.scores,
                    });
                }
                None => warnings.push(format!(
                    "{}: confidence needs a classifier head, skipped",
                    space.name
                )),
            },
        }
    }
    Ok(rows)
}

pub(crate) fn insert_rows(report: &mut EvalReport, prefix: &str, rows: &[ScoredRow]) -> Result<Vec<String>> {
    let mut keys = Vec::with_capacity(rows.len());
    for row in rows {
        let auc = roc_auc(&row.scores_in, &row.scores_out)?;
        keys.push(report.insert(prefix, row.scorer, row.params.clone(), auc)?);
    }
    Ok(keys)
}

fn keep_scores(scores: &mut BTreeMap<String, RowScores>, keys: Vec<String>, rows: Vec<ScoredRow>) {
    for (key, row) in keys.into_iter().zip(rows) {
        scores.insert(
            key,
            RowScores {
                scores_in: row.scores_in,
                scores_out: row.scores_out,
            },
        );
    }
}

/// Test-split scores behind one report row.
#[derive(Debug, Clone, PartialEq)]
pub struct RowScores {
    pub scores_in: Vec<f64>,
    pub scores_out: Vec<f64>,
}

/// Intermediate products of a run, kept for the ablations.
pub struct PipelineOutput {
    pub report: EvalReport,
    pub pseudo: PseudoLabels,
    pub checkpoints: Option<CheckpointSet>,
    pub averaged: Option<ClusterHead>,
    /// Scores behind every row of the report's AUC table.
    pub scores: BTreeMap<String, RowScores>,
}

/// Runs the whole pipeline. Errors name the stage that raised them.
pub fn run_pipeline(inputs: &PipelineInputs, cfg: &RunConfig) -> Result<EvalReport> {
    run_pipeline_with(inputs, cfg, BTreeMap::new()).map(|o| o.report)
}

/// [`run_pipeline`] recording field provenance in the report and keeping
/// the intermediate products.
pub fn run_pipeline_with(
    inputs: &PipelineInputs,
    cfg: &RunConfig,
    provenance: BTreeMap<String, Provenance>,
) -> Result<PipelineOutput> {
    let start = Instant::now();
    cfg.validate().stage(Stage::Io)?;
    let mut report = EvalReport::new(serde_json::to_value(cfg)?, provenance, cfg.seed);

    let norm = normalize_inputs(inputs)?;
    let pseudo = pseudo_label(&norm.train, cfg).stage(Stage::Clustering)?;
    let labels = &pseudo.assignment.labels;
    report.warnings.extend(pseudo.assignment.warnings.iter().cloned());
    report.pseudo_labels = Some(PseudoLabelSummary {
        method: cfg.cluster.method.as_str().into(),
        k: labels.k(),
        occupied_clusters: pseudo.assignment.occupied_clusters(),
        cluster_sizes: labels.counts(),
    });
    if let Some(truth) = inputs.truth {
        report.clustering_accuracy = Some(cluster_accuracy(labels, truth).stage(Stage::Evaluation)?);
    }

    let adapted = if cfg.eval.adapt {
        Some(adapt(&norm.train, labels, cfg).stage(Stage::Adaptation)?)
    } else {
        None
    };

    let raw = raw_space(inputs, &norm, cfg, pseudo.head.clone());
    let mut scores = BTreeMap::new();
    let rows = score_space(&raw, &norm, labels, cfg, &mut report.warnings).stage(Stage::Scoring)?;
    let keys = insert_rows(&mut report, "raw", &rows).stage(Stage::Evaluation)?;
    keep_scores(&mut scores, keys, rows);

    if let Some((checkpoints, averaged)) = &adapted {
        let space = adapted_space("adapted", averaged, &norm, cfg)?;
        let rows = score_space(&space, &norm, labels, cfg, &mut report.warnings).stage(Stage::Scoring)?;
        let keys = insert_rows(&mut report, "adapted", &rows).stage(Stage::Evaluation)?;
        keep_scores(&mut scores, keys, rows);

        if cfg.eval.per_epoch_auc {
            let k = cfg.score.knn_k.first().copied().unwrap_or(1);
            let mut per_epoch = Vec::with_capacity(checkpoints.checkpoints.len());
            for (e, head) in checkpoints.checkpoints.iter().enumerate() {
                let space = adapted_space(&format!("epoch_{}", e + 1), head, &norm, cfg)?;
                let row = knn_row(&space, k).stage(Stage::Scoring)?;
                let auc = roc_auc(&row.scores_in, &row.scores_out).stage(Stage::Evaluation)?;
                per_epoch.push(EpochAuc {
                    epoch: e + 1,
                    auc: 100.0 * auc,
                });
            }
            report.per_epoch_auc = Some(per_epoch);
        }
        if let Some(&loss) = checkpoints.epoch_losses.last() {
            report.metrics.insert("adapt_final_epoch_loss".into(), loss);
        }
    }

    report.wall_time_secs = start.elapsed().as_secs_f64();
    let (checkpoints, averaged) = match adapted {
        Some((c, a)) => (Some(c), Some(a)),
        None => (None, None),
    };
    Ok(PipelineOutput {
        report,
        pseudo,
        checkpoints,
        averaged,
        scores,
    })
}
