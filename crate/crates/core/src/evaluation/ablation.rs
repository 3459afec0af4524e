//! Ablations: number of clusters, checkpoint averaging, scorer comparison
//! and pseudo-label noise.

use std::collections::BTreeMap;
use std::time::Instant;

use super::auc::roc_auc;
use super::pipeline::{
    adapted_space, insert_rows, knn_row, mahalanobis_row, normalize_inputs, raw_space, run_pipeline_with,
    PipelineInputs,
};
use super::report::{EpochAuc, EvalReport};
use super::synth::corrupt_labels;
use crate::config::{Provenance, RunConfig};
use crate::error::{Error, Result, Stage, StageExt};
use crate::scoring::Scorer;

/// kNN neighbor counts compared by the scorer ablation.
pub const SCORER_ABLATION_KS: [usize; 4] = [1, 2, 5, 10];

fn primary_k(cfg: &RunConfig) -> usize {
    cfg.score.knn_k.first().copied().unwrap_or(1)
}

fn new_report(cfg: &RunConfig, provenance: &BTreeMap<String, Provenance>) -> Result<EvalReport> {
    Ok(EvalReport::new(serde_json::to_value(cfg)?, provenance.clone(), cfg.seed))
}

/// One adapted run per distinct K, plus the unadapted kNN rows under
/// `no_adaptation/`. Adapted rows are keyed `K=<k>/adapted/...`.
pub fn ablation_k_sweep(
    inputs: &PipelineInputs,
    cfg: &RunConfig,
    provenance: &BTreeMap<String, Provenance>,
    k_list: &[usize],
) -> Result<EvalReport> {
    let start = Instant::now();
    let mut ks = k_list.to_vec();
    ks.sort_unstable();
    ks.dedup();
    if ks.is_empty() {
        return Err(Error::invalid("k-sweep needs at least one K"));
    }
    let mut report = new_report(cfg, provenance)?;

    let norm = normalize_inputs(inputs)?;
    let raw = raw_space(inputs, &norm, cfg, None);
    for &k in &cfg.score.knn_k {
        let row = knn_row(&raw, k).stage(Stage::Scoring)?;
        insert_rows(&mut report, "no_adaptation", &[row]).stage(Stage::Evaluation)?;
    }

    for k in ks {
        let mut run_cfg = cfg.clone();
        run_cfg.cluster.k = k;
        run_cfg.eval.adapt = true;
        run_cfg.eval.per_epoch_auc = false;
        let out = run_pipeline_with(inputs, &run_cfg, BTreeMap::new())?;
        for (key, row) in &out.report.auc_table {
            if let Some(rest) = key.strip_prefix("adapted/") {
                let key = format!("K={k}/adapted/{rest}");
                report.auc_table.insert(
                    key,
                    super::report::AucRow {
                        feature_space: format!("K={k}/adapted"),
                        ..row.clone()
                    },
                );
            }
        }
        if let Some(acc) = out.report.clustering_accuracy {
            report.metrics.insert(format!("K={k}/clustering_accuracy"), acc);
        }
        report
            .warnings
            .extend(out.report.warnings.iter().map(|w| format!("K={k}: {w}")));
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Primary kNN AUC of every epoch checkpoint (`epoch_<i>/...`) and of the
/// averaged head (`averaged/...`): exactly `epochs + 1` rows.
pub fn ablation_epoch_averaging(
    inputs: &PipelineInputs,
    cfg: &RunConfig,
    provenance: &BTreeMap<String, Provenance>,
) -> Result<EvalReport> {
    let start = Instant::now();
    let k = primary_k(cfg);
    let mut run_cfg = cfg.clone();
    run_cfg.eval.adapt = true;
    run_cfg.eval.per_epoch_auc = false;
    run_cfg.score.scorers = vec![Scorer::Knn];
    run_cfg.score.knn_k = vec![k];
    let out = run_pipeline_with(inputs, &run_cfg, BTreeMap::new())?;
    let (Some(checkpoints), Some(averaged)) = (out.checkpoints, out.averaged) else {
        return Err(Error::invalid("epoch ablation produced no checkpoints"));
    };

    let mut report = new_report(cfg, provenance)?;
    report.clustering_accuracy = out.report.clustering_accuracy;
    report.pseudo_labels = out.report.pseudo_labels;
    report.warnings = out.report.warnings;
    let norm = normalize_inputs(inputs)?;
    let mut per_epoch = Vec::with_capacity(checkpoints.checkpoints.len());
    for (e, head) in checkpoints.checkpoints.iter().enumerate() {
        let name = format!("epoch_{}", e + 1);
        let space = adapted_space(&name, head, &norm, cfg)?;
        let row = knn_row(&space, k).stage(Stage::Scoring)?;
        let auc = roc_auc(&row.scores_in, &row.scores_out).stage(Stage::Evaluation)?;
        report.insert(&name, Scorer::Knn, row.params, auc).stage(Stage::Evaluation)?;
        per_epoch.push(EpochAuc {
            epoch: e + 1,
            auc: 100.0 * auc,
        });
    }
    let space = adapted_space("averaged", &averaged, &norm, cfg)?;
    let row = knn_row(&space, k).stage(Stage::Scoring)?;
    insert_rows(&mut report, "averaged", &[row]).stage(Stage::Evaluation)?;
    report.per_epoch_auc = Some(per_epoch);
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// Every scorer on raw and adapted features, kNN at several k.
pub fn ablation_scorers(
    inputs: &PipelineInputs,
    cfg: &RunConfig,
    provenance: &BTreeMap<String, Provenance>,
) -> Result<EvalReport> {
    let mut run_cfg = cfg.clone();
    run_cfg.score.scorers = vec![Scorer::Knn, Scorer::Mahalanobis, Scorer::Confidence];
    run_cfg.score.knn_k = SCORER_ABLATION_KS.to_vec();
    let mut out = run_pipeline_with(inputs, &run_cfg, provenance.clone())?;
    out.report.config = serde_json::to_value(cfg)?;
    Ok(out.report)
}

/// Mahalanobis fitted on pseudo-labels with a fraction of entries
/// resampled uniformly (`noise=<f>/<space>/mahalanobis`), against the
/// label-free primary kNN rows of the same features.
pub fn ablation_label_noise(
    inputs: &PipelineInputs,
    cfg: &RunConfig,
    provenance: &BTreeMap<String, Provenance>,
    noise_levels: &[f64],
) -> Result<EvalReport> {
    let start = Instant::now();
    if noise_levels.is_empty() {
        return Err(Error::invalid("label-noise ablation needs at least one noise level"));
    }
    let k = primary_k(cfg);
    let mut run_cfg = cfg.clone();
    run_cfg.score.scorers = vec![Scorer::Knn];
    run_cfg.score.knn_k = vec![k];
    run_cfg.eval.per_epoch_auc = false;
    let out = run_pipeline_with(inputs, &run_cfg, BTreeMap::new())?;

    let mut report = new_report(cfg, provenance)?;
    report.auc_table = out.report.auc_table;
    report.clustering_accuracy = out.report.clustering_accuracy;
    report.pseudo_labels = out.report.pseudo_labels;
    report.warnings = out.report.warnings;

    let norm = normalize_inputs(inputs)?;
    let mut spaces = vec![raw_space(inputs, &norm, cfg, None)];
    if let Some(head) = &out.averaged {
        spaces.push(adapted_space("adapted", head, &norm, cfg)?);
    }
    let clean = &out.pseudo.assignment.labels;
    let mut levels = noise_levels.to_vec();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    for noise in levels {
        let noisy = corrupt_labels(clean, noise, cfg.seed.wrapping_add(4)).stage(Stage::Scoring)?;
        for space in &spaces {
            let row = mahalanobis_row(space, &noisy, cfg).stage(Stage::Scoring)?;
            insert_rows(&mut report, &format!("noise={noise}/{}", space.name), &[row])
                .stage(Stage::Evaluation)?;
        }
    }
    report.wall_time_secs = start.elapsed().as_secs_f64();
    Ok(report)
}
