//! ROC-AUC, the synthetic benchmark, and experiment orchestration.

mod ablation;
mod auc;
mod pipeline;
mod report;
mod synth;

pub use ablation::{
    ablation_epoch_averaging, ablation_k_sweep, ablation_label_noise, ablation_scorers, SCORER_ABLATION_KS,
};
pub use auc::{doubled_u_statistic, roc_auc, roc_auc_scores, roc_curve};
pub use pipeline::{adapt, pseudo_label, run_pipeline, run_pipeline_with, PipelineInputs, PipelineOutput, PseudoLabels, RowScores};
pub use report::{
    row_key, summarize, write_roc_csv, write_scores_csv, AucRow, EpochAuc, EvalReport, PseudoLabelSummary,
    SeedSummary, SummaryRow, WALL_TIME_FIELD,
};
pub use synth::{corrupt_labels, generate_synthetic, SynthData, SynthSpec, MAX_PLACEMENT_ATTEMPTS};
