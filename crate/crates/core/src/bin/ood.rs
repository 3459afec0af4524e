use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use ood_core::adaptation::{average_checkpoints, extract_features, finetune_head, ClusterHead};
use ood_core::config::{parse_flag_value, resolve_config, resolve_values, ResolvedConfig};
use ood_core::error::{Error, Result, Stage};
use ood_core::evaluation::{
    ablation_epoch_averaging, ablation_k_sweep, ablation_label_noise, ablation_scorers, generate_synthetic,
    pseudo_label, roc_auc_scores, roc_curve, run_pipeline_with, summarize, write_roc_csv, write_scores_csv,
    EvalReport, PipelineInputs, SeedSummary,
};
use ood_core::io::{
    l2_normalize, load_checkpoint, load_embeddings, read_csv_embeddings, save_checkpoint, save_embeddings,
    DatasetManifest, EmbeddingMatrix, LabelFile, LabelVector, Split,
};
use ood_core::scoring::{
    confidence_score, fit_gaussians_with, knn_score, mahalanobis_score, CovarianceMode, ScoreVector,
};

/// Label-free multi-class out-of-distribution detection over embeddings.
#[derive(Parser, Debug)]
#[command(name = "ood", version)]
struct Cli {
    /// Worker thread cap; defaults to the number of available cores.
    #[arg(long, global = true, env = "OOD_THREADS")]
    threads: Option<usize>,

    /// Increase log verbosity (-v debug, -vv trace). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// JSON config file; every field falls back to its default.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a config field by dotted path, e.g. `--set adapt.epochs=7`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Pseudo-label unlabeled normal embeddings.
    Cluster {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = ["kmeans", "scan", "scan+selflabel"])]
        method: Option<String>,
        /// Number of clusters K.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        /// Ground-truth label file; clustering accuracy is logged.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Finetune a feature head on pseudo-labels and average its epoch checkpoints.
    Adapt {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Averaged head checkpoint.
        #[arg(long)]
        out: PathBuf,
        /// Directory receiving `epoch_<i>.ckpt` for every epoch.
        #[arg(long)]
        save_epoch_checkpoints: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Score test embeddings against train embeddings.
    Score {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(long, value_enum)]
        scorer: ScorerArg,
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Head checkpoint: inputs are mapped to its hidden features first,
        /// and the confidence scorer uses its outputs.
        #[arg(long)]
        head: Option<PathBuf>,
        /// Cluster labels of the train rows (Mahalanobis).
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, default_value_t = ood_core::scoring::DEFAULT_SHRINKAGE)]
        shrinkage: f64,
        #[arg(long, value_enum, default_value_t = CovarianceArg::PerCluster)]
        covariance: CovarianceArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// ROC-AUC of two score files (out-of-distribution as positives).
    Eval {
        #[arg(long)]
        scores_in: PathBuf,
        #[arg(long)]
        scores_out: PathBuf,
        /// Also write ROC points as CSV.
        #[arg(long)]
        roc_csv: Option<PathBuf>,
    },
    /// Cluster, adapt, score and evaluate in one run.
    Pipeline {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        test_in: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        /// Ground-truth labels of the train rows, for clustering accuracy.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Re-run with the configuration embedded in an earlier report.
        #[arg(long, conflicts_with = "config")]
        from_report: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for ROC and score CSV files, one pair per report row.
        #[arg(long)]
        plot_dir: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Generate a synthetic Gaussian-mixture benchmark.
    Synth {
        /// JSON synthetic spec; defaults fill missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run an ablation over one or more seeds.
    Ablate {
        #[command(subcommand)]
        kind: AblationKind,
    },
    /// Convert a CSV file with header `dim0..dim{d-1}` to the binary format.
    ImportCsv {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        name: Option<String>,
        #[arg(long, default_value = "train_normal")]
        split: String,
    },
}

#[derive(Args, Debug)]
struct AblationArgs {
    /// Train embeddings; omit all three splits to use the synthetic benchmark.
    #[arg(long, requires_all = ["test_in", "test_out"])]
    train: Option<PathBuf>,
    #[arg(long)]
    test_in: Option<PathBuf>,
    #[arg(long)]
    test_out: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated seeds. With synthetic data each seed also draws
    /// a fresh dataset.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Subcommand, Debug)]
enum AblationKind {
    /// Adaptation with several cluster counts against no adaptation.
    KSweep {
        #[arg(long, value_delimiter = ',', default_value = "10,20,30")]
        ks: Vec<usize>,
        #[command(flatten)]
        args: AblationArgs,
    },
    /// Per-epoch checkpoints against the averaged head.
    Epochs {
        #[command(flatten)]
        args: AblationArgs,
    },
    /// All scorers, kNN at k = 1, 2, 5, 10.
    Scorers {
        #[command(flatten)]
        args: AblationArgs,
    },
    /// Mahalanobis on corrupted pseudo-labels against kNN.
    LabelNoise {
        #[arg(long, value_delimiter = ',', default_value = "0,0.1,0.3,0.5")]
        noise: Vec<f64>,
        #[command(flatten)]
        args: AblationArgs,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ScorerArg {
    Knn,
    Mahalanobis,
    Confidence,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CovarianceArg {
    PerCluster,
    Shared,
}

/// Failure of a subcommand, mapped to the process exit code.
enum Failure {
    Usage(String),
    Stage(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e => Failure::Stage(e),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

trait InStage<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, Failure>;
}

impl<T> InStage<T> for Result<T> {
    fn in_stage(self, stage: Stage) -> std::result::Result<T, Failure> {
        self.map_err(|e| match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            e @ Error::Stage { .. } => Failure::Stage(e),
            e => Failure::Stage(Error::Stage {
                stage,
                source: Box::new(e),
            }),
        })
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let level = match cli.verbose {
        0 => "info",
        1 => "debug",
        _ => "trace",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    if let Some(threads) = cli.threads {
        if threads == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }

    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Stage(e)) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                log::debug!("caused by: {s}");
                source = s.source();
            }
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> CmdResult {
    match command {
        Command::Cluster {
            input,
            method,
            k,
            seed,
            out,
            truth,
            cfg,
        } => {
            let mut flags = Vec::new();
            push_flag(&mut flags, "cluster.method", method.map(Value::from));
            push_flag(&mut flags, "cluster.k", k.map(Value::from));
            push_flag(&mut flags, "seed", seed.map(Value::from));
            let resolved = resolve(&cfg, flags)?;
            let train = load(&input)?;
            let train = l2_normalize(&train).in_stage(Stage::Clustering)?;
            let pseudo = pseudo_label(&train, &resolved.config).in_stage(Stage::Clustering)?;
            for w in &pseudo.assignment.warnings {
                log::warn!("{w}");
            }
            if let Some(truth) = truth {
                let truth = load_labels(&truth)?;
                let acc = ood_core::clustering::cluster_accuracy(&pseudo.assignment.labels, &truth)
                    .in_stage(Stage::Evaluation)?;
                log::info!("clustering accuracy {acc:.4}");
            }
            let echo = json!({
                "seed": resolved.config.seed,
                "cluster": resolved.config.cluster,
                "scan": resolved.config.scan,
                "self_label": resolved.config.self_label,
            });
            pseudo
                .assignment
                .to_label_file(Some(echo))
                .save(&out)
                .in_stage(Stage::Io)?;
            log::info!(
                "wrote {} labels over {} occupied clusters to {}",
                pseudo.assignment.labels.len(),
                pseudo.assignment.occupied_clusters(),
                out.display()
            );
            Ok(())
        }
        Command::Adapt {
            input,
            labels,
            epochs,
            seed,
            out,
            save_epoch_checkpoints,
            cfg,
        } => {
            let mut flags = Vec::new();
            push_flag(&mut flags, "adapt.epochs", epochs.map(Value::from));
            push_flag(&mut flags, "seed", seed.map(Value::from));
            let resolved = resolve(&cfg, flags)?;
            let train = load(&input)?;
            let labels = load_labels(&labels)?;
            let train = l2_normalize(&train).in_stage(Stage::Adaptation)?;
            let adapt_cfg = resolved.config.adapt_config();
            let init = ClusterHead::init(train.d(), adapt_cfg.hidden, labels.k(), resolved.config.head_seed())
                .in_stage(Stage::Adaptation)?;
            let cs = finetune_head(&init, &train, &labels, &adapt_cfg).in_stage(Stage::Adaptation)?;
            for (e, loss) in cs.epoch_losses.iter().enumerate() {
                log::info!("epoch {}: loss {loss:.6}", e + 1);
            }
            if let Some(dir) = save_epoch_checkpoints {
                fs::create_dir_all(&dir).map_err(Error::from).in_stage(Stage::Io)?;
                for (e, head) in cs.checkpoints.iter().enumerate() {
                    save_checkpoint(head, dir.join(format!("epoch_{}.ckpt", e + 1))).in_stage(Stage::Io)?;
                }
            }
            let averaged = average_checkpoints(&cs).in_stage(Stage::Adaptation)?;
            save_checkpoint(&averaged, &out).in_stage(Stage::Io)?;
            log::info!("wrote averaged head to {}", out.display());
            Ok(())
        }
        Command::Score {
            train,
            test,
            scorer,
            k,
            head,
            labels,
            shrinkage,
            covariance,
            out,
        } => {
            let train = load(&train)?;
            let test = load(&test)?;
            let head = head.map(|p| load_checkpoint(&p)).transpose().in_stage(Stage::Io)?;
            let scores = score_files(&train, &test, scorer, k, head.as_ref(), labels.as_deref(), shrinkage, covariance)
                .in_stage(Stage::Scoring)?;
            scores.save(&out).in_stage(Stage::Io)?;
            log::info!("wrote {} {} scores to {}", scores.len(), scores.scorer.as_str(), out.display());
            Ok(())
        }
        Command::Eval {
            scores_in,
            scores_out,
            roc_csv,
        } => {
            let a = ScoreVector::load(&scores_in).in_stage(Stage::Io)?;
            let b = ScoreVector::load(&scores_out).in_stage(Stage::Io)?;
            let auc = roc_auc_scores(&a, &b).in_stage(Stage::Evaluation)?;
            if let Some(path) = roc_csv {
                let points = roc_curve(&a.scores, &b.scores).in_stage(Stage::Evaluation)?;
                write_roc_csv(&points, path).in_stage(Stage::Io)?;
            }
            println!("{}", json!({ "roc_auc": auc, "scorer": a.scorer, "n_in": a.len(), "n_out": b.len() }));
            Ok(())
        }
        Command::Pipeline {
            train,
            test_in,
            test_out,
            truth,
            seed,
            from_report,
            out,
            plot_dir,
            cfg,
        } => {
            let mut flags = Vec::new();
            push_flag(&mut flags, "seed", seed.map(Value::from));
            let resolved = match from_report {
                Some(path) => {
                    let report = EvalReport::load(&path).in_stage(Stage::Io)?;
                    resolve_values(Some(&report.config), &with_set(&cfg, flags)?)?
                }
                None => resolve(&cfg, flags)?,
            };
            let train = load(&train)?;
            let test_in = load(&test_in)?;
            let test_out = load(&test_out)?;
            let truth = truth.map(|p| load_labels(&p)).transpose()?;
            let inputs = PipelineInputs {
                train: &train,
                test_in: &test_in,
                test_out: &test_out,
                truth: truth.as_ref(),
            };
            let output =
                run_pipeline_with(&inputs, &resolved.config, resolved.provenance).in_stage(Stage::Evaluation)?;
            for w in &output.report.warnings {
                log::warn!("{w}");
            }
            output.report.save(&out).in_stage(Stage::Io)?;
            if let Some(dir) = plot_dir {
                fs::create_dir_all(&dir).map_err(Error::from).in_stage(Stage::Io)?;
                for (key, s) in &output.scores {
                    let stem = key.replace(['/', '(', ')', '='], "_");
                    let points = roc_curve(&s.scores_in, &s.scores_out).in_stage(Stage::Evaluation)?;
                    write_roc_csv(&points, dir.join(format!("roc_{stem}.csv"))).in_stage(Stage::Io)?;
                    write_scores_csv(&s.scores_in, &s.scores_out, dir.join(format!("scores_{stem}.csv")))
                        .in_stage(Stage::Io)?;
                }
            }
            eprint!("{}", output.report.to_table());
            Ok(())
        }
        Command::Synth { spec, seed, out_dir } => {
            let mut file = match spec {
                Some(path) => {
                    let text = fs::read_to_string(&path)
                        .map_err(|e| Failure::Usage(format!("cannot read spec {}: {e}", path.display())))?;
                    serde_json::from_str::<Value>(&text)
                        .map_err(|e| Failure::Usage(format!("spec {} is not valid JSON: {e}", path.display())))?
                }
                None => json!({}),
            };
            if let Some(seed) = seed {
                file["seed"] = Value::from(seed);
            }
            let resolved = resolve_values(Some(&json!({ "synth": file })), &[])?;
            let spec = resolved.config.synth;
            let data = generate_synthetic(&spec).in_stage(Stage::Io)?;
            fs::create_dir_all(&out_dir).map_err(Error::from).in_stage(Stage::Io)?;
            let name = format!("synthetic-seed{}", spec.seed);
            for (file, split, m) in [
                ("train.emb", Split::TrainNormal, &data.train),
                ("test_in.emb", Split::TestIn, &data.test_in),
                ("test_out.emb", Split::TestOut, &data.test_out),
            ] {
                let manifest = DatasetManifest::describe(&name, split, "synthetic", m);
                save_embeddings(m, &manifest, out_dir.join(file)).in_stage(Stage::Io)?;
            }
            LabelFile::from_labels(&data.train_truth)
                .save(out_dir.join("train_truth.json"))
                .in_stage(Stage::Io)?;
            let mut text = serde_json::to_string_pretty(&spec).map_err(Error::from).in_stage(Stage::Io)?;
            text.push('\n');
            fs::write(out_dir.join("spec.json"), text).map_err(Error::from).in_stage(Stage::Io)?;
            log::info!("wrote synthetic benchmark to {}", out_dir.display());
            Ok(())
        }
        Command::Ablate { kind } => run_ablation(kind),
        Command::ImportCsv {
            input,
            out,
            name,
            split,
        } => {
            let split: Split = split.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
            let m = read_csv_embeddings(&input).in_stage(Stage::Io)?;
            let name = name.unwrap_or_else(|| {
                input
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_else(|| "imported".into())
            });
            let manifest = DatasetManifest::describe(name, split, "csv", &m);
            let written = save_embeddings(&m, &manifest, &out).in_stage(Stage::Io)?;
            log::info!("imported {}x{} embeddings, checksum {}", written.n, written.d, written.checksum);
            Ok(())
        }
    }
}

fn push_flag(flags: &mut Vec<(String, Value)>, path: &str, value: Option<Value>) {
    if let Some(v) = value {
        flags.push((path.to_string(), v));
    }
}

fn with_set(cfg: &ConfigArgs, mut flags: Vec<(String, Value)>) -> std::result::Result<Vec<(String, Value)>, Failure> {
    for item in &cfg.set {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set expects KEY=VALUE, got {item:?}")))?;
        flags.push((key.trim().to_string(), parse_flag_value(raw.trim())));
    }
    Ok(flags)
}

fn resolve(cfg: &ConfigArgs, flags: Vec<(String, Value)>) -> std::result::Result<ResolvedConfig, Failure> {
    let flags = with_set(cfg, flags)?;
    Ok(resolve_config(cfg.config.as_deref(), &flags)?)
}

fn load(path: &Path) -> std::result::Result<EmbeddingMatrix, Failure> {
    load_embeddings(path).map(|(m, _)| m).in_stage(Stage::Io)
}

fn load_labels(path: &Path) -> std::result::Result<LabelVector, Failure> {
    LabelFile::load(path).and_then(|f| f.label_vector()).in_stage(Stage::Io)
}

#[allow(clippy::too_many_arguments)]
fn score_files(
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    scorer: ScorerArg,
    k: usize,
    head: Option<&ClusterHead>,
    labels: Option<&Path>,
    shrinkage: f64,
    covariance: CovarianceArg,
) -> Result<ScoreVector> {
    let train = l2_normalize(train)?;
    let test = l2_normalize(test)?;
    if let ScorerArg::Confidence = scorer {
        let head = head.ok_or_else(|| Error::invalid("the confidence scorer needs --head"))?;
        return confidence_score(head, &test);
    }
    let (train, test) = match head {
        Some(h) => (extract_features(h, &train)?, extract_features(h, &test)?),
        None => (train, test),
    };
    match scorer {
        ScorerArg::Knn => knn_score(&train, &test, k),
        ScorerArg::Mahalanobis => {
            let path = labels.ok_or_else(|| Error::invalid("the mahalanobis scorer needs --labels"))?;
            let labels = LabelFile::load(path)?.label_vector()?;
            let mode = match covariance {
                CovarianceArg::PerCluster => CovarianceMode::PerCluster,
                CovarianceArg::Shared => CovarianceMode::Shared,
            };
            let bank = fit_gaussians_with(&train, &labels, shrinkage, mode)?;
            for c in bank.flagged_clusters() {
                log::warn!("cluster {c} has fewer than 2 members; fitted with an isotropic covariance");
            }
            mahalanobis_score(&bank, &test)
        }
        ScorerArg::Confidence => unreachable!(),
    }
}

/// Reports of every seed plus their per-row summary.
#[derive(serde::Serialize)]
struct AblationOutput {
    ablation: &'static str,
    reports: Vec<EvalReport>,
    summary: SeedSummary,
}

fn run_ablation(kind: AblationKind) -> CmdResult {
    let (name, args) = match &kind {
        AblationKind::KSweep { args, .. } => ("k-sweep", args),
        AblationKind::Epochs { args } => ("epochs", args),
        AblationKind::Scorers { args } => ("scorers", args),
        AblationKind::LabelNoise { args, .. } => ("label-noise", args),
    };
    let base = resolve(&args.cfg, Vec::new())?;
    let files = match (&args.train, &args.test_in, &args.test_out) {
        (Some(a), Some(b), Some(c)) => Some((load(a)?, load(b)?, load(c)?)),
        (None, None, None) => None,
        _ => {
            return Err(Failure::Usage(
                "give all of --train, --test-in and --test-out, or none for synthetic data".into(),
            ))
        }
    };
    let truth = args.truth.as_deref().map(load_labels).transpose()?;
    if args.seeds.is_empty() {
        return Err(Failure::Usage("--seeds must list at least one seed".into()));
    }

    let mut reports = Vec::with_capacity(args.seeds.len());
    for &seed in &args.seeds {
        let mut cfg = base.config.clone();
        cfg.seed = seed;
        let mut provenance = base.provenance.clone();
        provenance.insert("seed".into(), ood_core::config::Provenance::Flag);
        let synth;
        let (train, test_in, test_out, truth) = match &files {
            Some((a, b, c)) => (a, b, c, truth.as_ref()),
            None => {
                cfg.synth.seed = seed;
                provenance.insert("synth.seed".into(), ood_core::config::Provenance::Flag);
                synth = generate_synthetic(&cfg.synth).in_stage(Stage::Io)?;
                (&synth.train, &synth.test_in, &synth.test_out, Some(&synth.train_truth))
            }
        };
        let inputs = PipelineInputs {
            train,
            test_in,
            test_out,
            truth,
        };
        let report = match &kind {
            AblationKind::KSweep { ks, .. } => ablation_k_sweep(&inputs, &cfg, &provenance, ks),
            AblationKind::Epochs { .. } => ablation_epoch_averaging(&inputs, &cfg, &provenance),
            AblationKind::Scorers { .. } => ablation_scorers(&inputs, &cfg, &provenance),
            AblationKind::LabelNoise { noise, .. } => ablation_label_noise(&inputs, &cfg, &provenance, noise),
        }
        .in_stage(Stage::Evaluation)?;
        log::info!("seed {seed}:\n{}", report.to_table());
        reports.push(report);
    }
    let summary = summarize(&reports);
    for (key, row) in &summary.rows {
        eprintln!("{key}: {:.2} ± {:.2}", row.mean, row.std);
    }
    let output = AblationOutput {
        ablation: name,
        reports,
        summary,
    };
    let mut text = serde_json::to_string_pretty(&output).map_err(Error::from).in_stage(Stage::Io)?;
    text.push('\n');
    fs::write(&args.out, text).map_err(Error::from).in_stage(Stage::Io)?;
    Ok(())
}
