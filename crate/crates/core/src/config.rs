//! Run configuration: defaults, JSON config files and flag overrides, with
//! the origin of every resolved field.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::adaptation::AdaptConfig;
use crate::clustering::{ScanConfig, SelfLabelConfig};
use crate::error::{Error, Result};
use crate::evaluation::SynthSpec;
use crate::scoring::{CovarianceMode, Scorer, DEFAULT_SHRINKAGE};

/// How the pipeline produces pseudo-labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PseudoLabeler {
    #[serde(rename = "kmeans")]
    Kmeans,
    #[serde(rename = "scan")]
    Scan,
    #[serde(rename = "scan+selflabel")]
    ScanSelfLabel,
}

impl PseudoLabeler {
    pub fn as_str(&self) -> &'static str {
        match self {
            PseudoLabeler::Kmeans => "kmeans",
            PseudoLabeler::Scan => "scan",
            PseudoLabeler::ScanSelfLabel => "scan+selflabel",
        }
    }
}

impl FromStr for PseudoLabeler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kmeans" => Ok(PseudoLabeler::Kmeans),
            "scan" => Ok(PseudoLabeler::Scan),
            "scan+selflabel" => Ok(PseudoLabeler::ScanSelfLabel),
            other => Err(Error::invalid(format!(
                "unknown clustering method {other:?} (expected kmeans, scan or scan+selflabel)"
            ))),
        }
    }
}

impl fmt::Display for PseudoLabeler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    pub method: PseudoLabeler,
    /// Number of clusters K, shared by k-means and the clustering head.
    pub k: usize,
    /// Lloyd iteration cap for k-means.
    pub max_iters: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            method: PseudoLabeler::Scan,
            k: 10,
            max_iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoreConfig {
    pub scorers: Vec<Scorer>,
    /// Neighbor counts for the kNN scorer; the first is the primary one.
    pub knn_k: Vec<usize>,
    pub shrinkage: f64,
    pub covariance: CovarianceMode,
    /// Fit Gaussians on L2-normalized features rather than raw ones.
    pub mahalanobis_normalized: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            scorers: vec![Scorer::Knn, Scorer::Mahalanobis, Scorer::Confidence],
            knn_k: vec![1],
            shrinkage: DEFAULT_SHRINKAGE,
            covariance: CovarianceMode::PerCluster,
            mahalanobis_normalized: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Run the adaptation stage; when off only raw-feature rows are scored.
    pub adapt: bool,
    /// Score the primary kNN scorer on every epoch checkpoint as well.
    pub per_epoch_auc: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            adapt: true,
            per_epoch_auc: false,
        }
    }
}

/// The full configuration tree of a run.
///
/// Stage seeds derive from the single top-level `seed`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub cluster: ClusterConfig,
    pub scan: ScanConfig,
    pub self_label: SelfLabelConfig,
    pub adapt: AdaptConfig,
    pub score: ScoreConfig,
    pub eval: EvalConfig,
    pub synth: SynthSpec,
}

impl RunConfig {
    pub fn scan_config(&self) -> ScanConfig {
        ScanConfig {
            k: self.cluster.k,
            seed: self.seed,
            ..self.scan.clone()
        }
    }

    pub fn self_label_config(&self) -> SelfLabelConfig {
        SelfLabelConfig {
            seed: self.seed.wrapping_add(1),
            ..self.self_label.clone()
        }
    }

    pub fn adapt_config(&self) -> AdaptConfig {
        AdaptConfig {
            seed: self.seed.wrapping_add(2),
            ..self.adapt.clone()
        }
    }

    pub fn kmeans_seed(&self) -> u64 {
        self.seed
    }

    /// Seed for initializing the adapted head's weights.
    pub fn head_seed(&self) -> u64 {
        self.seed.wrapping_add(3)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cluster.k < 2 {
            return Err(Error::Config("cluster.k must be at least 2".into()));
        }
        if self.cluster.max_iters == 0 {
            return Err(Error::Config("cluster.max_iters must be at least 1".into()));
        }
        if self.score.scorers.is_empty() {
            return Err(Error::Config("score.scorers must not be empty".into()));
        }
        if self.score.scorers.contains(&Scorer::Knn) && self.score.knn_k.is_empty() {
            return Err(Error::Config("score.knn_k must not be empty when knn is scored".into()));
        }
        if !(self.score.shrinkage >= 0.0 && self.score.shrinkage.is_finite()) {
            return Err(Error::Config("score.shrinkage must be non-negative".into()));
        }
        self.scan_config().validate()?;
        self.adapt.validate()?;
        self.synth.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Default,
    ConfigFile,
    Flag,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub config: RunConfig,
    /// Origin of every leaf field, keyed by dotted path.
    pub provenance: BTreeMap<String, Provenance>,
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_string()
    } else {
        format!("{prefix}.{key}")
    }
}

fn collect_leaves(v: &Value, prefix: &str, out: &mut BTreeMap<String, Provenance>) {
    match v {
        Value::Object(map) => {
            for (k, child) in map {
                collect_leaves(child, &join(prefix, k), out);
            }
        }
        _ => {
            out.insert(prefix.to_string(), Provenance::Default);
        }
    }
}

/// Overlays `src` onto `dst`, which holds the full default tree, marking
/// every replaced leaf with `origin`.
fn overlay(
    dst: &mut Value,
    src: &Value,
    prefix: &str,
    origin: Provenance,
    provenance: &mut BTreeMap<String, Provenance>,
) -> Result<()> {
    match (dst, src) {
        (Value::Object(d), Value::Object(s)) => {
            for (key, sv) in s {
                let path = join(prefix, key);
                let dv = d
                    .get_mut(key)
                    .ok_or_else(|| Error::Config(format!("unknown configuration key {path:?}")))?;
                overlay(dv, sv, &path, origin, provenance)?;
            }
            Ok(())
        }
        (d, s) => {
            if d.is_object() || kind(d) != kind(s) {
                return Err(Error::Config(format!(
                    "type mismatch for {prefix:?}: expected {}, found {}",
                    kind(d),
                    kind(s)
                )));
            }
            *d = s.clone();
            provenance.insert(prefix.to_string(), origin);
            Ok(())
        }
    }
}

/// Parses a flag value: JSON when it parses as JSON, a bare string otherwise.
pub fn parse_flag_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn nest(path: &str, value: Value) -> Value {
    path.rsplit('.').fold(value, |acc, key| {
        let mut m = Map::new();
        m.insert(key.to_string(), acc);
        Value::Object(m)
    })
}

/// Resolves defaults, then `file`, then `flags` (dotted paths), later
/// sources winning.
pub fn resolve_config(file: Option<&Path>, flags: &[(String, Value)]) -> Result<ResolvedConfig> {
    let file_value = match file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| {
                Error::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            Some(serde_json::from_str::<Value>(&text).map_err(|e| {
                Error::Config(format!("config file {} is not valid JSON: {e}", path.display()))
            })?)
        }
        None => None,
    };
    resolve_values(file_value.as_ref(), flags)
}

/// [`resolve_config`] over an already-parsed config tree.
pub fn resolve_values(file: Option<&Value>, flags: &[(String, Value)]) -> Result<ResolvedConfig> {
    let mut tree = serde_json::to_value(RunConfig::default())?;
    let mut provenance = BTreeMap::new();
    collect_leaves(&tree, "", &mut provenance);
    if let Some(v) = file {
        if !v.is_object() {
            return Err(Error::Config("config file must contain a JSON object".into()));
        }
        overlay(&mut tree, v, "", Provenance::ConfigFile, &mut provenance)?;
    }
    for (path, value) in flags {
        overlay(&mut tree, &nest(path, value.clone()), "", Provenance::Flag, &mut provenance)?;
    }
    let config: RunConfig = serde_json::from_value(tree)
        .map_err(|e| Error::Config(format!("invalid configuration value: {e}")))?;
    config.validate()?;
    Ok(ResolvedConfig { config, provenance })
}
