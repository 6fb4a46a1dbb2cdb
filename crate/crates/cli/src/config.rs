//! Experiment configuration: a TOML file with `[paths]`, `[model]`,
//! `[training]`, `[evaluation]`, `[typo]`, and `[seeds]` tables. Relative
//! paths are resolved against the config file's directory; command-line
//! flags override individual fields. Validation reports the offending
//! field by name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use typolab_core::training::{LossWeights, TrainMode};
use typolab_core::typogen::TypoSetting;

use crate::error::CliError;
use crate::manifest::sha256_bytes;

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub paths: PathsConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub typo: TypoConfig,
    pub seeds: SeedsConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub passages: PathBuf,
    pub train_questions: PathBuf,
    pub test_questions: PathBuf,
    pub train_qrels: PathBuf,
    pub test_qrels: PathBuf,
    pub dev_questions: Option<PathBuf>,
    pub dev_qrels: Option<PathBuf>,
    /// Typo dictionaries; the built-in tables are used when absent.
    pub keyboard_adjacency: Option<PathBuf>,
    pub misspellings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_vocab_size")]
    pub vocab_size: usize,
}

fn default_dim() -> usize {
    128
}

fn default_vocab_size() -> usize {
    2048
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: default_dim(), vocab_size: default_vocab_size() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_steps")]
    pub steps: u64,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_warmup_fraction")]
    pub warmup_fraction: f64,
    /// Loss-component weights; equal weighting over the mode's active
    /// components when absent.
    pub weights: Option<[f64; 3]>,
    #[serde(default = "default_typo_p")]
    pub typo_p: f64,
    #[serde(default)]
    pub dev_every: u64,
}

fn default_mode() -> String {
    "DR".to_owned()
}

fn default_batch_size() -> usize {
    48
}

fn default_steps() -> u64 {
    2000
}

fn default_lr() -> f64 {
    1e-3
}

fn default_warmup_fraction() -> f64 {
    0.1
}

fn default_typo_p() -> f64 {
    0.2
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            mode: default_mode(),
            batch_size: default_batch_size(),
            steps: default_steps(),
            lr: default_lr(),
            warmup_fraction: default_warmup_fraction(),
            weights: None,
            typo_p: default_typo_p(),
            dev_every: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_metrics")]
    pub metrics: Vec<String>,
    #[serde(default = "default_cutoffs")]
    pub cutoffs: Vec<usize>,
}

fn default_metrics() -> Vec<String> {
    vec!["mrr".to_owned(), "recall".to_owned(), "answer_recall".to_owned()]
}

fn default_cutoffs() -> Vec<usize> {
    vec![10]
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig { metrics: default_metrics(), cutoffs: default_cutoffs() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TypoConfig {
    #[serde(default = "default_typo_p")]
    pub p: f64,
    #[serde(default = "default_settings")]
    pub settings: Vec<String>,
}

fn default_settings() -> Vec<String> {
    TypoSetting::ALL.iter().map(|s| s.as_str().to_owned()).collect()
}

impl Default for TypoConfig {
    fn default() -> Self {
        TypoConfig { p: default_typo_p(), settings: default_settings() }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedsConfig {
    pub train: u64,
    pub testset: u64,
}

/// Known evaluation metric names.
pub const METRIC_NAMES: [&str; 3] = ["mrr", "recall", "answer_recall"];

/// A validated configuration with paths resolved, enums parsed, and
/// overrides applied.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub passages: PathBuf,
    pub train_questions: PathBuf,
    pub test_questions: PathBuf,
    pub train_qrels: PathBuf,
    pub test_qrels: PathBuf,
    pub dev: Option<(PathBuf, PathBuf)>,
    pub keyboard_adjacency: Option<PathBuf>,
    pub misspellings: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub dim: usize,
    pub vocab_size: usize,
    pub mode: TrainMode,
    pub batch_size: usize,
    pub steps: u64,
    pub lr: f64,
    pub warmup_fraction: f64,
    pub weights: Option<LossWeights>,
    pub train_typo_p: f64,
    pub dev_every: u64,
    pub metrics: Vec<String>,
    pub cutoffs: Vec<usize>,
    pub typo_p: f64,
    pub settings: Vec<TypoSetting>,
    pub train_seed: u64,
    pub testset_seed: u64,
    /// Hash over every content-affecting knob except filesystem paths;
    /// stored in checkpoints and manifests for provenance.
    pub config_hash: [u8; 32],
}

/// Field overrides supplied as command-line flags.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub mode: Option<String>,
    pub out_dir: Option<PathBuf>,
    pub typo_p: Option<f64>,
    pub typo_setting: Option<String>,
    pub testset_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&body)
            .map_err(|e| CliError::config(format!("invalid config {}: {e}", path.display())))
    }

    /// Validate, resolve paths against `config_dir`, and apply `overrides`.
    pub fn resolve(&self, config_dir: &Path, overrides: &Overrides) -> Result<ResolvedConfig, CliError> {
        let join = |p: &Path| -> PathBuf {
            if p.is_absolute() {
                p.to_owned()
            } else {
                config_dir.join(p)
            }
        };
        let require = |field: &str, p: &Path| -> Result<PathBuf, CliError> {
            let joined = join(p);
            if joined.is_file() {
                Ok(joined)
            } else {
                Err(CliError::config(format!(
                    "paths.{field}: {} does not exist",
                    joined.display()
                )))
            }
        };

        let dev = match (&self.paths.dev_questions, &self.paths.dev_qrels) {
            (Some(q), Some(r)) => {
                Some((require("dev_questions", q)?, require("dev_qrels", r)?))
            }
            (None, None) => None,
            (Some(_), None) => {
                return Err(CliError::config(
                    "paths.dev_qrels: required when paths.dev_questions is set",
                ))
            }
            (None, Some(_)) => {
                return Err(CliError::config(
                    "paths.dev_questions: required when paths.dev_qrels is set",
                ))
            }
        };

        let mode_name = overrides.mode.as_deref().unwrap_or(&self.training.mode);
        let mode: TrainMode = mode_name
            .parse()
            .map_err(|e| CliError::config(format!("training.mode: {e}")))?;

        if self.model.dim == 0 {
            return Err(CliError::config("model.dim: must be at least 1"));
        }
        if self.training.batch_size < 2 {
            return Err(CliError::config(
                "training.batch_size: must be at least 2 (in-batch negatives)",
            ));
        }
        if self.training.steps == 0 {
            return Err(CliError::config("training.steps: must be at least 1"));
        }
        if !(self.training.lr.is_finite() && self.training.lr > 0.0) {
            return Err(CliError::config("training.lr: must be a positive number"));
        }
        if !(0.0..=1.0).contains(&self.training.warmup_fraction) {
            return Err(CliError::config("training.warmup_fraction: must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.training.typo_p) {
            return Err(CliError::config("training.typo_p: must lie in [0, 1]"));
        }
        let weights = match self.training.weights {
            None => None,
            Some([w1, w2, w3]) => {
                if [w1, w2, w3].iter().any(|w| !w.is_finite() || *w < 0.0)
                    || w1 + w2 + w3 == 0.0
                {
                    return Err(CliError::config(
                        "training.weights: must be three nonnegative numbers, not all zero",
                    ));
                }
                Some(LossWeights { w1, w2, w3 })
            }
        };

        if self.evaluation.metrics.is_empty() {
            return Err(CliError::config("evaluation.metrics: must list at least one metric"));
        }
        for m in &self.evaluation.metrics {
            if !METRIC_NAMES.contains(&m.as_str()) {
                return Err(CliError::config(format!(
                    "evaluation.metrics: unknown metric {m:?} (expected one of {METRIC_NAMES:?})"
                )));
            }
        }
        if self.evaluation.cutoffs.is_empty() || self.evaluation.cutoffs.contains(&0) {
            return Err(CliError::config("evaluation.cutoffs: must list positive cutoffs"));
        }

        let typo_p = overrides.typo_p.unwrap_or(self.typo.p);
        if !(0.0..=1.0).contains(&typo_p) {
            return Err(CliError::config("typo.p: must lie in [0, 1]"));
        }
        let setting_names: Vec<&str> = match &overrides.typo_setting {
            Some(s) => vec![s.as_str()],
            None => self.typo.settings.iter().map(String::as_str).collect(),
        };
        if setting_names.is_empty() {
            return Err(CliError::config("typo.settings: must list at least one setting"));
        }
        let mut settings = Vec::with_capacity(setting_names.len());
        for name in setting_names {
            let setting = TypoSetting::parse(name).ok_or_else(|| {
                CliError::config(format!(
                    "typo.settings: unknown setting {name:?} (expected random_words, \
                     non_stopwords, or discriminative_utterances)"
                ))
            })?;
            if settings.contains(&setting) {
                return Err(CliError::config(format!("typo.settings: {name:?} listed twice")));
            }
            settings.push(setting);
        }

        let testset_seed = overrides.testset_seed.unwrap_or(self.seeds.testset);

        let mut resolved = ResolvedConfig {
            passages: require("passages", &self.paths.passages)?,
            train_questions: require("train_questions", &self.paths.train_questions)?,
            test_questions: require("test_questions", &self.paths.test_questions)?,
            train_qrels: require("train_qrels", &self.paths.train_qrels)?,
            test_qrels: require("test_qrels", &self.paths.test_qrels)?,
            dev,
            keyboard_adjacency: self
                .paths
                .keyboard_adjacency
                .as_deref()
                .map(|p| require("keyboard_adjacency", p))
                .transpose()?,
            misspellings: self
                .paths
                .misspellings
                .as_deref()
                .map(|p| require("misspellings", p))
                .transpose()?,
            stopwords: self
                .paths
                .stopwords
                .as_deref()
                .map(|p| require("stopwords", p))
                .transpose()?,
            out_dir: overrides.out_dir.clone().unwrap_or_else(|| join(&self.paths.out_dir)),
            dim: self.model.dim,
            vocab_size: self.model.vocab_size,
            mode,
            batch_size: self.training.batch_size,
            steps: self.training.steps,
            lr: self.training.lr,
            warmup_fraction: self.training.warmup_fraction,
            weights,
            train_typo_p: self.training.typo_p,
            dev_every: self.training.dev_every,
            metrics: self.evaluation.metrics.clone(),
            cutoffs: self.evaluation.cutoffs.clone(),
            typo_p,
            settings,
            train_seed: self.seeds.train,
            testset_seed,
            config_hash: [0; 32],
        };
        resolved.config_hash = resolved.semantic_hash();
        Ok(resolved)
    }
}

impl ResolvedConfig {
    /// Hash of every knob that can change artifact content. Paths are
    /// excluded: the data they point to is pinned by input content hashes
    /// in stage manifests instead.
    fn semantic_hash(&self) -> [u8; 32] {
        let weights =
            self.weights.map(|w| [w.w1, w.w2, w.w3]).unwrap_or([f64::NAN, f64::NAN, f64::NAN]);
        let summary = format!(
            "dim={} vocab={} mode={} batch={} steps={} lr={} warmup={} weights={:?} \
             train_typo_p={} metrics={:?} cutoffs={:?} typo_p={} settings={:?} \
             train_seed={} testset_seed={}",
            self.dim,
            self.vocab_size,
            self.mode,
            self.batch_size,
            self.steps,
            self.lr,
            self.warmup_fraction,
            weights,
            self.train_typo_p,
            self.metrics,
            self.cutoffs,
            self.typo_p,
            self.settings.iter().map(|s| s.as_str()).collect::<Vec<_>>(),
            self.train_seed,
            self.testset_seed,
        );
        sha256_bytes(summary.as_bytes())
    }

    /// The largest configured cutoff: retrieval depth for run files.
    pub fn max_cutoff(&self) -> usize {
        self.cutoffs.iter().copied().max().expect("validated nonempty")
    }

    /// Canonical parameter map entries shared by the mode-scoped stages.
    pub fn mode_params(&self) -> BTreeMap<String, String> {
        BTreeMap::from([
            ("mode".to_owned(), self.mode.to_string()),
            ("config_hash".to_owned(), hex::encode(self.config_hash)),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn write_minimal(dir: &Path) -> PathBuf {
        for name in
            ["passages.tsv", "train_q.tsv", "test_q.tsv", "train_qrels.tsv", "test_qrels.tsv"]
        {
            fs::write(dir.join(name), "x\ty\n").unwrap();
        }
        let config = r#"
[paths]
passages = "passages.tsv"
train_questions = "train_q.tsv"
test_questions = "test_q.tsv"
train_qrels = "train_qrels.tsv"
test_qrels = "test_qrels.tsv"
out_dir = "out"

[seeds]
train = 42
testset = 777
"#;
        let path = dir.join("exp.toml");
        fs::write(&path, config).unwrap();
        path
    }

    #[test]
    fn minimal_config_resolves_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let cfg = ExperimentConfig::load(&path).unwrap();
        let resolved = cfg.resolve(dir.path(), &Overrides::default()).unwrap();
        assert_eq!(resolved.dim, 128);
        assert_eq!(resolved.vocab_size, 2048);
        assert_eq!(resolved.mode, TrainMode::Dr);
        assert_eq!(resolved.batch_size, 48);
        assert_eq!(resolved.steps, 2000);
        assert_eq!(resolved.settings, TypoSetting::ALL.to_vec());
        assert_eq!(resolved.max_cutoff(), 10);
        assert!(resolved.passages.is_absolute() || resolved.passages.starts_with(dir.path()));
    }

    #[test]
    fn missing_seed_table_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let body = fs::read_to_string(&path).unwrap().replace("[seeds]", "[unrelated]");
        fs::write(&path, body).unwrap();
        let err = ExperimentConfig::load(&path).unwrap_err();
        assert_eq!(err.exit_code(), 1);
        assert!(err.to_string().contains("seeds"), "message names the field: {err}");
    }

    #[test]
    fn missing_file_is_named_by_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        fs::remove_file(dir.path().join("test_qrels.tsv")).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        let err = cfg.resolve(dir.path(), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("paths.test_qrels"), "{err}");
    }

    #[test]
    fn mode_override_applies_and_bad_mode_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let cfg = ExperimentConfig::load(&path).unwrap();
        let over = Overrides { mode: Some("DR_Aug_CL".to_owned()), ..Default::default() };
        assert_eq!(cfg.resolve(dir.path(), &over).unwrap().mode, TrainMode::DrAugCl);
        let bad = Overrides { mode: Some("dpr".to_owned()), ..Default::default() };
        let err = cfg.resolve(dir.path(), &bad).unwrap_err();
        assert!(err.to_string().contains("training.mode"), "{err}");
    }

    #[test]
    fn config_hash_tracks_semantics_not_paths() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let cfg = ExperimentConfig::load(&path).unwrap();
        let a = cfg.resolve(dir.path(), &Overrides::default()).unwrap();
        let moved = Overrides {
            out_dir: Some(dir.path().join("elsewhere")),
            ..Default::default()
        };
        let b = cfg.resolve(dir.path(), &moved).unwrap();
        assert_eq!(a.config_hash, b.config_hash, "out_dir must not affect the hash");
        let aug = Overrides { mode: Some("DR_Aug".to_owned()), ..Default::default() };
        let c = cfg.resolve(dir.path(), &aug).unwrap();
        assert_ne!(a.config_hash, c.config_hash, "mode must affect the hash");
    }

    #[test]
    fn validation_names_offending_numeric_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let mut body = fs::read_to_string(&path).unwrap();
        body.push_str("\n[training]\nbatch_size = 1\n");
        fs::write(&path, body).unwrap();
        let cfg = ExperimentConfig::load(&path).unwrap();
        let err = cfg.resolve(dir.path(), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("training.batch_size"), "{err}");
    }

    #[test]
    fn typo_setting_override_restricts_to_one() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_minimal(dir.path());
        let cfg = ExperimentConfig::load(&path).unwrap();
        let over = Overrides {
            typo_setting: Some("discriminative".to_owned()),
            ..Default::default()
        };
        let resolved = cfg.resolve(dir.path(), &over).unwrap();
        assert_eq!(resolved.settings, vec![TypoSetting::DiscriminativeUtterances]);
    }
}
