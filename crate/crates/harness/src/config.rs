//! Experiment configuration: a flat `key = value` TOML file with
//! defaults matching the training setup used throughout (ADAM with
//! beta1 0.9 / beta2 0.999, weight decay 5e-4, batch size 32, backbone
//! learning rate 1e-5, head learning rate 1e-4).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use concord_core::attacks::AttackFamily;
use concord_core::feedback::FeedbackRule;
use serde::Deserialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Classification,
    Hashing,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Mnist,
    Cifar10,
    SyntheticBlobs,
}

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Mnist => "mnist",
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::SyntheticBlobs => "synthetic-blobs",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetKind,
    /// Directory with dataset files (IDX or CIFAR batches); unused for
    /// synthetic blobs.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    /// Architecture descriptor: `mlp:H1,H2,...` or `cnn:C1,C2,FC`.
    pub model: String,
    #[serde(default = "default_bp")]
    pub pretrain_rule: String,
    #[serde(default = "default_rules")]
    pub finetune_rules: Vec<String>,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_finetune_epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Backbone learning rate during fine-tuning.
    #[serde(default = "default_lr_backbone")]
    pub lr_backbone: f64,
    /// Head learning rate during fine-tuning.
    #[serde(default = "default_lr_head")]
    pub lr_head: f64,
    /// Uniform learning rate during pretraining (the backbone is trained
    /// from scratch there, so it runs hotter than fine-tuning).
    #[serde(default = "default_lr_pretrain")]
    pub lr_pretrain: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_attacks")]
    pub attacks: Vec<String>,
    #[serde(default = "default_epsilons")]
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Fixed-size seeded evaluation subset drawn from the test split.
    #[serde(default = "default_n_eval")]
    pub n_eval: usize,
    /// Optional cap on training examples (desk-scale runs).
    #[serde(default)]
    pub train_limit: Option<usize>,
    #[serde(default = "default_query_budget")]
    pub query_budget: usize,
    #[serde(default = "default_attack_steps")]
    pub pgd_steps: usize,
    #[serde(default = "default_attack_steps")]
    pub hag_steps: usize,
    /// Hash code length for the hashing task.
    #[serde(default = "default_code_bits")]
    pub code_bits: usize,
    /// mAP@k cutoff for retrieval evaluation.
    #[serde(default = "default_map_cutoff")]
    pub map_cutoff: usize,
    /// When true, white-box attackers transport gradients with the
    /// model's deployed rule instead of true BP.
    #[serde(default)]
    pub attacker_uses_deployed_rule: bool,
    // Synthetic-blobs shape knobs.
    #[serde(default = "default_blob_dim")]
    pub blob_dim: usize,
    #[serde(default = "default_blob_classes")]
    pub blob_classes: usize,
    #[serde(default = "default_blob_per_class")]
    pub blob_train_per_class: usize,
    #[serde(default = "default_blob_test_per_class")]
    pub blob_test_per_class: usize,
    #[serde(default = "default_blob_spread")]
    pub blob_spread: f64,
}

fn default_bp() -> String {
    "bp".into()
}
fn default_rules() -> Vec<String> {
    vec!["usf".into()]
}
fn default_pretrain_epochs() -> usize {
    3
}
fn default_finetune_epochs() -> usize {
    5
}
fn default_batch_size() -> usize {
    32
}
fn default_lr_backbone() -> f64 {
    1e-5
}
fn default_lr_head() -> f64 {
    1e-4
}
fn default_lr_pretrain() -> f64 {
    1e-3
}
fn default_weight_decay() -> f64 {
    5e-4
}
fn default_attacks() -> Vec<String> {
    vec!["fgsm".into(), "pgd".into()]
}
fn default_epsilons() -> Vec<f64> {
    vec![0.0, 0.001, 0.005, 0.01, 0.05, 0.1, 0.5]
}
fn default_n_eval() -> usize {
    256
}
fn default_query_budget() -> usize {
    1000
}
fn default_attack_steps() -> usize {
    5
}
fn default_code_bits() -> usize {
    32
}
fn default_map_cutoff() -> usize {
    100
}
fn default_blob_dim() -> usize {
    16
}
fn default_blob_classes() -> usize {
    4
}
fn default_blob_per_class() -> usize {
    200
}
fn default_blob_test_per_class() -> usize {
    60
}
fn default_blob_spread() -> f64 {
    0.06
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        ExperimentConfig::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pretrain_rule()?;
        let rules = self.finetune_rule_list()?;
        if rules.is_empty() {
            return Err(ConfigError::Invalid("finetune_rules is empty".into()));
        }
        let attacks = self.attack_list()?;
        if self.epsilons.is_empty() {
            return Err(ConfigError::Invalid("epsilons is empty".into()));
        }
        for w in self.epsilons.windows(2) {
            if w[1] <= w[0] {
                return Err(ConfigError::Invalid(format!(
                    "epsilons must be strictly increasing, found {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if self.epsilons[0] < 0.0 {
            return Err(ConfigError::Invalid("epsilons must be non-negative".into()));
        }
        if self.task == Task::Classification && self.epsilons[0] != 0.0 {
            return Err(ConfigError::Invalid(
                "classification sweeps must start at epsilon = 0".into(),
            ));
        }
        for a in &attacks {
            let hashing_attack = *a == AttackFamily::Hag;
            match self.task {
                Task::Hashing if !hashing_attack => {
                    return Err(ConfigError::Invalid(format!(
                        "attack {} needs a classifier; the hashing task supports hag",
                        a.name()
                    )))
                }
                Task::Classification if hashing_attack => {
                    return Err(ConfigError::Invalid(
                        "attack hag needs the hashing task".into(),
                    ))
                }
                _ => {}
            }
        }
        if self.task == Task::Hashing && (self.code_bits == 0 || self.code_bits > 64) {
            return Err(ConfigError::Invalid(format!(
                "code_bits must be in 1..=64, got {}",
                self.code_bits
            )));
        }
        if self.batch_size == 0 || self.n_eval == 0 {
            return Err(ConfigError::Invalid(
                "batch_size and n_eval must be positive".into(),
            ));
        }
        self.model_spec()?;
        Ok(())
    }

    pub fn pretrain_rule(&self) -> Result<FeedbackRule> {
        parse_rule(&self.pretrain_rule)
    }

    pub fn finetune_rule_list(&self) -> Result<Vec<FeedbackRule>> {
        self.finetune_rules.iter().map(|r| parse_rule(r)).collect()
    }

    pub fn attack_list(&self) -> Result<Vec<AttackFamily>> {
        self.attacks
            .iter()
            .map(|a| {
                AttackFamily::parse(a)
                    .ok_or_else(|| ConfigError::Invalid(format!("unknown attack {a:?}")))
            })
            .collect()
    }

    /// Parses the model descriptor against the dataset's input shape.
    pub fn model_spec(&self) -> Result<ModelSpec> {
        let (kind, rest) = self
            .model
            .split_once(':')
            .ok_or_else(|| ConfigError::Invalid(format!("model {:?} lacks ':'", self.model)))?;
        let sizes: Vec<usize> = rest
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| ConfigError::Invalid(format!("model size {s:?}")))
            })
            .collect::<Result<_>>()?;
        if sizes.iter().any(|&s| s == 0) {
            return Err(ConfigError::Invalid("model sizes must be positive".into()));
        }
        match kind {
            "mlp" => Ok(ModelSpec::Mlp { hidden: sizes }),
            "cnn" => {
                let [c1, c2, fc] = sizes[..] else {
                    return Err(ConfigError::Invalid(
                        "cnn descriptor is cnn:C1,C2,FC".into(),
                    ));
                };
                if self.dataset == DatasetKind::SyntheticBlobs {
                    return Err(ConfigError::Invalid(
                        "cnn models need image datasets".into(),
                    ));
                }
                Ok(ModelSpec::Cnn { c1, c2, fc })
            }
            other => Err(ConfigError::Invalid(format!("unknown model kind {other:?}"))),
        }
    }

    /// Short stable digest of every semantically relevant field.
    pub fn config_hash(&self) -> String {
        let mut s = String::new();
        let _ = write!(
            s,
            "{:?}|{:?}|{}|{}|{:?}|{}|{}|{}|{}|{}|{}|{}|{:?}|{:?}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}|{}",
            self.task,
            self.dataset,
            self.model,
            self.pretrain_rule,
            self.finetune_rules,
            self.pretrain_epochs,
            self.finetune_epochs,
            self.batch_size,
            self.lr_backbone,
            self.lr_head,
            self.lr_pretrain,
            self.weight_decay,
            self.attacks,
            self.epsilons,
            self.seed,
            self.n_eval,
            self.train_limit.unwrap_or(0),
            self.query_budget,
            self.pgd_steps,
            self.hag_steps,
            self.code_bits,
            self.map_cutoff,
            self.attacker_uses_deployed_rule,
            self.blob_dim,
            self.blob_classes,
            self.blob_train_per_class,
            self.blob_spread,
        );
        let digest = Sha256::digest(s.as_bytes());
        let mut hex = String::with_capacity(12);
        for byte in digest.iter().take(6) {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

fn parse_rule(s: &str) -> Result<FeedbackRule> {
    FeedbackRule::parse(s)
        .ok_or_else(|| ConfigError::Invalid(format!("unknown feedback rule {s:?}")))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    Mlp { hidden: Vec<usize> },
    Cnn { c1: usize, c2: usize, fc: usize },
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
task = "classification"
dataset = "synthetic-blobs"
model = "mlp:32"
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.lr_backbone, 1e-5);
        assert_eq!(cfg.lr_head, 1e-4);
        assert_eq!(cfg.epsilons[0], 0.0);
        assert_eq!(cfg.pretrain_rule().unwrap(), FeedbackRule::Bp);
    }

    #[test]
    fn epsilons_must_increase() {
        let text = format!("{MINIMAL}epsilons = [0.0, 0.1, 0.1]\n");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn classification_sweep_starts_at_zero() {
        let text = format!("{MINIMAL}epsilons = [0.01, 0.1]\n");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn hag_requires_hashing_task() {
        let text = format!("{MINIMAL}attacks = [\"hag\"]\n");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn cnn_on_blobs_is_rejected() {
        let text = MINIMAL.replace("mlp:32", "cnn:4,8,32");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}no_such_knob = 3\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_is_stable_and_sensitive() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let b = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(a.config_hash(), b.config_hash());
        let c =
            ExperimentConfig::from_toml(&format!("{MINIMAL}seed = 9\n")).unwrap();
        assert_ne!(a.config_hash(), c.config_hash());
    }
}
