//! Flat key=value configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Unknown keys are
//! rejected. Every key has a default except the dataset paths. Values from
//! a config file are overridden by command-line pairs, which are overridden
//! by dedicated flags (precedence: flag > file > default).

use std::path::Path;

use crate::data::ColumnMap;
use crate::encoder::EncoderConfig;
use crate::heads::HeadConfig;
use crate::task::Task;
use crate::train::TrainConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("config line {line}: expected `key = value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("unknown config key {key:?}")]
    UnknownKey { key: String },
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("missing required setting {key}")]
    MissingKey { key: &'static str },
}

/// Every tunable of the system in one flat document.
#[derive(Debug, Clone, PartialEq)]
pub struct FullConfig {
    // model architecture
    pub hidden: usize,
    pub layers: usize,
    pub attn_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub pooled_dropout: f64,
    /// 0 means "same as hidden".
    pub head_mid_dim: usize,
    /// 0 means "hidden / 2".
    pub head_reduced_dim: usize,
    pub head_dropout1: f64,
    pub head_dropout2: f64,
    pub residual: bool,
    // tokenizer
    pub vocab_size: usize,
    pub min_freq: u64,
    // training
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// 0 disables clipping.
    pub grad_clip: f64,
    pub keep_best: bool,
    // column remapping; empty label columns fall back to the task defaults
    pub col_id: String,
    pub col_text: String,
    pub col_label1: String,
    pub col_label2: String,
    // paths (inputs have no defaults)
    pub train_csv: Option<String>,
    pub val_csv: Option<String>,
    pub data_csv: Option<String>,
    pub checkpoint: Option<String>,
    pub vocab: Option<String>,
    pub corpus: Option<String>,
    pub checkpoint_out: String,
    pub vocab_out: String,
    pub report_out: String,
    pub predictions_out: String,
}

impl Default for FullConfig {
    fn default() -> Self {
        FullConfig {
            hidden: 768,
            layers: 12,
            attn_heads: 12,
            ffn_dim: 3072,
            max_len: 128,
            pooled_dropout: 0.1,
            head_mid_dim: 0,
            head_reduced_dim: 0,
            head_dropout1: 0.2,
            head_dropout2: 0.1,
            residual: false,
            vocab_size: 8000,
            min_freq: 2,
            epochs: 6,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 42,
            grad_clip: 0.0,
            keep_best: false,
            col_id: "id".to_string(),
            col_text: "text".to_string(),
            col_label1: String::new(),
            col_label2: String::new(),
            train_csv: None,
            val_csv: None,
            data_csv: None,
            checkpoint: None,
            vocab: None,
            corpus: None,
            checkpoint_out: "model.ckpt".to_string(),
            vocab_out: "vocab.txt".to_string(),
            report_out: "run_report.jsonl".to_string(),
            predictions_out: "predictions.csv".to_string(),
        }
    }
}

/// Splits a `key=value` or `key = value` pair.
pub fn parse_pair(text: &str) -> Option<(String, String)> {
    let (k, v) = text.split_once('=')?;
    let key = k.trim();
    if key.is_empty() {
        return None;
    }
    Some((key.to_string(), v.trim().to_string()))
}

/// Reads the pairs of a config file, in order.
pub fn read_config_file(path: &Path) -> Result<Vec<(String, String)>, ConfigError> {
    let content = std::fs::read_to_string(path)?;
    let mut pairs = Vec::new();
    for (idx, raw) in content.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        match parse_pair(line) {
            Some(pair) => pairs.push(pair),
            None => {
                return Err(ConfigError::BadLine {
                    line: idx + 1,
                    text: raw.to_string(),
                })
            }
        }
    }
    Ok(pairs)
}

impl FullConfig {
    /// Defaults, then file pairs, then override pairs, in that order.
    pub fn from_sources(
        file: Option<&Path>,
        overrides: &[(String, String)],
    ) -> Result<Self, ConfigError> {
        let mut cfg = FullConfig::default();
        if let Some(path) = file {
            for (k, v) in read_config_file(path)? {
                cfg.apply(&k, &v)?;
            }
        }
        for (k, v) in overrides {
            cfg.apply(k, v)?;
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                reason: format!("expected {}", std::any::type_name::<T>()),
            })
        }
        fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    reason: "expected true or false".to_string(),
                }),
            }
        }
        let some = |v: &str| Some(v.to_string());
        match key {
            "hidden" => self.hidden = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "attn_heads" => self.attn_heads = parse(key, value)?,
            "ffn_dim" => self.ffn_dim = parse(key, value)?,
            "max_len" => self.max_len = parse(key, value)?,
            "pooled_dropout" => self.pooled_dropout = parse(key, value)?,
            "head_mid_dim" => self.head_mid_dim = parse(key, value)?,
            "head_reduced_dim" => self.head_reduced_dim = parse(key, value)?,
            "head_dropout1" => self.head_dropout1 = parse(key, value)?,
            "head_dropout2" => self.head_dropout2 = parse(key, value)?,
            "residual" => self.residual = parse_bool(key, value)?,
            "vocab_size" => self.vocab_size = parse(key, value)?,
            "min_freq" => self.min_freq = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "grad_clip" => self.grad_clip = parse(key, value)?,
            "keep_best" => self.keep_best = parse_bool(key, value)?,
            "col_id" => self.col_id = value.to_string(),
            "col_text" => self.col_text = value.to_string(),
            "col_label1" => self.col_label1 = value.to_string(),
            "col_label2" => self.col_label2 = value.to_string(),
            "train_csv" => self.train_csv = some(value),
            "val_csv" => self.val_csv = some(value),
            "data_csv" => self.data_csv = some(value),
            "checkpoint" => self.checkpoint = some(value),
            "vocab" => self.vocab = some(value),
            "corpus" => self.corpus = some(value),
            "checkpoint_out" => self.checkpoint_out = value.to_string(),
            "vocab_out" => self.vocab_out = value.to_string(),
            "report_out" => self.report_out = value.to_string(),
            "predictions_out" => self.predictions_out = value.to_string(),
            _ => {
                return Err(ConfigError::UnknownKey {
                    key: key.to_string(),
                })
            }
        }
        Ok(())
    }

    /// Encoder shaped by this config; the tokenizer decides the actual
    /// vocabulary size.
    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden: self.hidden,
            layers: self.layers,
            attn_heads: self.attn_heads,
            ffn_dim: self.ffn_dim,
            max_positions: self.max_len,
            pooled_dropout_p: self.pooled_dropout,
        }
    }

    pub fn head_config(&self, num_classes: usize) -> HeadConfig {
        HeadConfig {
            in_dim: self.hidden,
            mid_dim: if self.head_mid_dim == 0 {
                self.hidden
            } else {
                self.head_mid_dim
            },
            reduced_dim: if self.head_reduced_dim == 0 {
                (self.hidden / 2).max(1)
            } else {
                self.head_reduced_dim
            },
            num_classes,
            dropout1: self.head_dropout1,
            dropout2: self.head_dropout2,
            residual: self.residual,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            seed: self.seed,
            residual: self.residual,
            grad_clip: (self.grad_clip > 0.0).then_some(self.grad_clip),
        }
    }

    pub fn column_map(&self, task: Task) -> ColumnMap {
        let (d1, d2) = task.head_names();
        ColumnMap {
            id: self.col_id.clone(),
            text: self.col_text.clone(),
            label_1: if self.col_label1.is_empty() {
                d1.to_string()
            } else {
                self.col_label1.clone()
            },
            label_2: if self.col_label2.is_empty() {
                d2.to_string()
            } else {
                self.col_label2.clone()
            },
        }
    }

    pub fn require<'a>(
        opt: &'a Option<String>,
        key: &'static str,
    ) -> Result<&'a str, ConfigError> {
        opt.as_deref().ok_or(ConfigError::MissingKey { key })
    }
}
