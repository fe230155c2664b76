//! Checkpoint persistence: plain-text manifest plus raw float64 payload.
//!
//! Layout, in order:
//!
//! ```text
//! dualhead-checkpoint v1\n
//! <key = value lines: task, shared dropout, encoder and head configs>
//! labels1.<i> = "<json-escaped label>"   (one per class, both heads)
//! vocab_sha256 = <hex digest of the tokenizer vocabulary file>
//! tensors = <count>
//! tensor <name> <d0>x<d1>... <byte offset>   (one per parameter, in
//!                                             model visit order)
//! payload = <byte length>\n
//! <raw little-endian float64 values, row-major, tensor after tensor>
//! ```
//!
//! Loading verifies the manifest against a freshly shaped model — tensor
//! count, names, shapes, contiguous offsets — and that the payload length
//! matches both the declared size and the actual file tail. Any mismatch
//! aborts before a model is produced; there are no partial loads.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::data::LabelVocab;
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::heads::{DualHeadModel, HeadConfig, HeadParams, ModelError};
use crate::task::Task;

const MAGIC: &str = "dualhead-checkpoint v1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint manifest at line {line}: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("checkpoint integrity: {reason}")]
    Integrity { reason: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// A restored model together with its label vocabularies and the hash of
/// the tokenizer vocabulary it was trained with.
pub struct LoadedCheckpoint {
    pub model: DualHeadModel,
    pub labels_1: LabelVocab,
    pub labels_2: LabelVocab,
    pub vocab_sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn head_config_lines(prefix: &str, cfg: &HeadConfig, out: &mut String) {
    use std::fmt::Write;
    let _ = writeln!(out, "{prefix}.in_dim = {}", cfg.in_dim);
    let _ = writeln!(out, "{prefix}.mid_dim = {}", cfg.mid_dim);
    let _ = writeln!(out, "{prefix}.reduced_dim = {}", cfg.reduced_dim);
    let _ = writeln!(out, "{prefix}.num_classes = {}", cfg.num_classes);
    let _ = writeln!(out, "{prefix}.dropout1 = {}", cfg.dropout1);
    let _ = writeln!(out, "{prefix}.dropout2 = {}", cfg.dropout2);
    let _ = writeln!(out, "{prefix}.residual = {}", cfg.residual);
}

/// Serializes the model, its label vocabularies, and the tokenizer
/// vocabulary hash.
pub fn save_checkpoint(
    model: &DualHeadModel,
    labels_1: &LabelVocab,
    labels_2: &LabelVocab,
    vocab_sha256: &str,
    path: &Path,
) -> Result<(), CheckpointError> {
    use std::fmt::Write;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "{MAGIC}");
    let _ = writeln!(manifest, "task = {}", model.task);
    let _ = writeln!(manifest, "shared_dropout_p = {}", model.shared_dropout_p);
    let enc = &model.encoder.config;
    let _ = writeln!(manifest, "encoder.vocab_size = {}", enc.vocab_size);
    let _ = writeln!(manifest, "encoder.hidden = {}", enc.hidden);
    let _ = writeln!(manifest, "encoder.layers = {}", enc.layers);
    let _ = writeln!(manifest, "encoder.attn_heads = {}", enc.attn_heads);
    let _ = writeln!(manifest, "encoder.ffn_dim = {}", enc.ffn_dim);
    let _ = writeln!(manifest, "encoder.max_positions = {}", enc.max_positions);
    let _ = writeln!(
        manifest,
        "encoder.pooled_dropout_p = {}",
        enc.pooled_dropout_p
    );
    head_config_lines("head1", &model.head_cfg_1, &mut manifest);
    head_config_lines("head2", &model.head_cfg_2, &mut manifest);
    for (prefix, vocab) in [("labels1", labels_1), ("labels2", labels_2)] {
        for (i, name) in vocab.names().iter().enumerate() {
            let quoted = serde_json::to_string(name).expect("strings always serialize");
            let _ = writeln!(manifest, "{prefix}.{i} = {quoted}");
        }
    }
    let _ = writeln!(manifest, "vocab_sha256 = {vocab_sha256}");

    let mut directory = String::new();
    let mut payload: Vec<u8> = Vec::new();
    let mut count = 0usize;
    model.visit(&mut |name, t| {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        let _ = writeln!(
            directory,
            "tensor {name} {} {}",
            dims.join("x"),
            payload.len()
        );
        for v in t.data() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        count += 1;
    });
    let _ = writeln!(manifest, "tensors = {count}");
    manifest.push_str(&directory);
    let _ = writeln!(manifest, "payload = {}", payload.len());

    let mut bytes = manifest.into_bytes();
    bytes.extend_from_slice(&payload);
    std::fs::write(path, bytes)?;
    Ok(())
}

struct ManifestReader<'a> {
    lines: Vec<&'a str>,
    cursor: usize,
}

impl<'a> ManifestReader<'a> {
    fn error(&self, reason: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            line: self.cursor,
            reason: reason.into(),
        }
    }

    fn next_line(&mut self) -> Result<&'a str, CheckpointError> {
        let line = self
            .lines
            .get(self.cursor)
            .copied()
            .ok_or(CheckpointError::Malformed {
                line: self.cursor + 1,
                reason: "unexpected end of manifest".to_string(),
            })?;
        self.cursor += 1;
        Ok(line)
    }

    /// Reads `key = value`, enforcing the expected key.
    fn expect_kv(&mut self, key: &str) -> Result<String, CheckpointError> {
        let line = self.next_line()?;
        let (k, v) = line
            .split_once(" = ")
            .ok_or_else(|| self.error(format!("expected `{key} = ...`")))?;
        if k != key {
            return Err(self.error(format!("expected key {key}, found {k}")));
        }
        Ok(v.to_string())
    }

    fn expect_parsed<T: std::str::FromStr>(&mut self, key: &str) -> Result<T, CheckpointError> {
        let v = self.expect_kv(key)?;
        v.parse()
            .map_err(|_| self.error(format!("bad value for {key}: {v:?}")))
    }
}

fn read_head_config(
    r: &mut ManifestReader<'_>,
    prefix: &str,
) -> Result<HeadConfig, CheckpointError> {
    Ok(HeadConfig {
        in_dim: r.expect_parsed(&format!("{prefix}.in_dim"))?,
        mid_dim: r.expect_parsed(&format!("{prefix}.mid_dim"))?,
        reduced_dim: r.expect_parsed(&format!("{prefix}.reduced_dim"))?,
        num_classes: r.expect_parsed(&format!("{prefix}.num_classes"))?,
        dropout1: r.expect_parsed(&format!("{prefix}.dropout1"))?,
        dropout2: r.expect_parsed(&format!("{prefix}.dropout2"))?,
        residual: r.expect_parsed(&format!("{prefix}.residual"))?,
    })
}

/// Restores a model saved by [`save_checkpoint`]. Every integrity failure
/// (shape drift, truncated payload, count mismatch) aborts with no model.
pub fn load_checkpoint(path: &Path) -> Result<LoadedCheckpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;

    // The manifest is everything through the `payload = N` line.
    let marker: &[u8] = b"\npayload = ";
    let marker_pos = bytes
        .windows(marker.len())
        .position(|w| w == marker)
        .ok_or(CheckpointError::Integrity {
            reason: "missing payload marker".to_string(),
        })?;
    let header_end = marker_pos
        + 1
        + bytes[marker_pos + 1..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or(CheckpointError::Integrity {
                reason: "unterminated payload length".to_string(),
            })?;
    let manifest = std::str::from_utf8(&bytes[..=header_end]).map_err(|_| {
        CheckpointError::Integrity {
            reason: "manifest is not utf-8".to_string(),
        }
    })?;
    let payload = &bytes[header_end + 1..];

    let mut r = ManifestReader {
        lines: manifest.lines().collect(),
        cursor: 0,
    };
    let magic = r.next_line()?;
    if magic != MAGIC {
        return Err(r.error("unrecognized checkpoint header"));
    }
    let task_str = r.expect_kv("task")?;
    let task = Task::parse(&task_str)
        .ok_or_else(|| r.error(format!("unknown task {task_str:?}")))?;
    let shared_dropout_p: f64 = r.expect_parsed("shared_dropout_p")?;
    let config = EncoderConfig {
        vocab_size: r.expect_parsed("encoder.vocab_size")?,
        hidden: r.expect_parsed("encoder.hidden")?,
        layers: r.expect_parsed("encoder.layers")?,
        attn_heads: r.expect_parsed("encoder.attn_heads")?,
        ffn_dim: r.expect_parsed("encoder.ffn_dim")?,
        max_positions: r.expect_parsed("encoder.max_positions")?,
        pooled_dropout_p: r.expect_parsed("encoder.pooled_dropout_p")?,
    };
    let head_cfg_1 = read_head_config(&mut r, "head1")?;
    let head_cfg_2 = read_head_config(&mut r, "head2")?;

    let mut read_labels = |prefix: &str, count: usize| -> Result<LabelVocab, CheckpointError> {
        let mut names = Vec::with_capacity(count);
        for i in 0..count {
            let quoted = r.expect_kv(&format!("{prefix}.{i}"))?;
            let name: String = serde_json::from_str(&quoted)
                .map_err(|_| CheckpointError::Malformed {
                    line: 0,
                    reason: format!("bad label string {quoted}"),
                })?;
            names.push(name);
        }
        Ok(LabelVocab::from_names(names))
    };
    let labels_1 = read_labels("labels1", head_cfg_1.num_classes)?;
    let labels_2 = read_labels("labels2", head_cfg_2.num_classes)?;
    let vocab_sha256 = r.expect_kv("vocab_sha256")?;

    let mut model = DualHeadModel {
        task,
        encoder: EncoderParams::zeroed(config).map_err(ModelError::from)?,
        shared_dropout_p,
        head_1: HeadParams::zeroed(&head_cfg_1)?,
        head_cfg_1,
        head_2: HeadParams::zeroed(&head_cfg_2)?,
        head_cfg_2,
    };

    let tensor_count: usize = r.expect_parsed("tensors")?;
    if tensor_count != model.num_param_tensors() {
        return Err(CheckpointError::Integrity {
            reason: format!(
                "manifest lists {tensor_count} tensors, model has {}",
                model.num_param_tensors()
            ),
        });
    }
    struct Entry {
        name: String,
        shape: Vec<usize>,
        offset: usize,
    }
    let mut entries = Vec::with_capacity(tensor_count);
    for _ in 0..tensor_count {
        let line = r.next_line()?;
        let mut parts = line.split(' ');
        let (tag, name, dims, offset) = (
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
            parts.next().unwrap_or(""),
        );
        if tag != "tensor" || parts.next().is_some() {
            return Err(r.error("bad tensor directory line"));
        }
        let shape: Vec<usize> = dims
            .split('x')
            .map(|d| d.parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| r.error(format!("bad tensor dims {dims:?}")))?;
        let offset: usize = offset
            .parse()
            .map_err(|_| r.error(format!("bad tensor offset {offset:?}")))?;
        entries.push(Entry {
            name: name.to_string(),
            shape,
            offset,
        });
    }
    let declared_payload: usize = r.expect_parsed("payload")?;
    if payload.len() != declared_payload {
        return Err(CheckpointError::Integrity {
            reason: format!(
                "payload is {} bytes, manifest declares {declared_payload}",
                payload.len()
            ),
        });
    }

    let mut expected_offset = 0usize;
    let mut index = 0usize;
    let mut failure: Option<CheckpointError> = None;
    model.visit_mut(&mut |name, tensor| {
        if failure.is_some() {
            return;
        }
        let entry = &entries[index];
        index += 1;
        if entry.name != name || entry.shape != tensor.shape() {
            failure = Some(CheckpointError::Integrity {
                reason: format!(
                    "tensor {index} mismatch: manifest has {} {:?}, model expects {} {:?}",
                    entry.name,
                    entry.shape,
                    name,
                    tensor.shape()
                ),
            });
            return;
        }
        if entry.offset != expected_offset {
            failure = Some(CheckpointError::Integrity {
                reason: format!("tensor {} offset {} not contiguous", entry.name, entry.offset),
            });
            return;
        }
        let nbytes = tensor.len() * 8;
        let Some(slice) = payload.get(entry.offset..entry.offset + nbytes) else {
            failure = Some(CheckpointError::Integrity {
                reason: format!("payload truncated inside tensor {}", entry.name),
            });
            return;
        };
        for (i, chunk) in slice.chunks_exact(8).enumerate() {
            tensor.data_mut()[i] = f64::from_le_bytes(chunk.try_into().expect("8-byte chunk"));
        }
        expected_offset += nbytes;
    });
    if let Some(err) = failure {
        return Err(err);
    }
    if expected_offset != payload.len() {
        return Err(CheckpointError::Integrity {
            reason: format!(
                "payload has {} trailing bytes",
                payload.len() - expected_offset
            ),
        });
    }
    Ok(LoadedCheckpoint {
        model,
        labels_1,
        labels_2,
        vocab_sha256,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::heads::make_task_model;
    use crate::numerics::RngState;
    use crate::tokenizer::{Vocab, CLS_ID};
    use crate::tokenizer::TokenizedBatch;

    fn sample_model(seed: u64) -> DualHeadModel {
        let mut rng = RngState::stream(seed, 0);
        make_task_model(Task::B, EncoderConfig::micro(40), true, &mut rng).unwrap()
    }

    fn sample_labels() -> (LabelVocab, LabelVocab) {
        (
            LabelVocab::from_names(vec!["none", "individual", "organization", "religion"]),
            LabelVocab::from_names(vec!["none", "low", "medium", "high"]),
        )
    }

    fn sample_batch() -> TokenizedBatch {
        TokenizedBatch {
            ids: vec![CLS_ID, 7, 12, 30, CLS_ID, 5, 1, 1],
            mask: vec![1, 1, 1, 1, 1, 1, 0, 0],
            lengths: vec![4, 2],
            rows: 2,
            width: 4,
        }
    }

    #[test]
    fn round_trip_preserves_parameters_and_logits() {
        let model = sample_model(31);
        let (l1, l2) = sample_labels();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &l1, &l2, "cafe01", &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.vocab_sha256, "cafe01");
        assert_eq!(loaded.labels_1, l1);
        assert_eq!(loaded.labels_2, l2);

        let mut orig = Vec::new();
        model.visit(&mut |_, t| orig.extend(t.data().iter().map(|v| v.to_bits())));
        let mut restored = Vec::new();
        loaded
            .model
            .visit(&mut |_, t| restored.extend(t.data().iter().map(|v| v.to_bits())));
        assert_eq!(orig, restored);

        let batch = sample_batch();
        let mut rng = RngState::new(0);
        let a = model
            .dual_forward(&batch, None, None, false, &mut rng)
            .unwrap();
        let b = loaded
            .model
            .dual_forward(&batch, None, None, false, &mut rng)
            .unwrap();
        let bits = |t: &crate::numerics::Tensor| -> Vec<u64> {
            t.data().iter().map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(&a.logits_1), bits(&b.logits_1));
        assert_eq!(bits(&a.logits_2), bits(&b.logits_2));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let model = sample_model(32);
        let (l1, l2) = sample_labels();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &l1, &l2, "00", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 1);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Integrity { .. })
        ));
    }

    #[test]
    fn manifest_tensor_count_equals_model_parameter_count() {
        let model = sample_model(33);
        let (l1, l2) = sample_labels();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &l1, &l2, "00", &path).unwrap();
        let text = String::from_utf8_lossy(&std::fs::read(&path).unwrap()).into_owned();
        let declared: usize = text
            .lines()
            .find_map(|l| l.strip_prefix("tensors = "))
            .unwrap()
            .parse()
            .unwrap();
        let directory_lines = text.lines().filter(|l| l.starts_with("tensor ")).count();
        assert_eq!(declared, model.num_param_tensors());
        assert_eq!(directory_lines, declared);
    }

    #[test]
    fn tampered_shape_is_rejected() {
        let model = sample_model(34);
        let (l1, l2) = sample_labels();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&model, &l1, &l2, "00", &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        let tampered = text.replacen("16x16", "8x32", 1);
        std::fs::write(&path, tampered.as_bytes()).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(CheckpointError::Integrity { .. })
        ));
    }

    #[test]
    fn vocab_hash_helper_is_stable() {
        let corpus = ["ek do teen"];
        let vocab = Vocab::train(&corpus, 64, 1).unwrap();
        let a = sha256_hex(vocab.to_file_string().as_bytes());
        let b = sha256_hex(vocab.to_file_string().as_bytes());
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
    }
}
