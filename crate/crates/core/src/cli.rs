//! Command-line surface: train, eval, predict, gradcheck, tokenize.
//!
//! Configuration precedence is flag > config file > default; every piece of
//! randomness flows from the single `seed` key. Exit codes: 0 success,
//! 1 usage or configuration error, 2 data or integrity error,
//! 3 gradient-verification failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, save_checkpoint, sha256_hex, CheckpointError};
use crate::config::{parse_pair, ConfigError, FullConfig};
use crate::data::{self, DataError, LabelVocab};
use crate::encoder::EncoderParams;
use crate::heads::{DualHeadModel, HeadParams, ModelError};
use crate::metrics::{argmax, softmax_row};
use crate::numerics::{FaultInjection, RngState};
use crate::task::Task;
use crate::tokenizer::{TokenizerError, Vocab};
use crate::train::{evaluate, train, TrainError};
use crate::verify::{self, VerifyError};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("report i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("head {head} label vocabulary has {found} entries; the model head has {classes} classes")]
    LabelVocabTooLarge {
        head: usize,
        found: usize,
        classes: usize,
    },
    #[error("vocabulary mismatch: checkpoint expects hash {expected}, file has {actual}")]
    VocabHashMismatch { expected: String, actual: String },
    #[error("checkpoint was trained for task {checkpoint}, requested task {requested}")]
    TaskMismatch { checkpoint: Task, requested: Task },
    #[error("gradient verification failed")]
    VerificationFailed,
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::VerificationFailed => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Train,
    Eval,
    Predict,
    Gradcheck { inject_bad_gelu_grad: bool },
    Tokenize,
}

/// A fully parsed invocation: one command, the optional task, the optional
/// config file, and ordered key=value overrides (strongest last).
#[derive(Debug, Clone)]
pub struct RunSpec {
    pub command: CommandKind,
    pub task: Option<Task>,
    pub config: Option<PathBuf>,
    pub overrides: Vec<(String, String)>,
}

// ---- argument parsing -----------------------------------------------------

#[derive(Parser)]
#[command(
    name = "dualhead",
    version,
    about = "Dual-head transformer classifier for code-mixed fake/hate and target/severity prediction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Task profile: A (fake + hate) or B (target + severity)
    #[arg(long)]
    task: Option<String>,
    /// Flat key=value config file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key (repeatable), e.g. --set epochs=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a dual-head model and write a checkpoint plus run report
    Train {
        #[command(flatten)]
        common: CommonArgs,
        /// Training CSV
        #[arg(long)]
        train: Option<String>,
        /// Validation CSV
        #[arg(long)]
        val: Option<String>,
        /// Toggle residual connections in the heads
        #[arg(long)]
        residual: Option<bool>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Reuse an existing vocabulary file instead of training one
        #[arg(long)]
        vocab: Option<String>,
        #[arg(long)]
        checkpoint_out: Option<String>,
        #[arg(long)]
        vocab_out: Option<String>,
        #[arg(long)]
        report_out: Option<String>,
        /// Keep the epoch with the best validation loss instead of the last
        #[arg(long)]
        keep_best: Option<bool>,
    },
    /// Evaluate a checkpoint on labeled data
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        vocab: Option<String>,
        /// Labeled CSV to score
        #[arg(long)]
        data: Option<String>,
    },
    /// Predict labels and per-class probabilities for unlabeled data
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        vocab: Option<String>,
        /// Unlabeled CSV (id + text columns)
        #[arg(long)]
        data: Option<String>,
        /// Output CSV path
        #[arg(long)]
        out: Option<String>,
    },
    /// Run the finite-difference verification suite
    Gradcheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Corrupt the GELU gradient rule (negative-control hook)
        #[arg(long, hide = true)]
        inject_bad_gelu_grad: bool,
    },
    /// Train a subword vocabulary from a text corpus
    Tokenize {
        #[command(flatten)]
        common: CommonArgs,
        /// One training text per line
        #[arg(long)]
        corpus: Option<String>,
        /// Where to write the vocabulary file
        #[arg(long)]
        output: Option<String>,
    },
}

fn push_flag(overrides: &mut Vec<(String, String)>, key: &str, value: Option<impl ToString>) {
    if let Some(v) = value {
        overrides.push((key.to_string(), v.to_string()));
    }
}

fn build_spec(cli: Cli) -> Result<RunSpec, CliError> {
    let (command, common, mut flag_pairs) = match cli.command {
        Command::Train {
            common,
            train,
            val,
            residual,
            seed,
            epochs,
            vocab,
            checkpoint_out,
            vocab_out,
            report_out,
            keep_best,
        } => {
            let mut pairs = Vec::new();
            push_flag(&mut pairs, "train_csv", train);
            push_flag(&mut pairs, "val_csv", val);
            push_flag(&mut pairs, "residual", residual);
            push_flag(&mut pairs, "seed", seed);
            push_flag(&mut pairs, "epochs", epochs);
            push_flag(&mut pairs, "vocab", vocab);
            push_flag(&mut pairs, "checkpoint_out", checkpoint_out);
            push_flag(&mut pairs, "vocab_out", vocab_out);
            push_flag(&mut pairs, "report_out", report_out);
            push_flag(&mut pairs, "keep_best", keep_best);
            (CommandKind::Train, common, pairs)
        }
        Command::Eval {
            common,
            checkpoint,
            vocab,
            data,
        } => {
            let mut pairs = Vec::new();
            push_flag(&mut pairs, "checkpoint", checkpoint);
            push_flag(&mut pairs, "vocab", vocab);
            push_flag(&mut pairs, "data_csv", data);
            (CommandKind::Eval, common, pairs)
        }
        Command::Predict {
            common,
            checkpoint,
            vocab,
            data,
            out,
        } => {
            let mut pairs = Vec::new();
            push_flag(&mut pairs, "checkpoint", checkpoint);
            push_flag(&mut pairs, "vocab", vocab);
            push_flag(&mut pairs, "data_csv", data);
            push_flag(&mut pairs, "predictions_out", out);
            (CommandKind::Predict, common, pairs)
        }
        Command::Gradcheck {
            common,
            inject_bad_gelu_grad,
        } => (
            CommandKind::Gradcheck {
                inject_bad_gelu_grad,
            },
            common,
            Vec::new(),
        ),
        Command::Tokenize {
            common,
            corpus,
            output,
        } => {
            let mut pairs = Vec::new();
            push_flag(&mut pairs, "corpus", corpus);
            push_flag(&mut pairs, "vocab_out", output);
            (CommandKind::Tokenize, common, pairs)
        }
    };

    let task = match &common.task {
        Some(s) => Some(
            Task::parse(s).ok_or_else(|| CliError::Usage(format!("unknown task {s:?}")))?,
        ),
        None => None,
    };
    let mut overrides = Vec::new();
    for raw in &common.set {
        let pair = parse_pair(raw)
            .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got {raw:?}")))?;
        overrides.push(pair);
    }
    overrides.append(&mut flag_pairs);
    Ok(RunSpec {
        command,
        task,
        config: common.config,
        overrides,
    })
}

// ---- command implementations ------------------------------------------------

fn load_config(spec: &RunSpec) -> Result<FullConfig, CliError> {
    Ok(FullConfig::from_sources(
        spec.config.as_deref(),
        &spec.overrides,
    )?)
}

fn build_model(
    cfg: &FullConfig,
    task: Task,
    vocab_len: usize,
    rng: &mut RngState,
) -> Result<DualHeadModel, ModelError> {
    let (c1, c2) = task.head_classes();
    let encoder_cfg = cfg.encoder_config(vocab_len);
    let head_cfg_1 = cfg.head_config(c1);
    let head_cfg_2 = cfg.head_config(c2);
    let shared_dropout_p = encoder_cfg.pooled_dropout_p;
    let encoder = EncoderParams::init(encoder_cfg, rng)?;
    let head_1 = HeadParams::init(&head_cfg_1, rng)?;
    let head_2 = HeadParams::init(&head_cfg_2, rng)?;
    Ok(DualHeadModel {
        task,
        encoder,
        shared_dropout_p,
        head_cfg_1,
        head_1,
        head_cfg_2,
        head_2,
    })
}

fn check_vocab_capacity(
    head: usize,
    vocab: &LabelVocab,
    classes: usize,
) -> Result<(), CliError> {
    if vocab.len() > classes {
        return Err(CliError::LabelVocabTooLarge {
            head,
            found: vocab.len(),
            classes,
        });
    }
    Ok(())
}

pub fn run_train(spec: &RunSpec) -> Result<(), CliError> {
    let cfg = load_config(spec)?;
    let task = spec
        .task
        .ok_or_else(|| CliError::Usage("--task is required for train".to_string()))?;
    let train_path = FullConfig::require(&cfg.train_csv, "train_csv")?;
    let val_path = FullConfig::require(&cfg.val_csv, "val_csv")?;
    let cols = cfg.column_map(task);

    let dataset = data::load_csv(Path::new(train_path), task, &cols)?;
    let (c1, c2) = task.head_classes();
    check_vocab_capacity(1, &dataset.labels_1, c1)?;
    check_vocab_capacity(2, &dataset.labels_2, c2)?;
    let val_set = data::load_csv_with_vocab(
        Path::new(val_path),
        task,
        &cols,
        &dataset.labels_1,
        &dataset.labels_2,
    )?;

    let vocab = match &cfg.vocab {
        Some(path) => Vocab::load(Path::new(path))?,
        None => {
            let texts: Vec<&str> = dataset.examples.iter().map(|e| e.text.as_str()).collect();
            let vocab = Vocab::train(&texts, cfg.vocab_size, cfg.min_freq)?;
            vocab.save(Path::new(&cfg.vocab_out))?;
            vocab
        }
    };
    let vocab_hash = sha256_hex(vocab.to_file_string().as_bytes());

    let mut rng = RngState::stream(cfg.seed, 0);
    let mut model = build_model(&cfg, task, vocab.len(), &mut rng)?;

    let train_cfg = cfg.train_config();
    let mut report_file = std::fs::File::create(&cfg.report_out)?;
    let run = train(
        &mut model,
        &vocab,
        &dataset.examples,
        &val_set,
        &train_cfg,
        cfg.max_len,
        cfg.keep_best,
        |report| {
            let line = serde_json::to_string(report).expect("reports always serialize");
            println!("{line}");
            let _ = writeln!(report_file, "{line}");
        },
    )?;
    report_file.flush()?;

    let chosen = run.best_model.as_ref().unwrap_or(&model);
    save_checkpoint(
        chosen,
        &dataset.labels_1,
        &dataset.labels_2,
        &vocab_hash,
        Path::new(&cfg.checkpoint_out),
    )?;
    eprintln!(
        "trained task {task}: checkpoint {}, vocabulary {}, report {}",
        cfg.checkpoint_out, cfg.vocab_out, cfg.report_out
    );
    Ok(())
}

struct LoadedModel {
    model: DualHeadModel,
    labels_1: LabelVocab,
    labels_2: LabelVocab,
    vocab: Vocab,
    max_len: usize,
}

fn load_model_and_vocab(spec: &RunSpec, cfg: &FullConfig) -> Result<LoadedModel, CliError> {
    let ckpt_path = FullConfig::require(&cfg.checkpoint, "checkpoint")?;
    let vocab_path = FullConfig::require(&cfg.vocab, "vocab")?;
    let loaded = load_checkpoint(Path::new(ckpt_path))?;
    if let Some(task) = spec.task {
        if task != loaded.model.task {
            return Err(CliError::TaskMismatch {
                checkpoint: loaded.model.task,
                requested: task,
            });
        }
    }
    let vocab = Vocab::load(Path::new(vocab_path))?;
    let actual = sha256_hex(vocab.to_file_string().as_bytes());
    if actual != loaded.vocab_sha256 {
        return Err(CliError::VocabHashMismatch {
            expected: loaded.vocab_sha256,
            actual,
        });
    }
    let max_len = cfg.max_len.min(loaded.model.encoder.config.max_positions);
    Ok(LoadedModel {
        model: loaded.model,
        labels_1: loaded.labels_1,
        labels_2: loaded.labels_2,
        vocab,
        max_len,
    })
}

pub fn run_eval(spec: &RunSpec) -> Result<(), CliError> {
    let cfg = load_config(spec)?;
    let loaded = load_model_and_vocab(spec, &cfg)?;
    let data_path = FullConfig::require(&cfg.data_csv, "data_csv")?;
    let task = loaded.model.task;
    let examples = data::load_csv_with_vocab(
        Path::new(data_path),
        task,
        &cfg.column_map(task),
        &loaded.labels_1,
        &loaded.labels_2,
    )?;
    let metrics = evaluate(
        &loaded.model,
        &loaded.vocab,
        &examples,
        cfg.batch_size,
        loaded.max_len,
    )?;
    println!(
        "{}",
        serde_json::to_string(&metrics).expect("metrics always serialize")
    );
    let (h1, h2) = task.head_names();
    println!("loss              {:.6}", metrics.loss);
    println!("accuracy {h1:<9} {:.4}", metrics.accuracy_1);
    println!("accuracy {h2:<9} {:.4}", metrics.accuracy_2);
    println!("overall accuracy  {:.4}", metrics.overall_accuracy);
    println!("macro F1 {h1:<9} {:.4}", metrics.macro_f1_1);
    println!("macro F1 {h2:<9} {:.4}", metrics.macro_f1_2);
    println!("task macro F1     {:.4}", metrics.task_macro_f1);
    Ok(())
}

fn label_name(vocab: &LabelVocab, id: usize) -> String {
    vocab
        .name(id)
        .map(str::to_string)
        .unwrap_or_else(|| id.to_string())
}

pub fn run_predict(spec: &RunSpec) -> Result<(), CliError> {
    let cfg = load_config(spec)?;
    let loaded = load_model_and_vocab(spec, &cfg)?;
    let data_path = FullConfig::require(&cfg.data_csv, "data_csv")?;
    let task = loaded.model.task;
    let rows = data::load_unlabeled_csv(Path::new(data_path), &cfg.column_map(task))?;

    let (c1, c2) = (
        loaded.model.head_cfg_1.num_classes,
        loaded.model.head_cfg_2.num_classes,
    );
    let (h1, h2) = task.head_names();
    let mut writer =
        csv::Writer::from_path(Path::new(&cfg.predictions_out)).map_err(DataError::from)?;
    let mut header = vec!["id".to_string(), h1.to_string(), h2.to_string()];
    for i in 0..c1 {
        header.push(format!("p_{h1}_{}", label_name(&loaded.labels_1, i)));
    }
    for i in 0..c2 {
        header.push(format!("p_{h2}_{}", label_name(&loaded.labels_2, i)));
    }
    writer.write_record(&header).map_err(DataError::from)?;

    let mut rng = RngState::new(0);
    for chunk in rows.chunks(cfg.batch_size.max(1)) {
        let texts: Vec<&str> = chunk.iter().map(|(_, t)| t.as_str()).collect();
        let batch = loaded.vocab.encode(&texts, loaded.max_len);
        let out = loaded
            .model
            .dual_forward(&batch, None, None, false, &mut rng)?;
        for (r, (id, _)) in chunk.iter().enumerate() {
            let row1 = &out.logits_1.data()[r * c1..(r + 1) * c1];
            let row2 = &out.logits_2.data()[r * c2..(r + 1) * c2];
            let mut record = vec![
                id.clone(),
                label_name(&loaded.labels_1, argmax(row1)),
                label_name(&loaded.labels_2, argmax(row2)),
            ];
            for p in softmax_row(row1) {
                record.push(format!("{p:.6}"));
            }
            for p in softmax_row(row2) {
                record.push(format!("{p:.6}"));
            }
            writer.write_record(&record).map_err(DataError::from)?;
        }
    }
    writer.flush()?;
    eprintln!("wrote {} predictions to {}", rows.len(), cfg.predictions_out);
    Ok(())
}

pub fn run_gradcheck(inject_bad_gelu_grad: bool) -> Result<(), CliError> {
    let fault = inject_bad_gelu_grad.then_some(FaultInjection::GeluGradient);
    let report = verify::run_suite(fault)?;
    for check in &report.checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!(
            "{status} {:<32} max rel err {:.3e} (tol {:.0e})",
            check.name, check.max_rel_err, check.tol
        );
    }
    if report.passed() {
        println!("all {} checks passed", report.checks.len());
        Ok(())
    } else {
        for failure in report.failures() {
            eprintln!(
                "verification failure: {} at {:.3e} exceeds {:.0e}",
                failure.name, failure.max_rel_err, failure.tol
            );
        }
        Err(CliError::VerificationFailed)
    }
}

pub fn run_tokenize(spec: &RunSpec) -> Result<(), CliError> {
    let cfg = load_config(spec)?;
    let corpus_path = FullConfig::require(&cfg.corpus, "corpus")?;
    let content = std::fs::read_to_string(corpus_path)?;
    let lines: Vec<&str> = content.lines().collect();
    let vocab = Vocab::train(&lines, cfg.vocab_size, cfg.min_freq)?;
    vocab.save(Path::new(&cfg.vocab_out))?;
    println!(
        "trained vocabulary: {} lines, {} tokens ({} merges) -> {}",
        lines.len(),
        vocab.len(),
        vocab.num_merges(),
        cfg.vocab_out
    );
    Ok(())
}

pub fn execute(spec: &RunSpec) -> Result<(), CliError> {
    match spec.command {
        CommandKind::Train => run_train(spec),
        CommandKind::Eval => run_eval(spec),
        CommandKind::Predict => run_predict(spec),
        CommandKind::Gradcheck {
            inject_bad_gelu_grad,
        } => run_gradcheck(inject_bad_gelu_grad),
        CommandKind::Tokenize => run_tokenize(spec),
    }
}

/// Binary entry point.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            use clap::error::ErrorKind;
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    let spec = match build_spec(cli) {
        Ok(spec) => spec,
        Err(err) => {
            eprintln!("error: {err}");
            return ExitCode::from(err.exit_code());
        }
    };
    match execute(&spec) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_from_train_flags() {
        let cli = Cli::try_parse_from([
            "dualhead", "train", "--task", "A", "--train", "t.csv", "--val", "v.csv", "--set",
            "epochs=2", "--seed", "7",
        ])
        .unwrap();
        let spec = build_spec(cli).unwrap();
        assert_eq!(spec.command, CommandKind::Train);
        assert_eq!(spec.task, Some(Task::A));
        // --set pairs come first, named flags afterwards
        assert_eq!(
            spec.overrides,
            vec![
                ("epochs".to_string(), "2".to_string()),
                ("train_csv".to_string(), "t.csv".to_string()),
                ("val_csv".to_string(), "v.csv".to_string()),
                ("seed".to_string(), "7".to_string()),
            ]
        );
    }

    #[test]
    fn bad_task_is_usage_error() {
        let cli = Cli::try_parse_from(["dualhead", "train", "--task", "C"]).unwrap();
        let err = build_spec(cli).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn bad_set_pair_is_usage_error() {
        let cli = Cli::try_parse_from(["dualhead", "train", "--task", "A", "--set", "nonsense"])
            .unwrap();
        let err = build_spec(cli).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_flag_fails_to_parse() {
        assert!(Cli::try_parse_from(["dualhead", "train", "--bogus"]).is_err());
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(
            CliError::Config(ConfigError::UnknownKey { key: "k".into() }).exit_code(),
            1
        );
        assert_eq!(CliError::VerificationFailed.exit_code(), 3);
        assert_eq!(
            CliError::VocabHashMismatch {
                expected: "a".into(),
                actual: "b".into()
            }
            .exit_code(),
            2
        );
    }
}
