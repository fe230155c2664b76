//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
//!
//! Run with `cargo test -p dualhead --test acceptance -- --nocapture` to see
//! the per-criterion lines.

use std::path::Path;
use std::time::{Duration, Instant};

use dualhead::cli::{execute, CommandKind, RunSpec};
use dualhead::data::{load_csv, ColumnMap};
use dualhead::encoder::EncoderConfig;
use dualhead::heads::{head_forward, make_task_model, ForwardTrace, HeadConfig, HeadParams};
use dualhead::metrics::{accuracy, macro_f1};
use dualhead::numerics::{RngState, Tape, Tensor};
use dualhead::task::Task;
use dualhead::tokenizer::{normalize, TokenizedBatch, Vocab, CLS_ID, PAD_ID};
use dualhead::train::{train, TrainConfig};
use dualhead::verify;

fn fixture(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn report(criterion: usize, name: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("ACCEPTANCE {criterion}: {status} - {name} ({detail})");
    assert!(passed, "criterion {criterion} failed: {name}: {detail}");
}

fn random_batch(rng: &mut RngState, vocab_size: usize, rows: usize, width: usize) -> TokenizedBatch {
    let mut ids = vec![PAD_ID; rows * width];
    let mut mask = vec![0u8; rows * width];
    let mut lengths = Vec::new();
    for r in 0..rows {
        let len = 2 + (rng.uniform() * (width - 2) as f64) as usize;
        lengths.push(len.min(width));
        ids[r * width] = CLS_ID;
        mask[r * width] = 1;
        for c in 1..lengths[r] {
            ids[r * width + c] = 4 + (rng.uniform() * (vocab_size - 4) as f64) as u32;
            mask[r * width + c] = 1;
        }
    }
    TokenizedBatch {
        ids,
        mask,
        lengths,
        rows,
        width,
    }
}

#[test]
fn criterion_1_gradient_suite() {
    let start = Instant::now();
    let suite = verify::run_suite(None).expect("suite must run");
    let elapsed = start.elapsed();
    let detail = format!(
        "{} checks, worst rel err {:.2e}, {:.1}s",
        suite.checks.len(),
        suite
            .checks
            .iter()
            .map(|c| c.max_rel_err)
            .fold(0.0, f64::max),
        elapsed.as_secs_f64()
    );
    let passed = suite.passed() && elapsed < Duration::from_secs(300);
    report(1, "gradient suite (primitives + full model)", passed, &detail);
}

#[test]
fn criterion_2_architecture_conformance() {
    let mut ok = true;
    let mut details = Vec::new();

    for classes in [2usize, 4] {
        let cfg = HeadConfig {
            num_classes: classes,
            ..HeadConfig::default()
        };
        let mut rng = RngState::new(100 + classes as u64);
        let params = HeadParams::init(&cfg, &mut rng).unwrap();
        let pooled = Tensor::randn_truncated(vec![2, 768], 1.0, &mut rng);
        let mut tape = Tape::new();
        let vars = params.register(&mut tape);
        let p = tape.leaf(&pooled);
        let mut trace = ForwardTrace::default();
        head_forward(&cfg, &vars, &mut tape, p, true, &mut rng, Some(&mut trace)).unwrap();
        let dims = trace.linear_dims();
        let probs = trace.dropout_probs();
        if dims != vec![768, 768, 384, classes] {
            ok = false;
            details.push(format!("dims for C={classes}: {dims:?}"));
        }
        if probs != vec![0.2, 0.1] {
            ok = false;
            details.push(format!("dropouts for C={classes}: {probs:?}"));
        }
    }

    let mut rng = RngState::new(7);
    let a = make_task_model(Task::A, EncoderConfig::micro(16), false, &mut rng).unwrap();
    let b = make_task_model(Task::B, EncoderConfig::micro(16), false, &mut rng).unwrap();
    if (a.head_cfg_1.num_classes, a.head_cfg_2.num_classes) != (2, 2) {
        ok = false;
        details.push("task A classes".to_string());
    }
    if (b.head_cfg_1.num_classes, b.head_cfg_2.num_classes) != (4, 4) {
        ok = false;
        details.push("task B classes".to_string());
    }
    let detail = if details.is_empty() {
        "768->768->384->C, dropouts [0.2, 0.1], A=2/2, B=4/4".to_string()
    } else {
        details.join("; ")
    };
    report(2, "architecture conformance", ok, &detail);
}

#[test]
fn criterion_3_loss_averaging() {
    let mut worst_case = String::new();
    let mut ok = true;
    for trial in 0..100u64 {
        let mut rng = RngState::stream(500 + trial, 0);
        let residual = trial % 2 == 0;
        let model = make_task_model(Task::A, EncoderConfig::micro(24), residual, &mut rng).unwrap();
        let batch = random_batch(&mut rng, 24, 2, 5);
        let labels_1 = [(trial % 2) as usize, ((trial / 2) % 2) as usize];
        let labels_2 = [((trial / 4) % 2) as usize, (trial % 2) as usize];

        let mut eval_rng = RngState::new(0);
        let out = model
            .dual_forward(&batch, Some(&labels_1), Some(&labels_2), false, &mut eval_rng)
            .unwrap();
        let (l1, l2) = (out.loss_1.unwrap(), out.loss_2.unwrap());
        if out.combined_loss.unwrap().to_bits() != ((l1 + l2) / 2.0).to_bits() {
            ok = false;
            worst_case = format!("trial {trial}: combined != (l1+l2)/2 bitwise");
            break;
        }

        // gradient halving, elementwise over every head-1 parameter
        let mut rng_a = RngState::new(0);
        let mut pass_combined = model
            .forward(&batch, Some((&labels_1, &labels_2)), false, &mut rng_a)
            .unwrap();
        pass_combined
            .tape
            .backward(pass_combined.combined_loss.unwrap())
            .unwrap();
        let mut rng_b = RngState::new(0);
        let mut pass_single = model
            .forward(&batch, Some((&labels_1, &labels_2)), false, &mut rng_b)
            .unwrap();
        pass_single
            .tape
            .backward(pass_single.loss_1.unwrap())
            .unwrap();

        // head-1 parameters occupy the same tape slots in both passes
        let head1_range = {
            let mut n_enc = 0;
            model.encoder.visit(&mut |_, _| n_enc += 1);
            let mut n_h1 = 0;
            model.head_1.visit("h", &mut |_, _| n_h1 += 1);
            n_enc..n_enc + n_h1
        };
        'outer: for idx in head1_range {
            let vc = pass_combined.tape.var(idx).unwrap();
            let vs = pass_single.tape.var(idx).unwrap();
            let gc = pass_combined.tape.grad(vc).unwrap();
            let gs = pass_single.tape.grad(vs).unwrap();
            for (c, s) in gc.iter().zip(gs) {
                if c.to_bits() != (0.5 * s).to_bits() {
                    ok = false;
                    worst_case = format!("trial {trial}: grad not exactly halved at slot {idx}");
                    break 'outer;
                }
            }
        }
        if !ok {
            break;
        }
    }
    let detail = if ok {
        "100 states: combined == (l1+l2)/2 and d(combined)/dθ1 == d(l1)/dθ1 / 2, bit-exact".to_string()
    } else {
        worst_case
    };
    report(3, "balanced loss averaging", ok, &detail);
}

#[test]
fn criterion_4_overfit_smoke() {
    let start = Instant::now();
    let dataset = load_csv(&fixture("task_a_32.csv"), Task::A, &ColumnMap::for_task(Task::A))
        .expect("bundled fixture loads");
    assert_eq!(dataset.examples.len(), 32);
    let texts: Vec<&str> = dataset.examples.iter().map(|e| e.text.as_str()).collect();
    let vocab = Vocab::train(&texts, 400, 1).unwrap();

    let mut ok = true;
    let mut details = Vec::new();
    for residual in [false, true] {
        let mut rng = RngState::stream(42, 0);
        let mut model = make_task_model(
            Task::A,
            EncoderConfig::tiny(vocab.len()),
            residual,
            &mut rng,
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 200,
            batch_size: 16,
            learning_rate: 1e-3,
            weight_decay: 0.01,
            seed: 42,
            residual,
            grad_clip: None,
        };
        let run = train(
            &mut model,
            &vocab,
            &dataset.examples,
            &dataset.examples,
            &cfg,
            48,
            false,
            |_| {},
        )
        .unwrap();
        let hit = run
            .reports
            .iter()
            .find(|r| r.accuracy_1 >= 0.95 && r.accuracy_2 >= 0.95);
        match hit {
            Some(r) => details.push(format!(
                "residual={residual}: both heads >= 0.95 at epoch {}",
                r.epoch
            )),
            None => {
                ok = false;
                let last = run.reports.last().unwrap();
                details.push(format!(
                    "residual={residual}: never reached (final {:.2}/{:.2})",
                    last.accuracy_1, last.accuracy_2
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(120) {
        ok = false;
        details.push(format!("too slow: {:.1}s", elapsed.as_secs_f64()));
    } else {
        details.push(format!("{:.1}s", elapsed.as_secs_f64()));
    }
    report(4, "overfit smoke on 32-example fixture", ok, &details.join("; "));
}

/// Independent oracle: builds the full confusion matrix, then reads per-class
/// counts out of it. The counting machinery is what this cross-checks; the
/// closed-form per-class F1 is fixed by definition.
mod oracle {
    pub fn confusion(preds: &[usize], labels: &[usize], classes: usize) -> Vec<Vec<u64>> {
        let mut m = vec![vec![0u64; classes]; classes];
        for (&p, &l) in preds.iter().zip(labels) {
            m[l][p] += 1;
        }
        m
    }

    pub fn accuracy(matrix: &[Vec<u64>], n: usize) -> f64 {
        let trace: u64 = (0..matrix.len()).map(|i| matrix[i][i]).sum();
        trace as f64 / n as f64
    }

    pub fn macro_f1(matrix: &[Vec<u64>]) -> f64 {
        let classes = matrix.len();
        let mut total = 0.0;
        for c in 0..classes {
            let tp = matrix[c][c];
            let fp: u64 = (0..classes).filter(|&l| l != c).map(|l| matrix[l][c]).sum();
            let fn_: u64 = (0..classes).filter(|&p| p != c).map(|p| matrix[c][p]).sum();
            let denom = 2 * tp + fp + fn_;
            if denom > 0 {
                total += 2.0 * tp as f64 / denom as f64;
            }
        }
        total / classes as f64
    }
}

#[test]
fn criterion_5_metric_oracle() {
    let mut rng = RngState::new(99);
    let mut ok = true;
    let mut detail = String::new();
    for trial in 0..1000 {
        let classes = 2 + (rng.uniform() * 5.0) as usize; // 2..=6
        let n = 1 + (rng.uniform() * 50.0) as usize;
        let draw = |rng: &mut RngState| (rng.uniform() * classes as f64) as usize;
        let preds: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();
        let labels: Vec<usize> = (0..n).map(|_| draw(&mut rng)).collect();

        let matrix = oracle::confusion(&preds, &labels, classes);
        let got_acc = accuracy(&preds, &labels).unwrap();
        let got_f1 = macro_f1(&preds, &labels, classes).unwrap();
        let want_acc = oracle::accuracy(&matrix, n);
        let want_f1 = oracle::macro_f1(&matrix);
        if got_acc.to_bits() != want_acc.to_bits() || got_f1.to_bits() != want_f1.to_bits() {
            ok = false;
            detail = format!("trial {trial}: impl ({got_acc}, {got_f1}) vs oracle ({want_acc}, {want_f1})");
            break;
        }

    }

    // overall accuracy from a real evaluation is exactly the head mean
    if ok {
        let corpus = ["ek khabar", "do baat", "teen log", "char din"];
        let vocab = Vocab::train(&corpus, 80, 1).unwrap();
        for seed in 0..5u64 {
            let mut init_rng = RngState::stream(900 + seed, 0);
            let model =
                make_task_model(Task::A, EncoderConfig::micro(vocab.len()), false, &mut init_rng)
                    .unwrap();
            let examples: Vec<dualhead::data::LabeledExample> = corpus
                .iter()
                .enumerate()
                .map(|(i, t)| dualhead::data::LabeledExample {
                    id: i.to_string(),
                    text: t.to_string(),
                    label_1: i % 2,
                    label_2: (i / 2) % 2,
                })
                .collect();
            let m = dualhead::train::evaluate(&model, &vocab, &examples, 2, 16).unwrap();
            if m.overall_accuracy.to_bits() != ((m.accuracy_1 + m.accuracy_2) / 2.0).to_bits() {
                ok = false;
                detail = format!("seed {seed}: overall accuracy is not the exact head mean");
                break;
            }
        }
    }
    if ok {
        detail =
            "1000 random sets (2-6 classes) match the confusion-matrix oracle exactly; overall = head mean"
                .to_string();
    }
    report(5, "metric oracle", ok, &detail);
}

#[test]
fn criterion_6_protocol_conformance() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| -> std::path::PathBuf {
        let report_path = dir.path().join(format!("report_{tag}.jsonl"));
        let spec = RunSpec {
            command: CommandKind::Train,
            task: Some(Task::A),
            config: None,
            overrides: vec![
                ("hidden".into(), "32".into()),
                ("layers".into(), "1".into()),
                ("attn_heads".into(), "2".into()),
                ("ffn_dim".into(), "64".into()),
                ("max_len".into(), "48".into()),
                ("vocab_size".into(), "300".into()),
                ("min_freq".into(), "1".into()),
                ("seed".into(), "2024".into()),
                ("train_csv".into(), fixture("task_a_32.csv").display().to_string()),
                ("val_csv".into(), fixture("task_a_32.csv").display().to_string()),
                (
                    "checkpoint_out".into(),
                    dir.path().join(format!("m_{tag}.ckpt")).display().to_string(),
                ),
                (
                    "vocab_out".into(),
                    dir.path().join(format!("v_{tag}.txt")).display().to_string(),
                ),
                ("report_out".into(), report_path.display().to_string()),
            ],
        };
        execute(&spec).expect("training run succeeds");
        report_path
    };
    let first = std::fs::read(run("one")).unwrap();
    let second = std::fs::read(run("two")).unwrap();

    let text = String::from_utf8(first.clone()).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let mut ok = lines.len() == 6;
    let mut details = vec![format!("{} epoch records", lines.len())];
    for (i, line) in lines.iter().enumerate() {
        let rec: dualhead::EpochReport = serde_json::from_str(line).expect("valid record");
        if rec.epoch != i + 1 || !rec.val_loss.is_finite() {
            ok = false;
            details.push(format!("bad record at line {}", i + 1));
        }
    }
    if first != second {
        ok = false;
        details.push("reruns differ".to_string());
    } else {
        details.push("same-seed reruns byte-identical".to_string());
    }
    report(6, "six-epoch protocol with post-epoch validation", ok, &details.join("; "));
}

#[test]
fn criterion_7_padding_invariance() {
    let mut rng = RngState::new(31);
    let enc = {
        let mut init_rng = RngState::stream(8, 0);
        dualhead::encoder::EncoderParams::init(EncoderConfig::micro(40), &mut init_rng).unwrap()
    };
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = 1 + (rng.uniform() * 11.0) as usize;
        let mut row = vec![CLS_ID];
        for _ in 1..len {
            row.push(4 + (rng.uniform() * 36.0) as u32);
        }
        let extra = 1 + (rng.uniform() * 4.0) as usize;
        let make = |width: usize| {
            let mut ids = vec![PAD_ID; width];
            let mut mask = vec![0u8; width];
            ids[..row.len()].copy_from_slice(&row);
            for c in 0..row.len() {
                mask[c] = 1;
            }
            TokenizedBatch {
                ids,
                mask,
                lengths: vec![row.len()],
                rows: 1,
                width,
            }
        };
        let narrow = make(row.len());
        let wide = make((row.len() + extra).min(16));
        let mut eval_rng = RngState::new(0);
        let a = enc.encode_pooled(&narrow, false, &mut eval_rng).unwrap();
        let b = enc.encode_pooled(&wide, false, &mut eval_rng).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            worst = worst.max((x - y).abs());
        }
    }
    let ok = worst <= 1e-10;
    report(
        7,
        "padding invariance of pooled vectors",
        ok,
        &format!("100 sequences, max deviation {worst:.2e}"),
    );
}

#[test]
fn criterion_8_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let mut rng = RngState::stream(91, 0);
    let model = make_task_model(Task::B, EncoderConfig::micro(40), true, &mut rng).unwrap();
    let labels = dualhead::data::LabelVocab::from_names(vec!["none", "low", "medium", "high"]);
    dualhead::checkpoint::save_checkpoint(&model, &labels, &labels, "hash", &path).unwrap();

    let batch = random_batch(&mut rng, 40, 3, 6);
    let mut eval_rng = RngState::new(0);
    let before = model
        .dual_forward(&batch, None, None, false, &mut eval_rng)
        .unwrap();
    let loaded = dualhead::checkpoint::load_checkpoint(&path).unwrap();
    let after = loaded
        .model
        .dual_forward(&batch, None, None, false, &mut eval_rng)
        .unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let mut ok = bits(&before.logits_1) == bits(&after.logits_1)
        && bits(&before.logits_2) == bits(&after.logits_2);
    let mut details = vec!["round-trip logits bit-identical".to_string()];

    // corruption must be rejected outright
    let full = std::fs::read(&path).unwrap();
    let truncated_path = dir.path().join("truncated.ckpt");
    std::fs::write(&truncated_path, &full[..full.len() - 1]).unwrap();
    if dualhead::checkpoint::load_checkpoint(&truncated_path).is_ok() {
        ok = false;
        details.push("truncated file accepted".to_string());
    } else {
        details.push("truncation rejected".to_string());
    }
    report(8, "checkpoint persistence", ok, &details.join("; "));
}

#[test]
fn criterion_9_tokenizer_round_trip() {
    let corpus_text = std::fs::read_to_string(fixture("mixed_corpus.txt")).unwrap();
    let lines: Vec<&str> = corpus_text.lines().collect();
    let mut ok = lines.len() >= 500;
    let mut details = vec![format!("{} corpus lines", lines.len())];
    let vocab = Vocab::train(&lines, 1000, 1).unwrap();
    details.push(format!("{} tokens, {} merges", vocab.len(), vocab.num_merges()));
    let mut failures = 0;
    for line in &lines {
        let batch = vocab.encode(&[*line], 512);
        let row = &batch.row_ids(0)[..batch.lengths[0]];
        if batch.lengths[0] >= 512 {
            failures += 1;
            continue;
        }
        let decoded = vocab.decode(row).unwrap();
        if decoded != normalize(line) {
            failures += 1;
        }
    }
    if failures > 0 {
        ok = false;
        details.push(format!("{failures} lines failed to round-trip"));
    } else {
        details.push("every line round-trips after normalization".to_string());
    }
    report(9, "tokenizer round trip on mixed-script corpus", ok, &details.join("; "));
}
