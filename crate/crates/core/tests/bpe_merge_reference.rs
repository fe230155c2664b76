//! Compares the tokenizer's merge sequence against an independently written
//! reference implementation of pair merging on a fixed fixture slice.
//!
//! The reference mirrors the documented training rules — sorted byte
//! alphabet plus a word-end marker, most-frequent pair first, ties to the
//! lexicographically smallest pair, pairs whose concatenation collides with
//! an existing token are skipped — but is built on different structures
//! (BTreeMaps and symbol tuples instead of the id-based tables).

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use dualhead::tokenizer::{normalize, Vocab};

type Sym = (Vec<u8>, bool);

fn reference_merges(corpus: &[&str], max_merges: usize, min_freq: u64) -> Vec<(Sym, Sym)> {
    let mut word_freq: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for line in corpus {
        for word in normalize(line).split(' ') {
            if !word.is_empty() {
                *word_freq.entry(word.as_bytes().to_vec()).or_insert(0) += 1;
            }
        }
    }
    let eow: Sym = (vec![], true);
    let mut words: Vec<(Vec<Sym>, u64)> = word_freq
        .iter()
        .map(|(bytes, freq)| {
            let mut syms: Vec<Sym> = bytes.iter().map(|&b| (vec![b], false)).collect();
            syms.push(eow.clone());
            (syms, *freq)
        })
        .collect();

    let mut existing: BTreeSet<Sym> = BTreeSet::new();
    existing.insert(eow);
    for (syms, _) in &words {
        for s in syms {
            existing.insert(s.clone());
        }
    }

    let mut banned: BTreeSet<(Sym, Sym)> = BTreeSet::new();
    let mut merges = Vec::new();
    while merges.len() < max_merges {
        let mut counts: BTreeMap<(Sym, Sym), u64> = BTreeMap::new();
        for (syms, freq) in &words {
            for pair in syms.windows(2) {
                *counts
                    .entry((pair[0].clone(), pair[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        // ascending key order, strictly-greater frequency: the winner is the
        // smallest pair among the most frequent
        let mut best: Option<((Sym, Sym), u64)> = None;
        for (pair, &freq) in &counts {
            if banned.contains(pair) {
                continue;
            }
            if best.as_ref().is_none_or(|(_, bf)| freq > *bf) {
                best = Some((pair.clone(), freq));
            }
        }
        let Some((pair, freq)) = best else { break };
        if freq < min_freq.max(1) {
            break;
        }
        let merged: Sym = (
            pair.0
                 .0
                .iter()
                .chain(pair.1 .0.iter())
                .copied()
                .collect(),
            pair.1 .1,
        );
        if existing.contains(&merged) {
            banned.insert(pair);
            continue;
        }
        existing.insert(merged.clone());
        for (syms, _) in &mut words {
            let mut out: Vec<Sym> = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *syms = out;
        }
        merges.push(pair);
    }
    merges
}

#[test]
fn merge_sequence_matches_reference_on_fixture() {
    let corpus_text = std::fs::read_to_string(
        Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/mixed_corpus.txt"),
    )
    .unwrap();
    let lines: Vec<&str> = corpus_text.lines().take(100).collect();
    assert_eq!(lines.len(), 100);

    let probe = Vocab::train(&lines, 100_000, 2).unwrap();
    let base = probe.len() - probe.num_merges();

    for merge_budget in [25usize, 120] {
        let vocab = Vocab::train(&lines, base + merge_budget, 2).unwrap();
        let got = vocab.merge_pairs();
        let want = reference_merges(&lines, merge_budget, 2);
        assert_eq!(
            got.len(),
            want.len(),
            "merge counts differ at budget {merge_budget}"
        );
        for (i, (g, w)) in got.iter().zip(&want).enumerate() {
            assert_eq!(g, w, "merge {i} differs at budget {merge_budget}");
        }
    }
}

#[test]
fn exhausted_corpus_stops_merging_before_budget() {
    let lines = ["ab ab ab", "cd cd"];
    let vocab = Vocab::train(&lines, 10_000, 2).unwrap();
    let reference = reference_merges(&lines, usize::MAX, 2);
    assert_eq!(vocab.merge_pairs(), reference);
    assert!(vocab.len() < 10_000);
}
