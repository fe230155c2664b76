//! Trainable byte-level subword tokenizer.
//!
//! Stands in for a pretrained subword tokenizer while preserving the same
//! architectural contract: UTF-8 text (code-mixed Hindi-English in both
//! scripts) becomes id sequences with a leading `[CLS]`, padding, and an
//! attention mask. The vocabulary is learned by iterative pair merging over
//! bytes, with a word-end marker so decoding can restore word boundaries.
//!
//! Text is NFC-normalized and whitespace-collapsed before tokenization;
//! case is preserved.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use unicode_normalization::UnicodeNormalization;

/// Special token ids are fixed: they always occupy the first four slots.
pub const CLS_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
const NUM_SPECIALS: usize = 4;
const SPECIAL_NAMES: [&str; NUM_SPECIALS] = ["<cls>", "<pad>", "<unk>", "<sep>"];

/// Marker rendered for the word-end symbol in vocabulary files. Outside the
/// visible-byte alphabet, so it can never collide with piece content.
const WORD_END_CHAR: char = '\u{2581}'; // ▁

const VOCAB_FILE_MAGIC: &str = "dualhead-vocab v1";

#[derive(Debug, thiserror::Error)]
pub enum TokenizerError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("vocabulary target {target} too small; specials plus alphabet need {minimum}")]
    TargetTooSmall { target: usize, minimum: usize },
    #[error("unknown token id {id} (vocabulary size {size})")]
    UnknownId { id: u32, size: usize },
    #[error("invalid vocabulary file at line {line}: {reason}")]
    InvalidVocabFile { line: usize, reason: String },
    #[error("vocabulary file i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A subword unit: raw bytes plus whether it closes a word.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Piece {
    bytes: Vec<u8>,
    ends_word: bool,
}

/// Immutable subword vocabulary with ordered merge rules.
#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<Piece>,
    piece_ids: HashMap<Piece, u32>,
    /// Merge rules in creation order: (left id, right id) -> merged id.
    merges: Vec<(u32, u32)>,
    merge_table: HashMap<(u32, u32), (usize, u32)>,
}

/// Padded token-id matrix with attention mask and per-row lengths.
///
/// Row layout: `[CLS] subword-ids... PAD...`. `mask[r][c] == 1` exactly when
/// `c < lengths[r]`; the matrix width never exceeds the `max_len` passed to
/// [`Vocab::encode`].
#[derive(Debug, Clone, PartialEq)]
pub struct TokenizedBatch {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub lengths: Vec<usize>,
    pub rows: usize,
    pub width: usize,
}

impl TokenizedBatch {
    pub fn row_ids(&self, r: usize) -> &[u32] {
        &self.ids[r * self.width..(r + 1) * self.width]
    }

    pub fn row_mask(&self, r: usize) -> &[u8] {
        &self.mask[r * self.width..(r + 1) * self.width]
    }
}

/// NFC normalization plus whitespace collapsing. No case folding: the
/// targeted text mixes scripts and casing carries signal.
pub fn normalize(text: &str) -> String {
    let nfc: String = text.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Maps each byte to a printable character so arbitrary byte pieces remain
/// valid single-line UTF-8 in vocabulary files. Printable latin bytes map to
/// themselves; the rest shift into a contiguous block above U+0100.
fn visible_byte_table() -> &'static ([char; 256], HashMap<char, u8>) {
    static TABLE: OnceLock<([char; 256], HashMap<char, u8>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut forward = ['\0'; 256];
        let mut reverse = HashMap::new();
        let mut shift = 0u32;
        for b in 0u32..256 {
            let printable =
                (0x21..=0x7E).contains(&b) || (0xA1..=0xAC).contains(&b) || (0xAE..=0xFF).contains(&b);
            let c = if printable {
                char::from_u32(b).unwrap()
            } else {
                let c = char::from_u32(0x100 + shift).unwrap();
                shift += 1;
                c
            };
            forward[b as usize] = c;
            reverse.insert(c, b as u8);
        }
        (forward, reverse)
    })
}

impl Piece {
    fn render(&self) -> String {
        let (forward, _) = visible_byte_table();
        let mut s = String::new();
        for &b in &self.bytes {
            s.push(forward[b as usize]);
        }
        if self.ends_word {
            s.push(WORD_END_CHAR);
        }
        s
    }

    fn parse(s: &str) -> Option<Piece> {
        let (_, reverse) = visible_byte_table();
        let mut bytes = Vec::new();
        let mut chars = s.chars().peekable();
        let mut ends_word = false;
        while let Some(c) = chars.next() {
            if c == WORD_END_CHAR && chars.peek().is_none() {
                ends_word = true;
            } else {
                bytes.push(*reverse.get(&c)?);
            }
        }
        Some(Piece { bytes, ends_word })
    }
}

impl Vocab {
    /// Trains a vocabulary by iterative pair merging.
    ///
    /// Starts from the distinct bytes of the corpus plus a word-end marker,
    /// then repeatedly merges the most frequent adjacent pair until the
    /// vocabulary reaches `target_size` or the best pair occurs fewer than
    /// `min_freq` times. Ties break toward the lexicographically smallest
    /// pair, so training is deterministic for a given corpus. A merge whose
    /// byte content collides with an existing entry is skipped, keeping
    /// token strings and ids bijective.
    pub fn train<S: AsRef<str>>(
        corpus: &[S],
        target_size: usize,
        min_freq: u64,
    ) -> Result<Vocab, TokenizerError> {
        // Word frequencies in first-appearance order.
        let mut word_order: Vec<Vec<u8>> = Vec::new();
        let mut word_freq: HashMap<Vec<u8>, u64> = HashMap::new();
        for line in corpus {
            for word in normalize(line.as_ref()).split(' ') {
                if word.is_empty() {
                    continue;
                }
                let bytes = word.as_bytes().to_vec();
                match word_freq.get_mut(&bytes) {
                    Some(f) => *f += 1,
                    None => {
                        word_freq.insert(bytes.clone(), 1);
                        word_order.push(bytes);
                    }
                }
            }
        }
        if word_order.is_empty() {
            return Err(TokenizerError::EmptyCorpus);
        }

        let mut alphabet: Vec<u8> = {
            let mut seen = [false; 256];
            for w in &word_order {
                for &b in w {
                    seen[b as usize] = true;
                }
            }
            (0u16..256).filter(|&b| seen[b as usize]).map(|b| b as u8).collect()
        };
        alphabet.sort_unstable();

        let mut vocab = Vocab {
            pieces: Vec::new(),
            piece_ids: HashMap::new(),
            merges: Vec::new(),
            merge_table: HashMap::new(),
        };
        // Word-end marker first, then single-byte pieces.
        vocab.push_piece(Piece {
            bytes: vec![],
            ends_word: true,
        });
        for &b in &alphabet {
            vocab.push_piece(Piece {
                bytes: vec![b],
                ends_word: false,
            });
        }
        let minimum = NUM_SPECIALS + vocab.pieces.len();
        if target_size < minimum {
            return Err(TokenizerError::TargetTooSmall {
                target: target_size,
                minimum,
            });
        }

        let eow = vocab.piece_ids[&Piece {
            bytes: vec![],
            ends_word: true,
        }];
        let mut words: Vec<(Vec<u32>, u64)> = word_order
            .iter()
            .map(|w| {
                let mut seq: Vec<u32> = w
                    .iter()
                    .map(|&b| {
                        vocab.piece_ids[&Piece {
                            bytes: vec![b],
                            ends_word: false,
                        }]
                    })
                    .collect();
                seq.push(eow);
                (seq, word_freq[w])
            })
            .collect();

        let mut banned: std::collections::HashSet<(u32, u32)> = std::collections::HashSet::new();
        while NUM_SPECIALS + vocab.pieces.len() < target_size {
            let mut counts: HashMap<(u32, u32), u64> = HashMap::new();
            for (seq, freq) in &words {
                for pair in seq.windows(2) {
                    *counts.entry((pair[0], pair[1])).or_insert(0) += freq;
                }
            }
            let mut best: Option<((u32, u32), u64)> = None;
            for (&pair, &freq) in &counts {
                if banned.contains(&pair) {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bp, bf)) => {
                        freq > bf || (freq == bf && vocab.pair_key(pair) < vocab.pair_key(bp))
                    }
                };
                if better {
                    best = Some((pair, freq));
                }
            }
            let Some((pair, freq)) = best else { break };
            if freq < min_freq.max(1) {
                break;
            }
            let merged = vocab.merge_pieces(pair.0, pair.1);
            if vocab.piece_ids.contains_key(&merged) {
                banned.insert(pair);
                continue;
            }
            let merged_id = vocab.push_piece(merged);
            let rank = vocab.merges.len();
            vocab.merges.push((pair.0, pair.1));
            vocab.merge_table.insert(pair, (rank, merged_id));
            for (seq, _) in &mut words {
                merge_in_place(seq, pair, merged_id);
            }
        }
        Ok(vocab)
    }

    fn push_piece(&mut self, piece: Piece) -> u32 {
        let id = (NUM_SPECIALS + self.pieces.len()) as u32;
        self.piece_ids.insert(piece.clone(), id);
        self.pieces.push(piece);
        id
    }

    fn piece(&self, id: u32) -> Option<&Piece> {
        (id as usize)
            .checked_sub(NUM_SPECIALS)
            .and_then(|i| self.pieces.get(i))
    }

    fn pair_key(&self, pair: (u32, u32)) -> (&Piece, &Piece) {
        (
            self.piece(pair.0).expect("pair ids come from live pieces"),
            self.piece(pair.1).expect("pair ids come from live pieces"),
        )
    }

    fn merge_pieces(&self, left: u32, right: u32) -> Piece {
        let l = self.piece(left).expect("left piece exists");
        let r = self.piece(right).expect("right piece exists");
        let mut bytes = l.bytes.clone();
        bytes.extend_from_slice(&r.bytes);
        Piece {
            bytes,
            ends_word: r.ends_word,
        }
    }

    /// Total number of ids, specials included.
    pub fn len(&self) -> usize {
        NUM_SPECIALS + self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn num_merges(&self) -> usize {
        self.merges.len()
    }

    /// Merge rules in creation order as `(bytes, ends_word)` pairs, for
    /// comparison against reference implementations.
    #[allow(clippy::type_complexity)]
    pub fn merge_pairs(&self) -> Vec<((Vec<u8>, bool), (Vec<u8>, bool))> {
        self.merges
            .iter()
            .map(|&(l, r)| {
                let lp = self.piece(l).expect("merge parent exists");
                let rp = self.piece(r).expect("merge parent exists");
                (
                    (lp.bytes.clone(), lp.ends_word),
                    (rp.bytes.clone(), rp.ends_word),
                )
            })
            .collect()
    }

    /// True when `word` tokenizes to one single piece.
    pub fn contains_word(&self, word: &str) -> bool {
        self.piece_ids.contains_key(&Piece {
            bytes: normalize(word).into_bytes(),
            ends_word: true,
        })
    }

    /// Subword ids for one normalized word (no specials).
    fn word_ids(&self, word: &str) -> Vec<u32> {
        let mut seq: Vec<u32> = Vec::with_capacity(word.len() + 1);
        for &b in word.as_bytes() {
            match self.piece_ids.get(&Piece {
                bytes: vec![b],
                ends_word: false,
            }) {
                Some(&id) => seq.push(id),
                None => seq.push(UNK_ID),
            }
        }
        seq.push(
            self.piece_ids[&Piece {
                bytes: vec![],
                ends_word: true,
            }],
        );
        // Apply merges lowest-rank first until none fit.
        loop {
            let mut best: Option<(usize, u32, (u32, u32))> = None;
            for pair in seq.windows(2) {
                if let Some(&(rank, merged)) = self.merge_table.get(&(pair[0], pair[1])) {
                    if best.is_none_or(|(r, _, _)| rank < r) {
                        best = Some((rank, merged, (pair[0], pair[1])));
                    }
                }
            }
            let Some((_, merged, pair)) = best else {
                return seq;
            };
            merge_in_place(&mut seq, pair, merged);
        }
    }

    /// Token ids for one text, without `[CLS]` or padding.
    pub fn text_ids(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in normalize(text).split(' ') {
            if word.is_empty() {
                continue;
            }
            out.extend(self.word_ids(word));
        }
        out
    }

    /// Encodes texts into a padded batch: each row is `[CLS]` + subword ids
    /// truncated to `max_len - 1`, padded with `PAD` to the longest row.
    pub fn encode<S: AsRef<str>>(&self, texts: &[S], max_len: usize) -> TokenizedBatch {
        assert!(max_len >= 2, "max_len must be at least 2");
        let rows_ids: Vec<Vec<u32>> = texts
            .iter()
            .map(|t| {
                let mut row = vec![CLS_ID];
                let body = self.text_ids(t.as_ref());
                let take = body.len().min(max_len - 1);
                row.extend_from_slice(&body[..take]);
                row
            })
            .collect();
        let width = rows_ids.iter().map(Vec::len).max().unwrap_or(0);
        let rows = rows_ids.len();
        let mut ids = vec![PAD_ID; rows * width];
        let mut mask = vec![0u8; rows * width];
        let mut lengths = vec![0usize; rows];
        for (r, row) in rows_ids.iter().enumerate() {
            lengths[r] = row.len();
            ids[r * width..r * width + row.len()].copy_from_slice(row);
            for c in 0..row.len() {
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

    /// Inverse of `encode` up to whitespace normalization. Special ids are
    /// dropped; ids beyond the vocabulary are an error.
    pub fn decode(&self, ids: &[u32]) -> Result<String, TokenizerError> {
        let mut bytes: Vec<u8> = Vec::new();
        for &id in ids {
            if (id as usize) >= self.len() {
                return Err(TokenizerError::UnknownId {
                    id,
                    size: self.len(),
                });
            }
            if (id as usize) < NUM_SPECIALS {
                continue;
            }
            let piece = self.piece(id).expect("bounds checked");
            bytes.extend_from_slice(&piece.bytes);
            if piece.ends_word {
                bytes.push(b' ');
            }
        }
        let text = String::from_utf8_lossy(&bytes).into_owned();
        Ok(text.trim_end().to_string())
    }

    // ---- persistence ----------------------------------------------------

    /// Serializes the vocabulary: a header line carrying the special-token
    /// ids, then one token per line where the line number (counted after the
    /// header) is the id. Merged tokens are written as their two parent
    /// tokens separated by a tab, which both defines the token (the
    /// concatenation) and preserves the merge rule order.
    pub fn to_file_string(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{VOCAB_FILE_MAGIC} cls={CLS_ID} pad={PAD_ID} unk={UNK_ID} sep={SEP_ID}"
        );
        for name in SPECIAL_NAMES {
            let _ = writeln!(out, "{name}");
        }
        let merged_start = self.pieces.len() - self.merges.len();
        for (i, piece) in self.pieces.iter().enumerate() {
            if i < merged_start {
                let _ = writeln!(out, "{}", piece.render());
            } else {
                let (l, r) = self.merges[i - merged_start];
                let _ = writeln!(
                    out,
                    "{}\t{}",
                    self.piece(l).expect("merge parent exists").render(),
                    self.piece(r).expect("merge parent exists").render()
                );
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), TokenizerError> {
        std::fs::write(path, self.to_file_string())?;
        Ok(())
    }

    pub fn from_file_string(content: &str) -> Result<Vocab, TokenizerError> {
        let bad = |line: usize, reason: &str| TokenizerError::InvalidVocabFile {
            line,
            reason: reason.to_string(),
        };
        let mut lines = content.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| bad(1, "empty file"))?;
        let expected_header =
            format!("{VOCAB_FILE_MAGIC} cls={CLS_ID} pad={PAD_ID} unk={UNK_ID} sep={SEP_ID}");
        if header != expected_header {
            return Err(bad(1, "unrecognized header"));
        }
        let mut vocab = Vocab {
            pieces: Vec::new(),
            piece_ids: HashMap::new(),
            merges: Vec::new(),
            merge_table: HashMap::new(),
        };
        let mut specials_seen = 0usize;
        for (idx, line) in lines {
            let line_no = idx + 1;
            if specials_seen < NUM_SPECIALS {
                if line != SPECIAL_NAMES[specials_seen] {
                    return Err(bad(line_no, "special tokens out of order"));
                }
                specials_seen += 1;
                continue;
            }
            if let Some((left, right)) = line.split_once('\t') {
                let lp = Piece::parse(left).ok_or_else(|| bad(line_no, "bad left token"))?;
                let rp = Piece::parse(right).ok_or_else(|| bad(line_no, "bad right token"))?;
                let &lid = vocab
                    .piece_ids
                    .get(&lp)
                    .ok_or_else(|| bad(line_no, "left parent not yet defined"))?;
                let &rid = vocab
                    .piece_ids
                    .get(&rp)
                    .ok_or_else(|| bad(line_no, "right parent not yet defined"))?;
                let merged = vocab.merge_pieces(lid, rid);
                if vocab.piece_ids.contains_key(&merged) {
                    return Err(bad(line_no, "duplicate token"));
                }
                let merged_id = vocab.push_piece(merged);
                let rank = vocab.merges.len();
                vocab.merges.push((lid, rid));
                vocab.merge_table.insert((lid, rid), (rank, merged_id));
            } else {
                if !vocab.merges.is_empty() {
                    return Err(bad(line_no, "literal token after merged tokens"));
                }
                let piece = Piece::parse(line).ok_or_else(|| bad(line_no, "bad token"))?;
                if vocab.piece_ids.contains_key(&piece) {
                    return Err(bad(line_no, "duplicate token"));
                }
                vocab.push_piece(piece);
            }
        }
        if specials_seen < NUM_SPECIALS || vocab.pieces.is_empty() {
            return Err(bad(0, "vocabulary incomplete"));
        }
        Ok(vocab)
    }

    pub fn load(path: &Path) -> Result<Vocab, TokenizerError> {
        let content = std::fs::read_to_string(path)?;
        Vocab::from_file_string(&content)
    }
}

fn merge_in_place(seq: &mut Vec<u32>, pair: (u32, u32), merged: u32) {
    let mut write = 0;
    let mut read = 0;
    while read < seq.len() {
        if read + 1 < seq.len() && seq[read] == pair.0 && seq[read + 1] == pair.1 {
            seq[write] = merged;
            read += 2;
        } else {
            seq[write] = seq[read];
            read += 1;
        }
        write += 1;
    }
    seq.truncate(write);
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lines(text: &str) -> Vec<String> {
        text.lines().map(|l| l.to_string()).collect()
    }

    #[test]
    fn repeated_word_becomes_single_token() {
        let corpus = lines("chai chai chai\nchai chai");
        let vocab = Vocab::train(&corpus, 64, 1).unwrap();
        assert!(vocab.contains_word("chai"));
        let ids = vocab.text_ids("chai");
        assert_eq!(ids.len(), 1, "fully merged word should be one id");
    }

    #[test]
    fn zero_budget_means_zero_merges() {
        let corpus = lines("abc abc cab");
        let full = Vocab::train(&corpus, 999, 1).unwrap();
        let base = full.len() - full.num_merges();
        let tight = Vocab::train(&corpus, base, 1).unwrap();
        assert_eq!(tight.num_merges(), 0);
        assert_eq!(tight.len(), base);
        assert!(matches!(
            Vocab::train(&corpus, base - 1, 1),
            Err(TokenizerError::TargetTooSmall { .. })
        ));
    }

    #[test]
    fn empty_corpus_is_an_error() {
        let corpus: Vec<String> = vec!["   ".to_string()];
        assert!(matches!(
            Vocab::train(&corpus, 100, 1),
            Err(TokenizerError::EmptyCorpus)
        ));
    }

    #[test]
    fn encode_empty_string_is_cls_only() {
        let vocab = Vocab::train(&lines("kuch text"), 64, 1).unwrap();
        let batch = vocab.encode(&[""], 16);
        assert_eq!(batch.lengths, vec![1]);
        assert_eq!(batch.row_ids(0)[0], CLS_ID);
        assert!(batch.row_mask(0).iter().skip(1).all(|&m| m == 0));
    }

    #[test]
    fn long_text_truncates_to_max_len() {
        let vocab = Vocab::train(&lines("a b c d"), 300, 1).unwrap();
        let text = "a b c d a b c d a b c d a b c d";
        let batch = vocab.encode(&[text], 6);
        assert_eq!(batch.width, 6);
        assert_eq!(batch.lengths, vec![6]);
        assert!(batch.row_mask(0).iter().all(|&m| m == 1));
        assert_eq!(batch.row_ids(0)[0], CLS_ID);
    }

    #[test]
    fn every_row_starts_with_cls_and_padding_is_pad() {
        let vocab = Vocab::train(&lines("namaste duniya\nhello world"), 300, 1).unwrap();
        let batch = vocab.encode(&["namaste", "hello world hello"], 32);
        for r in 0..batch.rows {
            assert_eq!(batch.row_ids(r)[0], CLS_ID);
            for c in 0..batch.width {
                let real = c < batch.lengths[r];
                assert_eq!(batch.row_mask(r)[c] == 1, real);
                if !real {
                    assert_eq!(batch.row_ids(r)[c], PAD_ID);
                }
            }
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let corpus = lines("yeh ek mixed si corpus hai\nthis is a test");
        let vocab = Vocab::train(&corpus, 128, 1).unwrap();
        let a = vocab.encode(&["yeh test hai"], 16);
        let b = vocab.encode(&["yeh test hai"], 16);
        assert_eq!(a, b);
    }

    #[test]
    fn decode_drops_specials() {
        let vocab = Vocab::train(&lines("a b"), 64, 1).unwrap();
        assert_eq!(vocab.decode(&[CLS_ID, PAD_ID]).unwrap(), "");
        assert!(matches!(
            vocab.decode(&[9999]),
            Err(TokenizerError::UnknownId { id: 9999, .. })
        ));
    }

    #[test]
    fn mixed_script_round_trip() {
        let corpus = lines("यह fake खबर hai\nbura mat बोलो\nयह सच hai really");
        let vocab = Vocab::train(&corpus, 400, 1).unwrap();
        for text in ["यह fake खबर hai", "bura mat बोलो", "  यह   सच hai  "] {
            let batch = vocab.encode(&[text], 64);
            let row = &batch.row_ids(0)[..batch.lengths[0]];
            let decoded = vocab.decode(row).unwrap();
            assert_eq!(decoded, normalize(text));
        }
    }

    #[test]
    fn unknown_bytes_map_to_unk() {
        let vocab = Vocab::train(&lines("plain ascii only"), 128, 1).unwrap();
        let ids = vocab.text_ids("καλημέρα");
        assert!(ids.contains(&UNK_ID));
        // decode stays total: unk is dropped like other specials
        let _ = vocab.decode(&ids).unwrap();
    }

    #[test]
    fn vocab_file_round_trip_preserves_encoding() {
        let corpus = lines("milawat वाली khabar mat failao\nsach bolo sach सुनो\nyeh news acchi hai");
        let vocab = Vocab::train(&corpus, 200, 1).unwrap();
        let content = vocab.to_file_string();
        let reloaded = Vocab::from_file_string(&content).unwrap();
        assert_eq!(reloaded.len(), vocab.len());
        assert_eq!(reloaded.num_merges(), vocab.num_merges());
        for line in &corpus {
            assert_eq!(
                vocab.encode(&[line.as_str()], 64),
                reloaded.encode(&[line.as_str()], 64)
            );
        }
        assert_eq!(content, reloaded.to_file_string());
    }

    #[test]
    fn vocab_file_rejects_garbage() {
        assert!(Vocab::from_file_string("not a vocab\n").is_err());
        let vocab = Vocab::train(&lines("ab ab"), 64, 1).unwrap();
        let mut content = vocab.to_file_string();
        content.push_str("zz\tzz\n");
        assert!(matches!(
            Vocab::from_file_string(&content),
            Err(TokenizerError::InvalidVocabFile { .. })
        ));
    }
}
