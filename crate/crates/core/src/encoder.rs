//! Transformer encoder producing the pooled `[CLS]` representation.
//!
//! Learned absolute positional embeddings, post-norm layers (attention +
//! residual + LayerNorm, then GELU feed-forward + residual + LayerNorm),
//! and key masking of padded positions with an additive `-1e30` bias before
//! the attention softmax. Pooling extracts the raw position-0 hidden state,
//! then applies the pooled-output dropout shared by the classification
//! heads. Trains from scratch; there is no pretrained-checkpoint import.

use crate::numerics::{NumericsError, RngState, Tape, Tensor, Var};
use crate::tokenizer::TokenizedBatch;

/// Additive pre-softmax bias for masked keys. Large enough that masked
/// probabilities underflow to exactly zero, which makes padding invariance
/// bit-exact rather than approximate.
const MASK_BIAS: f64 = -1e30;

/// Standard deviation for truncated-normal weight init.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, thiserror::Error)]
pub enum EncoderError {
    #[error("invalid encoder config: {reason}")]
    InvalidConfig { reason: String },
    #[error("sequence length {len} exceeds max positions {max}")]
    PositionOverflow { len: usize, max: usize },
    #[error("token id {id} outside vocabulary of size {vocab}")]
    TokenOutOfRange { id: u32, vocab: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Architecture hyperparameters of the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden: usize,
    pub layers: usize,
    pub attn_heads: usize,
    pub ffn_dim: usize,
    pub max_positions: usize,
    pub pooled_dropout_p: f64,
}

impl EncoderConfig {
    /// Full-size profile: hidden 768 with the layer/head counts conventional
    /// for that encoder family, pooled dropout 0.1.
    pub fn base(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 768,
            layers: 12,
            attn_heads: 12,
            ffn_dim: 3072,
            max_positions: 512,
            pooled_dropout_p: 0.1,
        }
    }

    /// Desk-scale profile used by the bundled fixtures and fast tests.
    pub fn tiny(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 64,
            layers: 2,
            attn_heads: 4,
            ffn_dim: 256,
            max_positions: 128,
            pooled_dropout_p: 0.1,
        }
    }

    /// Smallest profile that still exercises every code path; sized so the
    /// full-model finite-difference sweep finishes in seconds.
    pub fn micro(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            hidden: 16,
            layers: 2,
            attn_heads: 2,
            ffn_dim: 32,
            max_positions: 16,
            pooled_dropout_p: 0.1,
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        let fail = |reason: String| Err(EncoderError::InvalidConfig { reason });
        if self.vocab_size == 0
            || self.hidden == 0
            || self.layers == 0
            || self.attn_heads == 0
            || self.ffn_dim == 0
            || self.max_positions == 0
        {
            return fail("all extents must be positive".to_string());
        }
        if self.hidden % self.attn_heads != 0 {
            return fail(format!(
                "hidden {} not divisible by attn_heads {}",
                self.hidden, self.attn_heads
            ));
        }
        if !(0.0..1.0).contains(&self.pooled_dropout_p) {
            return fail(format!(
                "pooled_dropout_p {} outside [0, 1)",
                self.pooled_dropout_p
            ));
        }
        Ok(())
    }
}

/// One encoder layer: attention projections, post-attention LayerNorm,
/// feed-forward pair, post-FFN LayerNorm.
#[derive(Debug, Clone)]
pub struct LayerParams {
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub attn_ln_gain: Tensor,
    pub attn_ln_bias: Tensor,
    pub ffn_w1: Tensor,
    pub ffn_b1: Tensor,
    pub ffn_w2: Tensor,
    pub ffn_b2: Tensor,
    pub ffn_ln_gain: Tensor,
    pub ffn_ln_bias: Tensor,
}

pub struct LayerVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
    pub attn_ln_gain: Var,
    pub attn_ln_bias: Var,
    pub ffn_w1: Var,
    pub ffn_b1: Var,
    pub ffn_w2: Var,
    pub ffn_b2: Var,
    pub ffn_ln_gain: Var,
    pub ffn_ln_bias: Var,
}

/// All encoder parameters plus the config they are shaped by.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub token_embedding: Tensor,
    pub position_embedding: Tensor,
    pub layers: Vec<LayerParams>,
}

pub struct EncoderVars {
    pub token_embedding: Var,
    pub position_embedding: Var,
    pub layers: Vec<LayerVars>,
}

/// Attention probabilities captured during a forward pass, one tensor of
/// shape `[batch*heads, len, len]` per layer. Test instrumentation.
#[derive(Debug, Default)]
pub struct EncoderTrace {
    pub attention: Vec<Tensor>,
}

fn weight(shape: Vec<usize>, rng: &mut RngState) -> Tensor {
    Tensor::randn_truncated(shape, INIT_STD, rng).requires_grad(true)
}

fn zeros(shape: Vec<usize>) -> Tensor {
    Tensor::zeros(shape).requires_grad(true)
}

fn ones(shape: Vec<usize>) -> Tensor {
    Tensor::ones(shape).requires_grad(true)
}

impl LayerParams {
    fn init(cfg: &EncoderConfig, rng: &mut RngState) -> Self {
        let h = cfg.hidden;
        let f = cfg.ffn_dim;
        LayerParams {
            wq: weight(vec![h, h], rng),
            bq: zeros(vec![h]),
            wk: weight(vec![h, h], rng),
            bk: zeros(vec![h]),
            wv: weight(vec![h, h], rng),
            bv: zeros(vec![h]),
            wo: weight(vec![h, h], rng),
            bo: zeros(vec![h]),
            attn_ln_gain: ones(vec![h]),
            attn_ln_bias: zeros(vec![h]),
            ffn_w1: weight(vec![h, f], rng),
            ffn_b1: zeros(vec![f]),
            ffn_w2: weight(vec![f, h], rng),
            ffn_b2: zeros(vec![h]),
            ffn_ln_gain: ones(vec![h]),
            ffn_ln_bias: zeros(vec![h]),
        }
    }

    // Field order here is the canonical parameter order; `visit`,
    // `visit_mut`, `register`, and `vars_from_iter` must all agree with it.
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.wq"), &self.wq);
        f(format!("{prefix}.bq"), &self.bq);
        f(format!("{prefix}.wk"), &self.wk);
        f(format!("{prefix}.bk"), &self.bk);
        f(format!("{prefix}.wv"), &self.wv);
        f(format!("{prefix}.bv"), &self.bv);
        f(format!("{prefix}.wo"), &self.wo);
        f(format!("{prefix}.bo"), &self.bo);
        f(format!("{prefix}.attn_ln_gain"), &self.attn_ln_gain);
        f(format!("{prefix}.attn_ln_bias"), &self.attn_ln_bias);
        f(format!("{prefix}.ffn_w1"), &self.ffn_w1);
        f(format!("{prefix}.ffn_b1"), &self.ffn_b1);
        f(format!("{prefix}.ffn_w2"), &self.ffn_w2);
        f(format!("{prefix}.ffn_b2"), &self.ffn_b2);
        f(format!("{prefix}.ffn_ln_gain"), &self.ffn_ln_gain);
        f(format!("{prefix}.ffn_ln_bias"), &self.ffn_ln_bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.wq"), &mut self.wq);
        f(format!("{prefix}.bq"), &mut self.bq);
        f(format!("{prefix}.wk"), &mut self.wk);
        f(format!("{prefix}.bk"), &mut self.bk);
        f(format!("{prefix}.wv"), &mut self.wv);
        f(format!("{prefix}.bv"), &mut self.bv);
        f(format!("{prefix}.wo"), &mut self.wo);
        f(format!("{prefix}.bo"), &mut self.bo);
        f(format!("{prefix}.attn_ln_gain"), &mut self.attn_ln_gain);
        f(format!("{prefix}.attn_ln_bias"), &mut self.attn_ln_bias);
        f(format!("{prefix}.ffn_w1"), &mut self.ffn_w1);
        f(format!("{prefix}.ffn_b1"), &mut self.ffn_b1);
        f(format!("{prefix}.ffn_w2"), &mut self.ffn_w2);
        f(format!("{prefix}.ffn_b2"), &mut self.ffn_b2);
        f(format!("{prefix}.ffn_ln_gain"), &mut self.ffn_ln_gain);
        f(format!("{prefix}.ffn_ln_bias"), &mut self.ffn_ln_bias);
    }

    fn register(&self, tape: &mut Tape) -> LayerVars {
        LayerVars {
            wq: tape.leaf(&self.wq),
            bq: tape.leaf(&self.bq),
            wk: tape.leaf(&self.wk),
            bk: tape.leaf(&self.bk),
            wv: tape.leaf(&self.wv),
            bv: tape.leaf(&self.bv),
            wo: tape.leaf(&self.wo),
            bo: tape.leaf(&self.bo),
            attn_ln_gain: tape.leaf(&self.attn_ln_gain),
            attn_ln_bias: tape.leaf(&self.attn_ln_bias),
            ffn_w1: tape.leaf(&self.ffn_w1),
            ffn_b1: tape.leaf(&self.ffn_b1),
            ffn_w2: tape.leaf(&self.ffn_w2),
            ffn_b2: tape.leaf(&self.ffn_b2),
            ffn_ln_gain: tape.leaf(&self.ffn_ln_gain),
            ffn_ln_bias: tape.leaf(&self.ffn_ln_bias),
        }
    }

    fn vars_from_iter(it: &mut impl Iterator<Item = Var>) -> LayerVars {
        let mut next = || it.next().expect("var list shorter than parameter list");
        LayerVars {
            wq: next(),
            bq: next(),
            wk: next(),
            bk: next(),
            wv: next(),
            bv: next(),
            wo: next(),
            bo: next(),
            attn_ln_gain: next(),
            attn_ln_bias: next(),
            ffn_w1: next(),
            ffn_b1: next(),
            ffn_w2: next(),
            ffn_b2: next(),
            ffn_ln_gain: next(),
            ffn_ln_bias: next(),
        }
    }
}

impl EncoderParams {
    pub fn init(config: EncoderConfig, rng: &mut RngState) -> Result<Self, EncoderError> {
        config.validate()?;
        let token_embedding = weight(vec![config.vocab_size, config.hidden], rng);
        let position_embedding = weight(vec![config.max_positions, config.hidden], rng);
        let layers = (0..config.layers)
            .map(|_| LayerParams::init(&config, rng))
            .collect();
        Ok(EncoderParams {
            config,
            token_embedding,
            position_embedding,
            layers,
        })
    }

    /// All-zero parameters with the right shapes; checkpoint loading fills
    /// them in afterwards.
    pub fn zeroed(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        let h = config.hidden;
        let f = config.ffn_dim;
        let layer = || LayerParams {
            wq: zeros(vec![h, h]),
            bq: zeros(vec![h]),
            wk: zeros(vec![h, h]),
            bk: zeros(vec![h]),
            wv: zeros(vec![h, h]),
            bv: zeros(vec![h]),
            wo: zeros(vec![h, h]),
            bo: zeros(vec![h]),
            attn_ln_gain: zeros(vec![h]),
            attn_ln_bias: zeros(vec![h]),
            ffn_w1: zeros(vec![h, f]),
            ffn_b1: zeros(vec![f]),
            ffn_w2: zeros(vec![f, h]),
            ffn_b2: zeros(vec![h]),
            ffn_ln_gain: zeros(vec![h]),
            ffn_ln_bias: zeros(vec![h]),
        };
        Ok(EncoderParams {
            token_embedding: zeros(vec![config.vocab_size, h]),
            position_embedding: zeros(vec![config.max_positions, h]),
            layers: (0..config.layers).map(|_| layer()).collect(),
            config,
        })
    }

    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        f("encoder.token_embedding".to_string(), &self.token_embedding);
        f(
            "encoder.position_embedding".to_string(),
            &self.position_embedding,
        );
        for (i, layer) in self.layers.iter().enumerate() {
            layer.visit(&format!("encoder.layer{i}"), f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(
            "encoder.token_embedding".to_string(),
            &mut self.token_embedding,
        );
        f(
            "encoder.position_embedding".to_string(),
            &mut self.position_embedding,
        );
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.visit_mut(&format!("encoder.layer{i}"), f);
        }
    }

    pub fn register(&self, tape: &mut Tape) -> EncoderVars {
        EncoderVars {
            token_embedding: tape.leaf(&self.token_embedding),
            position_embedding: tape.leaf(&self.position_embedding),
            layers: self.layers.iter().map(|l| l.register(tape)).collect(),
        }
    }

    pub fn vars_from_iter(&self, it: &mut impl Iterator<Item = Var>) -> EncoderVars {
        EncoderVars {
            token_embedding: it.next().expect("missing token embedding var"),
            position_embedding: it.next().expect("missing position embedding var"),
            layers: self
                .layers
                .iter()
                .map(|_| LayerParams::vars_from_iter(it))
                .collect(),
        }
    }

    fn check_batch(&self, batch: &TokenizedBatch) -> Result<(), EncoderError> {
        if batch.width > self.config.max_positions {
            return Err(EncoderError::PositionOverflow {
                len: batch.width,
                max: self.config.max_positions,
            });
        }
        for &id in &batch.ids {
            if id as usize >= self.config.vocab_size {
                return Err(EncoderError::TokenOutOfRange {
                    id,
                    vocab: self.config.vocab_size,
                });
            }
        }
        Ok(())
    }

    /// Token embedding plus positional embedding, `[b, len, hidden]`.
    pub fn embed(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        batch: &TokenizedBatch,
    ) -> Result<Var, EncoderError> {
        self.check_batch(batch)?;
        let ids: Vec<usize> = batch.ids.iter().map(|&i| i as usize).collect();
        let tok = tape.embed_lookup(vars.token_embedding, &ids, &[batch.rows, batch.width])?;
        let pos = tape.slice_rows(vars.position_embedding, 0, batch.width)?;
        Ok(tape.add_rows(tok, pos)?)
    }

    /// Additive pre-softmax mask, `[b*heads, len, len]`: zero over real keys,
    /// `MASK_BIAS` over padding.
    fn mask_bias(&self, tape: &mut Tape, batch: &TokenizedBatch) -> Result<Var, NumericsError> {
        let heads = self.config.attn_heads;
        let (b, l) = (batch.rows, batch.width);
        let mut data = vec![0.0; b * heads * l * l];
        for bi in 0..b {
            for key in 0..l {
                if batch.mask[bi * l + key] == 1 {
                    continue;
                }
                for h in 0..heads {
                    let slab = (bi * heads + h) * l * l;
                    for q in 0..l {
                        data[slab + q * l + key] = MASK_BIAS;
                    }
                }
            }
        }
        tape.constant_from(vec![b * heads, l, l], data)
    }

    /// One post-norm encoder layer over `x: [b, len, hidden]`.
    pub fn layer_forward(
        &self,
        tape: &mut Tape,
        layer: &LayerVars,
        x: Var,
        mask_bias: Var,
        trace: Option<&mut EncoderTrace>,
    ) -> Result<Var, EncoderError> {
        let dims = tape.shape(x).to_vec();
        let (b, l, h) = (dims[0], dims[1], dims[2]);
        let heads = self.config.attn_heads;
        let dk = h / heads;

        let flat = tape.reshape(x, vec![b * l, h])?;
        let split = |tape: &mut Tape, w, bias| -> Result<Var, NumericsError> {
            let proj = tape.matmul(flat, w)?;
            let proj = tape.add_bias(proj, bias)?;
            let four = tape.reshape(proj, vec![b, l, heads, dk])?;
            let swapped = tape.permute(four, &[0, 2, 1, 3])?;
            tape.reshape(swapped, vec![b * heads, l, dk])
        };
        let q = split(tape, layer.wq, layer.bq)?;
        let k = split(tape, layer.wk, layer.bk)?;
        let v = split(tape, layer.wv, layer.bv)?;

        let scores = tape.batch_matmul(q, k, true)?;
        let scaled = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
        let masked = tape.add(scaled, mask_bias)?;
        let probs = tape.softmax_last_dim(masked)?;
        if let Some(trace) = trace {
            trace.attention.push(tape.to_tensor(probs));
        }
        let ctx = tape.batch_matmul(probs, v, false)?;
        let four = tape.reshape(ctx, vec![b, heads, l, dk])?;
        let swapped = tape.permute(four, &[0, 2, 1, 3])?;
        let merged = tape.reshape(swapped, vec![b * l, h])?;
        let attn_out = tape.matmul(merged, layer.wo)?;
        let attn_out = tape.add_bias(attn_out, layer.bo)?;

        let post_attn = tape.add(flat, attn_out)?;
        let normed = tape.layer_norm(post_attn, layer.attn_ln_gain, layer.attn_ln_bias, 1e-5)?;

        let ff = tape.matmul(normed, layer.ffn_w1)?;
        let ff = tape.add_bias(ff, layer.ffn_b1)?;
        let ff = tape.gelu(ff)?;
        let ff = tape.matmul(ff, layer.ffn_w2)?;
        let ff = tape.add_bias(ff, layer.ffn_b2)?;
        let post_ffn = tape.add(normed, ff)?;
        let out = tape.layer_norm(post_ffn, layer.ffn_ln_gain, layer.ffn_ln_bias, 1e-5)?;
        Ok(tape.reshape(out, vec![b, l, h])?)
    }

    /// Full forward pass to the pooled `[CLS]` vector, `[b, hidden]`, with
    /// pooled-output dropout applied in training mode. This dropout is the
    /// shared one upstream of both classification heads.
    pub fn forward_pooled(
        &self,
        tape: &mut Tape,
        vars: &EncoderVars,
        batch: &TokenizedBatch,
        training: bool,
        rng: &mut RngState,
        mut trace: Option<&mut EncoderTrace>,
    ) -> Result<Var, EncoderError> {
        let mut x = self.embed(tape, vars, batch)?;
        let mask = self.mask_bias(tape, batch)?;
        for layer in &vars.layers {
            x = self.layer_forward(tape, layer, x, mask, trace.as_deref_mut())?;
        }
        let pooled = tape.select_position(x, 0)?;
        Ok(tape.dropout(pooled, self.config.pooled_dropout_p, training, rng)?)
    }

    /// Convenience wrapper running a standalone pooled forward pass.
    pub fn encode_pooled(
        &self,
        batch: &TokenizedBatch,
        training: bool,
        rng: &mut RngState,
    ) -> Result<Tensor, EncoderError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let pooled = self.forward_pooled(&mut tape, &vars, batch, training, rng, None)?;
        Ok(tape.to_tensor(pooled))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS_ID, PAD_ID};

    fn test_batch(rows: Vec<Vec<u32>>, width: usize) -> TokenizedBatch {
        let n = rows.len();
        let mut ids = vec![PAD_ID; n * width];
        let mut mask = vec![0u8; n * width];
        let mut lengths = Vec::new();
        for (r, row) in rows.iter().enumerate() {
            lengths.push(row.len());
            for (c, &id) in row.iter().enumerate() {
                ids[r * width + c] = id;
                mask[r * width + c] = 1;
            }
        }
        TokenizedBatch {
            ids,
            mask,
            lengths,
            rows: n,
            width,
        }
    }

    fn micro_encoder(seed: u64) -> EncoderParams {
        let mut rng = RngState::stream(seed, 0);
        EncoderParams::init(EncoderConfig::micro(12), &mut rng).unwrap()
    }

    #[test]
    fn embed_is_token_plus_position() {
        let mut enc = micro_encoder(1);
        let h = enc.config.hidden;
        // zero token table isolates the positional component
        for v in enc.token_embedding.data_mut() {
            *v = 0.0;
        }
        let batch = test_batch(vec![vec![CLS_ID, 5, 5]], 3);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let out = enc.embed(&mut tape, &vars, &batch).unwrap();
        assert_eq!(tape.shape(out), &[1, 3, h]);
        let pos = enc.position_embedding.data();
        assert_eq!(&tape.value(out)[..3 * h], &pos[..3 * h]);
    }

    #[test]
    fn same_token_rows_differ_by_position_embedding() {
        let enc = micro_encoder(2);
        let h = enc.config.hidden;
        let batch = test_batch(vec![vec![7, 7]], 2);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let out = enc.embed(&mut tape, &vars, &batch).unwrap();
        let v = tape.value(out);
        let pos = enc.position_embedding.data();
        for j in 0..h {
            let diff = v[h + j] - v[j];
            let expected = pos[h + j] - pos[j];
            assert!((diff - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn embed_shape_contract() {
        let enc = micro_encoder(3);
        let batch = test_batch(vec![vec![1; 7], vec![2; 7]], 7);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let out = enc.embed(&mut tape, &vars, &batch).unwrap();
        assert_eq!(tape.shape(out), &[2, 7, enc.config.hidden]);
    }

    #[test]
    fn embed_rejects_position_overflow_and_bad_ids() {
        let enc = micro_encoder(4);
        let too_long = test_batch(vec![vec![1; 17]], 17);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        assert!(matches!(
            enc.embed(&mut tape, &vars, &too_long),
            Err(EncoderError::PositionOverflow { len: 17, max: 16 })
        ));
        let bad_id = test_batch(vec![vec![99]], 1);
        assert!(matches!(
            enc.embed(&mut tape, &vars, &bad_id),
            Err(EncoderError::TokenOutOfRange { id: 99, .. })
        ));
    }

    #[test]
    fn attention_rows_sum_to_one_and_padding_gets_zero_weight() {
        let enc = micro_encoder(5);
        let batch = test_batch(vec![vec![0, 4, 9], vec![0, 7]], 3);
        let mut rng = RngState::new(0);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let mut trace = EncoderTrace::default();
        enc.forward_pooled(&mut tape, &vars, &batch, false, &mut rng, Some(&mut trace))
            .unwrap();
        assert_eq!(trace.attention.len(), enc.config.layers);
        let heads = enc.config.attn_heads;
        for probs in &trace.attention {
            assert_eq!(probs.shape(), &[2 * heads, 3, 3]);
            for bi in 0..2 {
                for h in 0..heads {
                    for q in 0..3 {
                        let base = ((bi * heads + h) * 3 + q) * 3;
                        let row = &probs.data()[base..base + 3];
                        let sum: f64 = row.iter().sum();
                        assert!((sum - 1.0).abs() < 1e-12, "row sums to {sum}");
                        if bi == 1 {
                            assert_eq!(row[2], 0.0, "masked key must get exactly zero");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn single_token_sequence_attends_to_itself_with_weight_one() {
        let enc = micro_encoder(6);
        let batch = test_batch(vec![vec![3]], 1);
        let mut rng = RngState::new(0);
        let mut tape = Tape::new();
        let vars = enc.register(&mut tape);
        let mut trace = EncoderTrace::default();
        enc.forward_pooled(&mut tape, &vars, &batch, false, &mut rng, Some(&mut trace))
            .unwrap();
        for probs in &trace.attention {
            assert!(probs.data().iter().all(|&p| p == 1.0));
        }
    }

    #[test]
    fn eval_forward_is_bit_deterministic() {
        let enc = micro_encoder(7);
        let batch = test_batch(vec![vec![0, 3, 5, 8], vec![0, 2]], 4);
        let mut rng1 = RngState::new(9);
        let mut rng2 = RngState::new(10);
        let a = enc.encode_pooled(&batch, false, &mut rng1).unwrap();
        let b = enc.encode_pooled(&batch, false, &mut rng2).unwrap();
        let bits_a: Vec<u64> = a.data().iter().map(|v| v.to_bits()).collect();
        let bits_b: Vec<u64> = b.data().iter().map(|v| v.to_bits()).collect();
        assert_eq!(bits_a, bits_b);
    }

    #[test]
    fn padding_extension_leaves_pooled_output_unchanged() {
        let enc = micro_encoder(8);
        let mut rng = RngState::new(0);
        let narrow = test_batch(vec![vec![0, 5, 9, 2]], 4);
        // same tokens, three extra pad columns with junk-free pad ids
        let wide = test_batch(vec![vec![0, 5, 9, 2]], 7);
        let a = enc.encode_pooled(&narrow, false, &mut rng).unwrap();
        let b = enc.encode_pooled(&wide, false, &mut rng).unwrap();
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= 1e-10, "{x} vs {y}");
        }
    }

    #[test]
    fn pad_region_content_does_not_leak() {
        let enc = micro_encoder(11);
        let mut rng = RngState::new(0);
        let mut with_junk = test_batch(vec![vec![0, 5, 9]], 5);
        // padded cells hold arbitrary ids; mask stays the same
        with_junk.ids[3] = 7;
        with_junk.ids[4] = 11;
        let clean = test_batch(vec![vec![0, 5, 9]], 5);
        let a = enc.encode_pooled(&with_junk, false, &mut rng).unwrap();
        let b = enc.encode_pooled(&clean, false, &mut rng).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn registration_order_matches_visit_order() {
        let enc = micro_encoder(12);
        let mut tape = Tape::new();
        let _ = enc.register(&mut tape);
        let mut visited: Vec<(String, Vec<f64>)> = Vec::new();
        enc.visit(&mut |name, t| visited.push((name, t.data().to_vec())));
        assert_eq!(tape.num_nodes(), visited.len());
        for (node, (name, data)) in tape.node_values().zip(&visited) {
            assert_eq!(node, &data[..], "parameter {name} out of order");
        }
    }
}
