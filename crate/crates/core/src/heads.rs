//! Dual classification heads over the shared pooled representation.
//!
//! Both heads follow the same multi-layer pipeline with independent
//! parameters:
//!
//! ```text
//! linear (in -> mid) -> LayerNorm -> GELU -> dropout 0.2
//!   [-> + pooled input, when the residual toggle is on]
//! -> linear (mid -> reduced) -> LayerNorm -> GELU -> dropout 0.1
//! -> linear (reduced -> classes)
//! ```
//!
//! The residual joins after the first dropout, the only site where shapes
//! line up without an extra projection (it requires `in_dim == mid_dim`).
//! Per-head cross-entropy losses combine by plain averaging, so both tasks
//! pull on the shared encoder with equal weight.

use crate::encoder::{EncoderConfig, EncoderError, EncoderParams, EncoderVars, INIT_STD};
use crate::numerics::{NumericsError, RngState, Tape, Tensor, Var};
use crate::task::Task;
use crate::tokenizer::TokenizedBatch;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("invalid head config: {reason}")]
    InvalidHeadConfig { reason: String },
    #[error("labels are required to compute losses")]
    MissingLabels,
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Head architecture hyperparameters. The defaults mirror the full-size
/// encoder: 768 in, 768 mid, 384 reduced, dropouts 0.2 then 0.1.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadConfig {
    pub in_dim: usize,
    pub mid_dim: usize,
    pub reduced_dim: usize,
    pub num_classes: usize,
    pub dropout1: f64,
    pub dropout2: f64,
    pub residual: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        HeadConfig {
            in_dim: 768,
            mid_dim: 768,
            reduced_dim: 384,
            num_classes: 2,
            dropout1: 0.2,
            dropout2: 0.1,
            residual: false,
        }
    }
}

impl HeadConfig {
    /// Head sized for a pooled width of `hidden`: mid equals the input and
    /// the reduced stage halves it, preserving the 768 -> 768 -> 384 shape
    /// at full size.
    pub fn for_hidden(hidden: usize, num_classes: usize, residual: bool) -> Self {
        HeadConfig {
            in_dim: hidden,
            mid_dim: hidden,
            reduced_dim: (hidden / 2).max(1),
            num_classes,
            dropout1: 0.2,
            dropout2: 0.1,
            residual,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let fail = |reason: String| Err(ModelError::InvalidHeadConfig { reason });
        if self.in_dim == 0 || self.mid_dim == 0 || self.reduced_dim == 0 {
            return fail("all dims must be positive".to_string());
        }
        if self.num_classes < 2 {
            return fail(format!("num_classes {} below 2", self.num_classes));
        }
        if !(0.0..1.0).contains(&self.dropout1) || !(0.0..1.0).contains(&self.dropout2) {
            return fail("dropout probabilities must lie in [0, 1)".to_string());
        }
        if self.residual && self.in_dim != self.mid_dim {
            return fail(format!(
                "residual needs in_dim == mid_dim, got {} and {}",
                self.in_dim, self.mid_dim
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct HeadParams {
    pub w1: Tensor,
    pub b1: Tensor,
    pub ln1_gain: Tensor,
    pub ln1_bias: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub ln2_gain: Tensor,
    pub ln2_bias: Tensor,
    pub w_out: Tensor,
    pub b_out: Tensor,
}

pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub w2: Var,
    pub b2: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub w_out: Var,
    pub b_out: Var,
}

impl HeadParams {
    pub fn init(cfg: &HeadConfig, rng: &mut RngState) -> Result<Self, ModelError> {
        cfg.validate()?;
        Ok(HeadParams {
            w1: Tensor::randn_truncated(vec![cfg.in_dim, cfg.mid_dim], INIT_STD, rng)
                .requires_grad(true),
            b1: Tensor::zeros(vec![cfg.mid_dim]).requires_grad(true),
            ln1_gain: Tensor::ones(vec![cfg.mid_dim]).requires_grad(true),
            ln1_bias: Tensor::zeros(vec![cfg.mid_dim]).requires_grad(true),
            w2: Tensor::randn_truncated(vec![cfg.mid_dim, cfg.reduced_dim], INIT_STD, rng)
                .requires_grad(true),
            b2: Tensor::zeros(vec![cfg.reduced_dim]).requires_grad(true),
            ln2_gain: Tensor::ones(vec![cfg.reduced_dim]).requires_grad(true),
            ln2_bias: Tensor::zeros(vec![cfg.reduced_dim]).requires_grad(true),
            w_out: Tensor::randn_truncated(vec![cfg.reduced_dim, cfg.num_classes], INIT_STD, rng)
                .requires_grad(true),
            b_out: Tensor::zeros(vec![cfg.num_classes]).requires_grad(true),
        })
    }

    /// All-zero parameters with the right shapes, for checkpoint loading.
    pub fn zeroed(cfg: &HeadConfig) -> Result<Self, ModelError> {
        cfg.validate()?;
        let z = |shape: Vec<usize>| Tensor::zeros(shape).requires_grad(true);
        Ok(HeadParams {
            w1: z(vec![cfg.in_dim, cfg.mid_dim]),
            b1: z(vec![cfg.mid_dim]),
            ln1_gain: z(vec![cfg.mid_dim]),
            ln1_bias: z(vec![cfg.mid_dim]),
            w2: z(vec![cfg.mid_dim, cfg.reduced_dim]),
            b2: z(vec![cfg.reduced_dim]),
            ln2_gain: z(vec![cfg.reduced_dim]),
            ln2_bias: z(vec![cfg.reduced_dim]),
            w_out: z(vec![cfg.reduced_dim, cfg.num_classes]),
            b_out: z(vec![cfg.num_classes]),
        })
    }

    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        f(format!("{prefix}.w1"), &self.w1);
        f(format!("{prefix}.b1"), &self.b1);
        f(format!("{prefix}.ln1_gain"), &self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &self.ln1_bias);
        f(format!("{prefix}.w2"), &self.w2);
        f(format!("{prefix}.b2"), &self.b2);
        f(format!("{prefix}.ln2_gain"), &self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &self.ln2_bias);
        f(format!("{prefix}.w_out"), &self.w_out);
        f(format!("{prefix}.b_out"), &self.b_out);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.b1"), &mut self.b1);
        f(format!("{prefix}.ln1_gain"), &mut self.ln1_gain);
        f(format!("{prefix}.ln1_bias"), &mut self.ln1_bias);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.b2"), &mut self.b2);
        f(format!("{prefix}.ln2_gain"), &mut self.ln2_gain);
        f(format!("{prefix}.ln2_bias"), &mut self.ln2_bias);
        f(format!("{prefix}.w_out"), &mut self.w_out);
        f(format!("{prefix}.b_out"), &mut self.b_out);
    }

    pub fn register(&self, tape: &mut Tape) -> HeadVars {
        HeadVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            ln1_gain: tape.leaf(&self.ln1_gain),
            ln1_bias: tape.leaf(&self.ln1_bias),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
            ln2_gain: tape.leaf(&self.ln2_gain),
            ln2_bias: tape.leaf(&self.ln2_bias),
            w_out: tape.leaf(&self.w_out),
            b_out: tape.leaf(&self.b_out),
        }
    }

    pub fn vars_from_iter(it: &mut impl Iterator<Item = Var>) -> HeadVars {
        let mut next = || it.next().expect("var list shorter than parameter list");
        HeadVars {
            w1: next(),
            b1: next(),
            ln1_gain: next(),
            ln1_bias: next(),
            w2: next(),
            b2: next(),
            ln2_gain: next(),
            ln2_bias: next(),
            w_out: next(),
            b_out: next(),
        }
    }
}

/// Events recorded by an instrumented head forward, in execution order.
#[derive(Debug, Clone, PartialEq)]
pub enum TraceEvent {
    Linear { in_dim: usize, out_dim: usize },
    LayerNorm { dim: usize },
    Gelu,
    Dropout { p: f64 },
    Residual,
}

#[derive(Debug, Default)]
pub struct ForwardTrace {
    pub events: Vec<TraceEvent>,
}

impl ForwardTrace {
    fn push(trace: &mut Option<&mut ForwardTrace>, event: TraceEvent) {
        if let Some(t) = trace.as_deref_mut() {
            t.events.push(event);
        }
    }

    /// Layer widths crossed by linear stages: in, mid, reduced, classes.
    pub fn linear_dims(&self) -> Vec<usize> {
        let mut dims = Vec::new();
        for e in &self.events {
            if let TraceEvent::Linear { in_dim, out_dim } = e {
                if dims.is_empty() {
                    dims.push(*in_dim);
                }
                dims.push(*out_dim);
            }
        }
        dims
    }

    pub fn dropout_probs(&self) -> Vec<f64> {
        self.events
            .iter()
            .filter_map(|e| match e {
                TraceEvent::Dropout { p } => Some(*p),
                _ => None,
            })
            .collect()
    }
}

/// One head over `pooled: [b, in_dim]`, producing `[b, num_classes]` logits.
pub fn head_forward(
    cfg: &HeadConfig,
    vars: &HeadVars,
    tape: &mut Tape,
    pooled: Var,
    training: bool,
    rng: &mut RngState,
    mut trace: Option<&mut ForwardTrace>,
) -> Result<Var, ModelError> {
    cfg.validate()?;
    let in_dim = *tape.shape(pooled).last().unwrap_or(&0);
    if in_dim != cfg.in_dim {
        return Err(ModelError::InvalidHeadConfig {
            reason: format!("pooled width {} != head in_dim {}", in_dim, cfg.in_dim),
        });
    }

    let a1 = tape.matmul(pooled, vars.w1)?;
    let a1 = tape.add_bias(a1, vars.b1)?;
    ForwardTrace::push(
        &mut trace,
        TraceEvent::Linear {
            in_dim: cfg.in_dim,
            out_dim: cfg.mid_dim,
        },
    );
    let n1 = tape.layer_norm(a1, vars.ln1_gain, vars.ln1_bias, 1e-5)?;
    ForwardTrace::push(&mut trace, TraceEvent::LayerNorm { dim: cfg.mid_dim });
    let g1 = tape.gelu(n1)?;
    ForwardTrace::push(&mut trace, TraceEvent::Gelu);
    let d1 = tape.dropout(g1, cfg.dropout1, training, rng)?;
    ForwardTrace::push(&mut trace, TraceEvent::Dropout { p: cfg.dropout1 });
    let mid = if cfg.residual {
        ForwardTrace::push(&mut trace, TraceEvent::Residual);
        tape.add(d1, pooled)?
    } else {
        d1
    };

    let a2 = tape.matmul(mid, vars.w2)?;
    let a2 = tape.add_bias(a2, vars.b2)?;
    ForwardTrace::push(
        &mut trace,
        TraceEvent::Linear {
            in_dim: cfg.mid_dim,
            out_dim: cfg.reduced_dim,
        },
    );
    let n2 = tape.layer_norm(a2, vars.ln2_gain, vars.ln2_bias, 1e-5)?;
    ForwardTrace::push(
        &mut trace,
        TraceEvent::LayerNorm {
            dim: cfg.reduced_dim,
        },
    );
    let g2 = tape.gelu(n2)?;
    ForwardTrace::push(&mut trace, TraceEvent::Gelu);
    let d2 = tape.dropout(g2, cfg.dropout2, training, rng)?;
    ForwardTrace::push(&mut trace, TraceEvent::Dropout { p: cfg.dropout2 });

    let logits = tape.matmul(d2, vars.w_out)?;
    let logits = tape.add_bias(logits, vars.b_out)?;
    ForwardTrace::push(
        &mut trace,
        TraceEvent::Linear {
            in_dim: cfg.reduced_dim,
            out_dim: cfg.num_classes,
        },
    );
    Ok(logits)
}

/// Shared encoder plus two independent heads.
#[derive(Debug, Clone)]
pub struct DualHeadModel {
    pub task: Task,
    pub encoder: EncoderParams,
    /// Dropout on the pooled output, shared by both heads. Applied once,
    /// inside the encoder's pooled forward.
    pub shared_dropout_p: f64,
    pub head_cfg_1: HeadConfig,
    pub head_1: HeadParams,
    pub head_cfg_2: HeadConfig,
    pub head_2: HeadParams,
}

pub struct ModelVars {
    pub encoder: EncoderVars,
    pub head_1: HeadVars,
    pub head_2: HeadVars,
}

/// A completed forward pass: the tape plus handles to logits and losses.
pub struct ModelForward {
    pub tape: Tape,
    pub vars: ModelVars,
    pub logits_1: Var,
    pub logits_2: Var,
    pub loss_1: Option<Var>,
    pub loss_2: Option<Var>,
    pub combined_loss: Option<Var>,
}

/// Plain-value view of a forward pass.
#[derive(Debug, Clone)]
pub struct DualHeadOutput {
    pub logits_1: Tensor,
    pub logits_2: Tensor,
    pub loss_1: Option<f64>,
    pub loss_2: Option<f64>,
    pub combined_loss: Option<f64>,
}

/// Builds a model for `task`: Task A gets two binary heads (fake, hate),
/// Task B two 4-way heads (target, severity). Heads are initialized
/// independently; the shared dropout reuses the encoder's pooled dropout.
pub fn make_task_model(
    task: Task,
    encoder_cfg: EncoderConfig,
    residual: bool,
    rng: &mut RngState,
) -> Result<DualHeadModel, ModelError> {
    let (c1, c2) = task.head_classes();
    let head_cfg_1 = HeadConfig::for_hidden(encoder_cfg.hidden, c1, residual);
    let head_cfg_2 = HeadConfig::for_hidden(encoder_cfg.hidden, c2, residual);
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

impl DualHeadModel {
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.encoder.visit(f);
        self.head_1.visit("head1", f);
        self.head_2.visit("head2", f);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.encoder.visit_mut(f);
        self.head_1.visit_mut("head1", f);
        self.head_2.visit_mut("head2", f);
    }

    pub fn num_param_tensors(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _| n += 1);
        n
    }

    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: self.encoder.register(tape),
            head_1: self.head_1.register(tape),
            head_2: self.head_2.register(tape),
        }
    }

    pub fn vars_from_iter(&self, it: &mut impl Iterator<Item = Var>) -> ModelVars {
        ModelVars {
            encoder: self.encoder.vars_from_iter(it),
            head_1: HeadParams::vars_from_iter(it),
            head_2: HeadParams::vars_from_iter(it),
        }
    }

    /// Forward pass on an existing tape with externally supplied parameter
    /// vars (the finite-difference checker re-binds parameters this way).
    #[allow(clippy::too_many_arguments)]
    pub fn forward_with_vars(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        batch: &TokenizedBatch,
        labels: Option<(&[usize], &[usize])>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<(Var, Var, Option<(Var, Var, Var)>), ModelError> {
        let pooled =
            self.encoder
                .forward_pooled(tape, &vars.encoder, batch, training, rng, None)?;
        let logits_1 = head_forward(
            &self.head_cfg_1,
            &vars.head_1,
            tape,
            pooled,
            training,
            rng,
            None,
        )?;
        let logits_2 = head_forward(
            &self.head_cfg_2,
            &vars.head_2,
            tape,
            pooled,
            training,
            rng,
            None,
        )?;
        let losses = match labels {
            Some((l1, l2)) => {
                let loss_1 = tape.softmax_cross_entropy(logits_1, l1)?;
                let loss_2 = tape.softmax_cross_entropy(logits_2, l2)?;
                let total = tape.add(loss_1, loss_2)?;
                let combined = tape.scale(total, 0.5)?;
                Some((loss_1, loss_2, combined))
            }
            None => None,
        };
        Ok((logits_1, logits_2, losses))
    }

    /// One encoder pass, shared pooled dropout, both heads, and (when labels
    /// are given) per-head cross-entropy plus their average.
    pub fn forward(
        &self,
        batch: &TokenizedBatch,
        labels: Option<(&[usize], &[usize])>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<ModelForward, ModelError> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape);
        let (logits_1, logits_2, losses) =
            self.forward_with_vars(&mut tape, &vars, batch, labels, training, rng)?;
        let (loss_1, loss_2, combined_loss) = match losses {
            Some((a, b, c)) => (Some(a), Some(b), Some(c)),
            None => (None, None, None),
        };
        Ok(ModelForward {
            tape,
            vars,
            logits_1,
            logits_2,
            loss_1,
            loss_2,
            combined_loss,
        })
    }

    /// Value-level forward pass.
    pub fn dual_forward(
        &self,
        batch: &TokenizedBatch,
        labels_1: Option<&[usize]>,
        labels_2: Option<&[usize]>,
        training: bool,
        rng: &mut RngState,
    ) -> Result<DualHeadOutput, ModelError> {
        let labels = match (labels_1, labels_2) {
            (Some(a), Some(b)) => Some((a, b)),
            (None, None) => None,
            _ => return Err(ModelError::MissingLabels),
        };
        let pass = self.forward(batch, labels, training, rng)?;
        Ok(DualHeadOutput {
            logits_1: pass.tape.to_tensor(pass.logits_1),
            logits_2: pass.tape.to_tensor(pass.logits_2),
            loss_1: pass.loss_1.map(|v| pass.tape.scalar_value(v)),
            loss_2: pass.loss_2.map(|v| pass.tape.scalar_value(v)),
            combined_loss: pass.combined_loss.map(|v| pass.tape.scalar_value(v)),
        })
    }

    /// Runs backward from the combined loss of `pass` and stores gradients
    /// on every parameter tensor. `pass` must come from `self.forward`, so
    /// parameter leaves occupy the tape's first `num_param_tensors()` slots
    /// in visit order.
    pub fn apply_backward(&mut self, pass: &mut ModelForward) -> Result<(), ModelError> {
        let combined = pass.combined_loss.ok_or(ModelError::MissingLabels)?;
        pass.tape.backward(combined)?;
        let tape = &pass.tape;
        let mut index = 0;
        let mut missing = false;
        self.visit_mut(&mut |_, t| {
            let var = tape.var(index).expect("parameter var registered");
            match tape.grad(var) {
                Some(g) => t.grad = Some(g.to_vec()),
                None => missing = true,
            }
            index += 1;
        });
        debug_assert!(!missing, "backward must populate every parameter leaf");
        Ok(())
    }
}
