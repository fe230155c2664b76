//! Adaptive-moment optimizer with decoupled weight decay.

use crate::heads::DualHeadModel;
use crate::numerics::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum OptimError {
    #[error("parameter {name} has no gradient")]
    MissingGrad { name: String },
    #[error("optimizer state for {name} does not match parameter size")]
    StateMismatch { name: String },
}

/// Decoupled-weight-decay adaptive moments with bias correction.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub weight_decay: f64,
}

impl AdamW {
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        AdamW {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            weight_decay,
        }
    }

    /// Applies one update to a single tensor given its moment slot and the
    /// (already incremented) step count.
    pub fn update_tensor(
        &self,
        name: &str,
        tensor: &mut Tensor,
        slot: &mut Moments,
        step: u64,
    ) -> Result<(), OptimError> {
        let grad = tensor.grad.take().ok_or_else(|| OptimError::MissingGrad {
            name: name.to_string(),
        })?;
        if grad.len() != tensor.len() || slot.m.len() != tensor.len() {
            return Err(OptimError::StateMismatch {
                name: name.to_string(),
            });
        }
        let bias1 = 1.0 - self.beta1.powi(step as i32);
        let bias2 = 1.0 - self.beta2.powi(step as i32);
        let data = tensor.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * g;
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = slot.m[i] / bias1;
            let v_hat = slot.v[i] / bias2;
            let update = self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            let decay = self.learning_rate * self.weight_decay * data[i];
            data[i] -= update + decay;
        }
        Ok(())
    }

    /// One optimizer step over every model parameter. Gradients must have
    /// been populated by a backward pass; they are consumed.
    pub fn step(&self, model: &mut DualHeadModel, state: &mut OptimizerState) -> Result<(), OptimError> {
        state.ensure_slots(model);
        state.step += 1;
        let step = state.step;
        let mut result = Ok(());
        let mut index = 0;
        let slots = &mut state.slots;
        model.visit_mut(&mut |name, tensor| {
            if result.is_err() {
                return;
            }
            result = self.update_tensor(&name, tensor, &mut slots[index], step);
            index += 1;
        });
        result
    }
}

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Per-parameter moment slots in model visit order, plus the step counter.
#[derive(Debug, Clone, Default)]
pub struct OptimizerState {
    pub step: u64,
    slots: Vec<Moments>,
}

impl OptimizerState {
    pub fn new() -> Self {
        Self::default()
    }

    fn ensure_slots(&mut self, model: &DualHeadModel) {
        if !self.slots.is_empty() {
            return;
        }
        model.visit(&mut |_, t| {
            self.slots.push(Moments {
                m: vec![0.0; t.len()],
                v: vec![0.0; t.len()],
            });
        });
    }
}

/// Scales all gradients so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(model: &mut DualHeadModel, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    model.visit(&mut |_, t| {
        if let Some(g) = &t.grad {
            sq += g.iter().map(|v| v * v).sum::<f64>();
        }
    });
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        model.visit_mut(&mut |_, t| {
            if let Some(g) = &mut t.grad {
                for v in g.iter_mut() {
                    *v *= scale;
                }
            }
        });
    }
    norm
}
