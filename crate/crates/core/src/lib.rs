//! Dual-head transformer classifier for code-mixed text.
//!
//! One shared transformer encoder feeds two independent multi-layer
//! classification heads trained jointly: Task A pairs binary fake and hate
//! detection, Task B pairs 4-way target and severity prediction. Per-head
//! cross-entropy losses are combined by unweighted averaging.
//!
//! Everything runs on a small float64 reverse-mode autodiff engine
//! ([`numerics`]) whose every gradient rule — and the full model — can be
//! verified against central finite differences ([`verify`]).

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoder;
pub mod heads;
pub mod metrics;
pub mod numerics;
pub mod optim;
pub mod task;
pub mod tokenizer;
pub mod train;
pub mod verify;

pub use encoder::{EncoderConfig, EncoderParams};
pub use heads::{make_task_model, DualHeadModel, DualHeadOutput, HeadConfig, HeadParams};
pub use numerics::{GradCheck, RngState, Tape, Tensor, Var};
pub use task::Task;
pub use tokenizer::{TokenizedBatch, Vocab};
pub use train::{EpochReport, TrainConfig};
