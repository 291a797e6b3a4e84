//! Pre-training, fine-tuning, evaluation and ablation harness.

pub mod ablate;
pub mod checkpoint;
pub mod data;
pub mod metrics;
pub mod optim;
pub mod pipeline;

pub use ablate::{ablate, AblationGrid, AblationRow};
pub use checkpoint::{Checkpoint, Provenance, Stage};
pub use data::{label_subset, Benchmark, SampleLabels, Sequence};
pub use metrics::{Confusion, EvalReport};
pub use optim::{optimizer_step, OptimState, Optimizer};
pub use pipeline::Pipeline;
