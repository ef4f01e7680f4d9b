//! Tensors, reverse-mode autodiff, Adam, schedules and checkpoints.

pub mod checkpoint;
pub mod embed;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{load_checkpoint, read_manifest, save_checkpoint, Checkpoint, CheckpointMeta, Manifest};
pub use embed::{sinusoidal_embedding, sinusoidal_embedding_batch};
pub use graph::{backward, GradMap, Gradients, Graph, Var};
pub use optim::{adam_step, step_lr, AdamState};
pub use params::ParamStore;
pub use tensor::Tensor;
