//! Dense tensors, reverse-mode differentiation, layers, loss, optimizer,
//! learning-rate schedule, gradient checking and the parameter checkpoint
//! container.
//!
//! Everything computes in `f64`. A [`Session`] wraps one [`Graph`] per
//! forward pass; graphs are single-threaded, independent samples can run on
//! separate sessions in parallel.

pub mod checkpoint;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, KINK_THRESHOLD, GradCheckOptions, GradCheckReport, TensorCheck};
pub use graph::{sigmoid, Fault, Gradients, Graph, Var};
pub use optim::{adamw_update, cosine_lr, AdamW, AdamWConfig};
pub use params::{param_rng, Activation, Init, LayerSpec, Linear, Mlp, ParamId, ParamStore, Session};
pub use tensor::Tensor;
