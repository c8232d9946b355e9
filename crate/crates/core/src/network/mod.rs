//! PDNet assembly.
//!
//! A stem lifts xyz to width `C`. Four stages follow, each a PDSA reduction
//! plus `B_l` residual blocks: local (PLAM) blocks in stages 1-2, local and
//! deformable (PDAM) branches side by side in stages 3-4. Classification
//! max-pools the last stage into an MLP head; segmentation walks back up
//! with feature propagation.

mod config;
mod model;

pub use config::{Ablation, NetworkConfig, Task, Variant, Wiring};
pub use model::{parallel_combine, FeaturePropagation, ForwardOutput, Model, Stage, StageBlock};

#[cfg(test)]
mod tests;
