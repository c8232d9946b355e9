//! Point Deformable Network at desk scale.
//!
//! Layers, bottom up:
//!
//! - [`geometry`]: farthest point sampling, kNN / ball grouping, inverse
//!   distance interpolation, covariance normals.
//! - [`numerics`]: tensors, reverse-mode graph, AdamW, cosine schedule,
//!   gradient checking, checkpoints.
//! - [`blocks`]: set abstraction, InvResMLP, PointMeta, PLAM, PDSA and the
//!   position / normal embeddings.
//! - [`pdam`]: deformable aggregation over stage-global reference points.
//! - [`network`]: PDNet-S/L/XXL assembly for classification and segmentation.
//! - [`data`]: synthetic datasets, augmentation, `PDCLOUD1` and PLY files.
//! - [`checks`]: the finite-difference gradient suite run per block.
//! - [`train`], [`metrics`], [`cli`]: the training loop, scores and the
//!   `pdnet` command line.

pub mod blocks;
pub mod checks;
pub mod cli;
pub mod data;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod network;
pub mod numerics;
pub mod pdam;
pub mod train;

pub use error::{Error, Result};
