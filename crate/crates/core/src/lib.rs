//! Building blocks for long-tail object detection pipelines.
//!
//! The crate is framework independent: it works on annotation files,
//! 8-bit rasters and small dense `f64` tensors, and covers
//!
//! - box geometry and NMS ([`geometry`]),
//! - COCO-style dataset ingestion and many/few-shot staging ([`dataset`]),
//! - per-image class-balance sampling ([`class_balance`]),
//! - the hard IoU-imbalance anchor sampler ([`anchor_sampler`]),
//! - mix-up, duck filling and photometric jitter ([`augment`]),
//! - single-level and global RoI extraction with gradients ([`gre_fpn`]),
//! - weight averaging and the step learning-rate schedule ([`train_utils`]),
//! - test-time augmentation bookkeeping and detection fusion ([`tta`]).
//!
//! Hot loops run on rayon when the `parallel` feature is enabled (the
//! default). Every parallel path produces bitwise-identical results to its
//! sequential counterpart; see [`exec::Execution`].

pub mod anchor_sampler;
pub mod augment;
pub mod class_balance;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod gre_fpn;
pub mod raster;
pub mod train_utils;
pub mod tta;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::BBox;
