//! Self-paced training protocols for weakly-supervised object detection over
//! bag-of-boxes datasets.
//!
//! The crate provides:
//!
//! - [`geometry`]: box arithmetic (IoU, NMS, regression encode/decode);
//! - [`data`]: the dataset model, file format and a synthetic benchmark
//!   generator;
//! - [`detector`]: a linear detection head (classification + per-class box
//!   regression) trained with mini-batch SGD;
//! - [`sampling`]: image-centric mini-batch construction from pseudo ground
//!   truth;
//! - [`protocol`]: the self-paced training engine (latent-box mining,
//!   inter-classifier competition, class/image selection, schedule);
//! - [`variants`]: the full family of training protocols sharing that engine;
//! - [`metrics`]: detection evaluation (AP/mAP, CorLoc, pseudo-ground-truth
//!   precision);
//! - [`experiment`]: configured, seeded, reproducible runs with CSV and SVG
//!   reporting.

pub mod data;
pub mod detector;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod protocol;
pub mod sampling;
pub mod variants;

pub use error::{Error, Result};
