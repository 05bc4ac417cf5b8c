//! CT perfusion stroke-lesion segmentation at desk scale.
//!
//! A self-contained pipeline built on a minimal reverse-mode autodiff core:
//!
//! - [`autodiff`] — tensors, the operation tape, finite-difference checks
//! - [`nn`] — differentiable conv/pool/norm/resize operators
//! - [`models`] — PSPNet with pyramid pooling, 2D U-Net, checkpoints
//! - [`losses`] — cross entropy, weighted cross entropy, focal loss
//! - [`data`] — scan stacks on disk, subject-disjoint folds, augmentation,
//!   synthetic perfusion phantoms
//! - [`metrics`] — DSC, Hausdorff, ASSD, precision/recall, AVD, reports
//! - [`train`] — RMSProp with plateau scheduling, fine-tuning, ensembling
//!
//! Training runs in `f32`; every verification suite runs the same code in
//! `f64`. With the default `parallel` feature the heavy loops fan out over
//! rayon and remain bit-deterministic for any thread count.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod parallel;
pub mod train;

pub use error::{Error, Result};
