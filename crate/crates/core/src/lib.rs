//! Dice-family segmentation losses with calibrated variants, a small
//! reverse-mode autodiff engine to train them, and the evaluation tooling
//! (calibration metrics, threshold sweeps, significance tests) to compare
//! them on synthetic class-imbalanced data.

pub mod autodiff;
pub mod error;
pub mod experiment;
pub mod losses;
pub mod metrics;
pub mod segnet;
pub mod synthdata;
pub mod trainer;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
