//! WLAN CSI posture recognition toolkit.
//!
//! Covers CSI ingestion (`data`), feature transforms (`features`), five
//! classifiers (`lda`, `nbsvm`, `svm`, `forest`, `cnn`), a synthetic multipath
//! generator (`synth`) and the training/validation protocol (`eval`).

pub mod cli;
pub mod cnn;
pub mod data;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod lda;
pub mod model;
pub mod nbsvm;
pub mod rng;
pub mod svm;
pub mod synth;

pub use data::{CsiSample, Dataset, PostureLabel};
pub use error::{Error, Result};
