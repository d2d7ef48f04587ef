//! Volumes, preprocessing, lesion-level evaluation, statistics and
//! synthetic phantoms for prostate lesion segmentation.

pub mod components;
pub mod error;
pub mod evaluation;
pub mod hashing;
pub mod manifest;
pub mod phantom;
pub mod preprocess;
pub mod stats;
pub mod volumes;

pub use error::{Error, Result};
