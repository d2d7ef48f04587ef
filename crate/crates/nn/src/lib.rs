//! Segmentation networks, losses and the training loop.

pub mod augment;
pub mod config;
pub mod data;
pub mod error;
pub mod folds;
pub mod kernels;
pub mod layers;
pub mod losses;
pub mod networks;
pub mod params;
pub mod predict;
pub mod train;

pub use error::{Error, Result};
