//! Gaze target detection from scene, head and depth pathways, with
//! unsupervised domain adaptation.

pub mod datagen;
pub mod domain_adapt;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod preprocess;
pub mod train;
pub mod types;

pub use error::{GazeError, Result};
pub use types::*;
