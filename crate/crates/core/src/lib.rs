//! Segmentation from noisy pixel annotations.

pub mod consistency;
pub mod correct;
pub mod earlycurve;
pub mod error;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod netcore;
pub(crate) mod rng;
pub mod synthgen;
pub mod trainer;

pub use error::{Error, Result};
