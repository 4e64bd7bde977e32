//! Phase-field simulation of ternary polymer-blend demixing and the
//! learning pipeline that maps initial composition to morphology class.

pub mod energetics;
pub mod error;
pub mod gpc;
pub mod grid;
pub mod imaging;
pub mod mlkit;
pub mod morphology;
pub mod pipeline;
pub mod snapshot;
pub mod solver;
pub mod sweep;
mod transport;

pub use error::{Error, Result};
