//! Metric-scale multi-view reconstruction on a from-scratch autodiff engine.
pub mod autodiff;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod model;
pub mod prior;
pub mod supervision;
pub mod synth;

pub use error::{Error, ErrorCategory, Result};
