//! Multi-kink quantile regression: estimation of continuous piecewise-linear
//! conditional quantile functions with an unknown number of kinks, kink-number
//! selection, kink-existence testing and kink-location confidence intervals.

pub mod brisq;
pub mod error;
pub mod infer;
pub mod linalg;
pub mod linqr;
pub mod model;
pub mod rng;
pub mod select;
pub mod simgen;
pub mod study;

pub use error::{MkqrError, Result};
