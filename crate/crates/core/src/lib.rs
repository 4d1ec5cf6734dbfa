//! Random polyhedral approximation of bounded strongly C-convex domains:
//! boundary point processes, induced polyhedra via cuts and caps, coverage
//! certificates, and volume-defect estimation.

pub mod domains;
pub mod error;
pub mod estimate;
pub mod kernel;
pub mod lab;
pub mod poly;
pub mod pp;

pub use error::{CcvxError, Result};
