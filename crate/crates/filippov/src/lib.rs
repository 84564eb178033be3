//! Numerical crossing-sliding bifurcation analysis for planar Filippov
//! systems that are symmetric under `(x, y) -> (-x, -y)` and switch on the
//! x-axis.

pub mod atlas;
pub mod boundary;
pub mod coeffs;
pub mod cycles;
pub mod error;
pub mod exprs;
pub mod flow;
pub mod maps;
pub mod model;
pub mod quad;
pub mod roots;

pub use error::{Error, Result};
