//! Numerical laboratory for smooth distance functions, degenerate elliptic
//! Green functions, Carleson-measure functionals and uniform-rectifiability
//! diagnostics on sampled boundaries.
//!
//! Points are stored as 3-vectors; two-dimensional problems leave the third
//! coordinate at zero.

pub mod carleson;
pub mod config;
pub mod dyadic;
pub mod elliptic;
pub mod error;
pub mod exec;
pub mod experiment;
pub mod geometry;
pub mod kdtree;
pub mod quad;
pub mod smoothdist;
pub mod urdiag;

pub use error::{Error, Result};
pub use exec::Exec;

pub type Point = nalgebra::Vector3<f64>;
pub type Mat = nalgebra::Matrix3<f64>;
