//! Mixed-precision finite element kernels under exact software rounding.
//!
//! Every arithmetic step is carried in `f64` and rounded to an emulated
//! format (`bf16`, `fp16`, `fp32`, `fp64`), so results are deterministic and
//! comparable bit for bit across engines and thread counts.

pub mod assembly;
pub mod bounds;
pub mod config;
pub mod elements;
pub mod error;
pub mod errorlab;
pub mod geometry;
pub mod kernels;
pub mod mesh;
pub mod mm_units;
pub mod quadrature;
pub mod softfloat;

pub use error::{Error, Result};
pub use softfloat::{Flags, FloatFormat};
