//! Method-of-lines-transpose wave solver.
//!
//! Time is discretized first, which turns each step into a modified Helmholtz
//! problem `(1 - d²/α²) v = f`. In one dimension its inverse is a convolution
//! with `(α/2) e^{-α|x-x'|}` plus two decaying homogeneous modes, evaluated in
//! O(N) by a left/right exponential recursion. Two-dimensional problems are
//! dimensionally split into x- and y-line sweeps on Cartesian meshes with
//! boundary points embedded at the line ends.

pub mod analysis;
pub mod bc1d;
pub mod cli;
pub mod error;
pub mod fastconv;
pub mod geometry;
pub mod params;
pub mod stepper1d;
pub mod stepper2d;

pub use error::{MoltError, Result};
pub use params::{FieldHistory, SchemeParams, Variant};
