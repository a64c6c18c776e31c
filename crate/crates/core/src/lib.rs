//! Least-action solutions of the Abelian sandpile obstacle problem, explicit
//! piecewise-quadratic supersolutions for the square, and tools for measuring
//! how the periodic patterns of `Δu` settle into their predicted patches.

pub mod error;
pub mod analysis;
pub mod continuum;
pub mod exact;
pub mod formats;
pub mod grid;
pub mod patterns;
pub mod render;
pub mod solver;

pub use error::{Error, Result};
