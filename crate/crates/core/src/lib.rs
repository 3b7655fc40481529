//! Trace finite elements for the heat equation on a circle embedded in a
//! triangulated square, with the normal-derivative volume stabilization
//! family and tools to measure the constants of its stability theory.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod assembly;
pub mod cutquad;
pub mod dense;
pub mod diagnostics;
pub mod error;
pub mod exec;
pub mod geometry;
pub mod heatsolver;
pub mod io;
pub mod mesh;
pub mod operators;
pub mod sparse;

pub use error::{Error, Result};
pub use exec::Execution;
pub use geometry::{LevelSetSurface, Vec2};
