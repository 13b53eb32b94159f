//! Numerical laboratory for the critical long-range random conductance model.
//!
//! The jump kernel is `J(z) = |z|^{-(d+2)}`, the borderline exponent at which the
//! second moment of the jump law diverges logarithmically. Everything here runs
//! without `std` (only `alloc`); the `std` feature turns on rayon parallelism and
//! wall-clock timing.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

mod error;
pub mod math;
mod par;
pub mod sum;

pub mod environment;
pub mod flux;
pub mod grid;
pub mod kernel;
pub mod operator;
pub mod poincare;
pub mod solver;
pub mod stats;
pub mod walk;

pub use error::{Error, Result};

/// Largest supported dimension.
pub const MAX_D: usize = 3;

/// Integer lattice point. Coordinates past the active dimension are zero.
pub type Point = [i64; MAX_D];
