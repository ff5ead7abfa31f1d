//! Desk-scale numerical laboratory for counting prime constellations and
//! probing the weighted averages that control them.
//!
//! The crate is organized around one pipeline:
//!
//! 1. [`sieve`] builds prime tables and primorials.
//! 2. [`wtrick`] selects a residue class, rescales a subset of the prime
//!    grid into W-tricked coordinates, and builds the normalized weight
//!    fields `nu` supported on the rescaled primes.
//! 3. [`forms`] averages products of weights along systems of linear forms
//!    and checks how close those averages sit to 1.
//! 4. [`boxnorm`] computes weighted box norms over small index sets and
//!    verifies the generalized von Neumann inequality on explicit instances.
//! 5. [`measures`] evaluates cylinder-event measures built from a subset,
//!    a weight family, and a dilation parameter, together with their
//!    compatibility and shift defects.
//! 6. [`constellations`] counts dilated patterns inside subsets of the
//!    integer grid exactly, in brute-force and accelerated form.
//!
//! Everything is exact or deterministically rounded: counts are integers,
//! floating-point accumulation is compensated, and parallel reductions are
//! chunked so results are identical for every thread count.

pub mod boxnorm;
pub mod constellations;
pub mod error;
pub mod forms;
pub mod kahan;
pub mod measures;
pub mod nu;
pub mod sieve;
pub mod subset;
pub mod wtrick;

pub use error::{Error, Result};
pub use kahan::KahanSum;
pub use nu::NuRef;
pub use sieve::{primorial, sieve_primes, PrimeTable, Primorial};
pub use subset::DenseSubset;
pub use wtrick::{Ratio, WTrickContext, WeightField};
