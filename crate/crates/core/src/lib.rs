//! Numerical laboratory for harmonic fields on slit disks.
//!
//! The crate solves the crack-Neumann Laplace problem on a disk minus a
//! polyline crack set, evaluates the tip/jump dichotomy functional, audits
//! Ahlfors-type density ratios, fits growth exponents against the exact
//! cracktip solution, and constructs certified carrot-John decompositions
//! of crack neighborhoods together with their Boman chains.

pub mod error;
pub mod geometry;
pub mod grid;
pub mod john;
pub mod regularity;
pub mod report;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
