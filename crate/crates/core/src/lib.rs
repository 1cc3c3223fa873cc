//! Quantum thermal averages of two-state systems from the extended ring-polymer
//! representation.
//!
//! The library samples bead positions on a single reference surface and sums
//! the surface index sequences exactly, level by level in the number of kinks.
//! [`estimators::mlmc_pimd`] distributes samples across levels so that the
//! cheap, high-variance low levels receive most of the work.

pub mod cli;
pub mod dynamics;
pub mod error;
pub mod estimators;
pub mod model;
pub mod oracle;
pub mod polymer;

pub use error::{Channel, Error, Result};
