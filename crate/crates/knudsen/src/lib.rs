//! Kinetic gas in a bounded convex polygon: free transport with Maxwell-type
//! wall reflection, a mollified collision operator, and the resulting
//! linear and nonlinear evolution problems.

pub mod boundary;
pub mod cli;
pub mod collision;
pub mod error;
pub mod geometry;
pub mod solver;
pub mod spectral;
pub mod transport;

pub use error::{Error, Result};
