//! Simulation and verification of boundary observation and integral-action
//! output regulation for the Korteweg–de Vries equation on a bounded interval.

pub mod banded;
pub mod eigen;
pub mod error;
pub mod forwarding;
pub mod grid;
pub mod kernel;
pub mod kdv;
pub mod lyapunov;
pub mod observer;
pub mod series;

pub use error::{KdvfError, Result};
