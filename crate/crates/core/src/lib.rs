//! Restoration of blurred, Poisson-corrupted images by iterative shrinkage
//! on a sparse frame representation, with reference solvers, phantom
//! generation, quality metrics and a batch experiment driver.

pub mod cli;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod operators;
pub mod phantoms;
pub mod solvers;

pub use error::{Error, Result};
pub use grid::{BandId, CoeffField, CoeffShape, CountGrid, ImageGrid, Orientation};
