//! Time-continuous optimal mass transport between two grayscale images.
//!
//! The velocity is the gradient of a potential solved slice by slice with a
//! density-weighted Laplacian; the density comes from a space-time least-squares
//! finite-element solve of the conservation law with both endpoints prescribed.
//! The two solves alternate in a fixed-point loop starting from the linear blend.

pub mod cli;
pub mod driver;
pub mod elliptic;
pub mod error;
pub mod fields;
pub mod linalg;
pub mod mesh;
pub mod oracle;
pub mod transport;

pub use driver::{bb_cost, conservation_residual, run_fixed_point, IterationReport, SolverConfig, Verdict};
pub use error::{Error, Result};
pub use fields::{prepare_pair, ScalarField2D, SpaceTimeField, VelocityField};
pub use mesh::{build_space_time_grid, Grid2D, SpaceTimeGrid};
