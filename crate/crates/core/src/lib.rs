//! Two-stage reconstruction of diffusion and absorption coefficients in
//! diffuse optical tomography on the unit square.
//!
//! Stage one ([`dsm`]) images inclusions with a direct sampling method and
//! turns the index functions into an initial guess. Stage two
//! ([`optimizer`]) minimizes a total least-squares functional of the
//! first-order system (state `(u, p)`, coefficients `(sigma, mu)`) with mixed
//! L1/H1/box regularization by alternating between the two convex blocks.

pub mod cli;
pub mod dsm;
pub mod error;
pub mod experiments;
pub mod forward;
pub mod grid;
pub mod linalg;
pub mod model;
pub mod optimizer;
pub mod regularization;

pub use error::{Error, Result};
pub use forward::MeasurementSet;
pub use grid::{BoundaryData, FluxField, ScalarField, StaggeredGrid};
pub use model::{CoefficientPair, StatePair};
pub use regularization::RegConfig;
