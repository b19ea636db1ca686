//! Semi-implicit projection BDF schemes for the Landau-Lifshitz-Gilbert
//! equation on cell-centered grids.

pub mod demag;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod krylov;
pub mod physics;
pub mod spectral;
pub mod stepper;
pub mod vec3;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Axis, Field, GridSpec, NormTriple, ScalarField, SpatialOrder, VectorField};
pub use vec3::Vec3;
