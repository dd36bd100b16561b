//! Bulk-edge correspondence for finite-range chiral lattice Hamiltonians.
//!
//! Bulk models ([`model`]), band structure and gaps ([`spectrum`]), the
//! transfer (companion) matrix ([`companion`]), winding numbers ([`winding`]),
//! half-space edge modes ([`halfspace`]), the loop homotopies
//! ([`deform`]) and correspondence checks ([`verify`]).

pub mod banded;
pub mod companion;
pub mod deform;
pub mod ensemble;
pub mod error;
pub mod fixtures;
pub mod halfspace;
pub mod io;
pub mod linalg;
pub mod model;
pub mod spectrum;
pub mod tol;
pub mod verify;
pub mod winding;

pub use error::{Error, Result};
pub use model::{bloch_at, build_model, chiral_split, BlochSample, ChiralModel, ModelParams};
pub use tol::Tolerances;
