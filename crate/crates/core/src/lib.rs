//! Numerical machinery for the bulk energy of the two-dimensional
//! Ginzburg-Landau functional in the regime of applied fields between the
//! first and second critical field.

pub mod bulk;
pub mod cell;
pub mod error;
pub mod field;
pub mod gl;
pub mod lattice;
pub mod local;
pub mod optim;
pub mod radial;

pub use error::{FieldError, SolverError};
