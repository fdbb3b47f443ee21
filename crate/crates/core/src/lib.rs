//! Jump unravelings of time-local master equations weighted by an
//! influence martingale, with a deterministic master-equation oracle.

// `!(x > 0.0)` is used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod config;
pub mod ensemble;
pub mod error;
pub mod expr;
pub mod linalg;
pub mod master_eq;
pub mod model;
pub mod models;
pub mod trajectory;

pub use error::{Error, Result};
pub use linalg::{ComplexMatrix, ComplexVector, HermitianMatrix, SparseMatrix, C64};
pub use model::{Channel, Hamiltonian, RatePolicy, TimeLocalModel, TimeScalar};
