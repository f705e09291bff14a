//! Single-qubit tomography toolkit built around the squashed-tetrahedron
//! (ST) family of four-outcome POVMs.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adaptive;
pub mod bayes;
pub mod bounds;
pub mod error;
pub mod fitkit;
pub mod formats;
pub mod naimark;
pub mod noisekit;
pub mod par;
pub mod povm;
pub mod quadrature;
pub mod qstate;
pub mod rng;

pub use error::{Error, Result};
pub use qstate::{BlochVector, DensityMatrix, RotationSpec};
