//! Vacuum Einstein constraint operator on discretised flat n-tori, its
//! linearisation and formal adjoint (the KID operator), Newton projection onto
//! the constraint fiber and detection of Killing initial data.

pub mod constraint;
pub mod curvature;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod grid;
pub mod jet;
pub mod kidops;
pub mod linop;
pub mod solve;
pub mod tensor;
pub mod verify;

pub use error::{ForgeError, Result};
pub use grid::{Grid, GridSpec};
pub use tensor::{Field, Rank3Field, Shape, SymField, TensorComponents, TensorField, VectorField};
