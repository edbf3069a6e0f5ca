//! Closed-form, null-space constrained concept editing for cross-attention
//! key/value projections.

pub mod error;
pub mod attention_sim;
pub mod bundle;
pub mod cli;
pub mod debias;
pub mod edit_solvers;
pub mod harness;
pub mod linalg;

pub use error::{EditError, Result};
