//! Constructive ingredients of the clustered elliptic problem.

pub mod ansatz;
pub mod green;
pub mod grid;
pub mod operator;
pub mod profile;
pub mod solver;

pub use grid::{Grid, ScalarField};
pub use operator::Operator;
