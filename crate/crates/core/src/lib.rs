//! Numerical laboratory for co-rotating helical vortex filaments: filament
//! dynamics, exact helical equilibria, reduced energies and clustered solutions
//! of the divergence-form semilinear elliptic problem.

pub mod cluster;
pub mod coeff;
pub mod elliptic;
pub mod equilibria;
pub mod error;
pub mod kmd;
pub mod par;
pub mod reduced;
pub mod roots;

pub use error::{Error, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
