//! Numerical laboratory for subcritical catalytic branching random walks
//! on Z^d: integral-equation solvers, asymptotic constants and an exact
//! particle simulator.

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod lattice;
pub mod model;
pub mod montecarlo;
pub mod quad;
pub mod site;
pub mod verify;
pub mod volterra;

pub use error::{Error, Result};
pub use model::{CbrwModel, JumpKernel, OffspringLaw};
pub use quad::Estimate;
pub use site::Site;
