//! Forward solver, linearization ladder, CGO probes and boundary-data
//! reconstruction for the first-order mean field game system
//!
//! ```text
//! -u_t - Δu + |∇u|²/2 = F(x, m)      u(T) = G(m(T))
//!  m_t - Δm - div(m ∇u) = 0          m(0) = m0
//! ```
//!
//! posed on the unit-volume box Ω′ with Neumann walls and observed on an
//! inner box Ω.

pub mod analysis;
pub mod banded;
pub mod cgo;
pub mod costs;
pub mod error;
pub mod exec;
pub mod field;
pub mod forward;
pub mod grid;
pub mod inverse;
pub mod io;
pub mod krylov;
pub mod linearized;
pub mod ops;
pub mod scalar;

pub use error::{Error, Result};
pub use field::{ComplexField, FactoredField, Field};
pub use grid::{Axis, Grid, GridSpec, Region, SpaceGrid};
pub use scalar::Scalar;
