//! Lagrangian-coordinate laboratory for conservative solutions of the
//! Camassa–Holm equation
//!
//! ```text
//! u_t − u_txx + 3u u_x − 2u_x u_xx − u u_xxx = 0.
//! ```
//!
//! The solver works with characteristics y(t, ξ), the velocity U = u∘y and
//! the energy density h of the measure μ in the label variable ξ, where
//! wave breaking is harmless: y_ξ touches zero while every component stays
//! bounded.

pub mod breaking;
pub mod coords;
pub mod cuspon;
pub mod dynamics;
pub mod error;
pub mod experiments;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod numeric;
pub mod profiles;

pub use error::{Error, Result};
