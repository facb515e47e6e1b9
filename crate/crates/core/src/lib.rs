pub mod amplitude;
pub mod cascade;
pub mod error;
pub mod linalg;
pub mod model;
pub mod nlep;
pub mod ode;
pub mod outer;
pub mod pde;
pub mod pulse_ode;

pub use error::{Error, Result};
