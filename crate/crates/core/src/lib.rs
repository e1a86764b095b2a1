//! Active rigid-particle suspensions in steady Stokes flow: cell problems,
//! effective viscosity tensors, dilute closed forms and two-scale solvers.

pub mod effective;
pub mod ensemble;
pub mod cli;
pub mod config;
pub mod correctors;
pub mod dilute;
pub mod error;
pub mod forcing;
pub mod solvers;
pub mod stokes;
pub mod tensor;
pub mod util;

pub use error::{Error, Result};
