//! Simulation toolkit for cascaded two-photon emission from a ladder emitter
//! coupled to two lossy cavities.

pub mod cli;
pub mod corr;
pub mod dynamics;
pub mod error;
pub mod fitkit;
pub mod model;
pub mod ode;
pub mod liouville;
pub mod qspace;
pub mod scenario;
pub mod steady;
mod util;

pub use error::{Error, Result};
pub use util::{linspace, logspace};
