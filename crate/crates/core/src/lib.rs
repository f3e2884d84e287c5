//! Controlled differential equations driven by Hölder paths of index above
//! one half: Young integration, the Doss–Sussmann solver, a direct
//! Young–Euler scheme, step relaxed controls with chattering, and
//! optimizers for the resulting control problems.

pub mod doss;
pub mod error;
pub mod experiment;
pub mod field;
pub mod fraccalc;
pub mod optim;
pub mod problems;
pub mod rde;
pub mod relaxed;
pub mod signal;
pub mod verify;
pub mod young;

pub use error::{Error, Result};
